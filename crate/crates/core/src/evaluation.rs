//! Agreement between predicted and observed height maps.

use std::io::Write;

use crate::composite::nearest_rank;
use crate::error::{Error, Result};
use crate::raster::{GeoTransform, Raster, RasterData};

/// Width of the observed-height bins for binned medians, in meters.
pub const AGREEMENT_BIN_M: f64 = 5.0;

/// Predicted and observed maps of one validation area.
#[derive(Debug, Clone)]
pub struct AreaPair {
    pub area_id: String,
    pub pred: Raster,
    pub obs: Raster,
    /// Non-zero marks pixels left out of every metric.
    pub mask: Option<Raster>,
}

impl AreaPair {
    pub fn new(area_id: impl Into<String>, pred: Raster, obs: Raster, mask: Option<Raster>) -> Result<Self> {
        if !pred.same_grid(&obs) || mask.as_ref().is_some_and(|m| !m.same_grid(&pred)) {
            return Err(Error::shape("area rasters must share one grid"));
        }
        if pred.bands() != 1 || obs.bands() != 1 {
            return Err(Error::shape("area rasters must have one band"));
        }
        Ok(Self {
            area_id: area_id.into(),
            pred,
            obs,
            mask,
        })
    }

    /// `(obs, pred)` of pixels valid in both maps and not masked.
    pub fn values(&self) -> Vec<(f64, f64)> {
        let p = self.pred.band_values(0);
        let o = self.obs.band_values(0);
        (0..p.len())
            .filter(|&i| self.mask.as_ref().is_none_or(|m| m.data().get(i) == 0.0))
            .filter_map(|i| Some((o[i]?, p[i]?)))
            .collect()
    }
}

/// Mean absolute difference over every valid pixel of every area.
pub fn mae(pairs: &[AreaPair]) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for a in pairs {
        for (o, p) in a.values() {
            sum += (p - o).abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("no valid pixels to compare".into()));
    }
    Ok(sum / n as f64)
}

/// Joint counts of observed (rows) and predicted (columns) heights.
#[derive(Debug, Clone, PartialEq)]
pub struct Hist2d {
    pub bin: f64,
    pub n_bins: usize,
    /// Row-major, `counts[i * n_bins + j]` for obs bin `i`, pred bin `j`.
    pub counts: Vec<u64>,
}

impl Hist2d {
    pub fn get(&self, obs_bin: usize, pred_bin: usize) -> u64 {
        self.counts[obs_bin * self.n_bins + pred_bin]
    }
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
    pub fn obs_totals(&self) -> Vec<u64> {
        self.counts.chunks(self.n_bins).map(|r| r.iter().sum()).collect()
    }
    pub fn pred_totals(&self) -> Vec<u64> {
        (0..self.n_bins)
            .map(|j| (0..self.n_bins).map(|i| self.get(i, j)).sum())
            .collect()
    }

    /// Counts as an f32 raster with observed height increasing upward and
    /// predicted height to the right.
    pub fn to_raster(&self) -> Result<Raster> {
        let n = self.n_bins;
        let mut v = vec![0f32; n * n];
        for i in 0..n {
            for j in 0..n {
                v[(n - 1 - i) * n + j] = self.get(i, j) as f32;
            }
        }
        let geo = GeoTransform::new(0.0, self.bin * n as f64, self.bin, 0)?;
        Raster::new(n, n, 1, geo, -1.0, RasterData::F32(v))
    }

    /// Binary PGM with log-scaled counts, dark for dense cells.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.n_bins;
        let peak = (self.counts.iter().copied().max().unwrap_or(0) as f64).ln_1p();
        write!(w, "P5\n{n} {n}\n255\n")?;
        let mut px = Vec::with_capacity(n * n);
        for i in (0..n).rev() {
            for j in 0..n {
                let c = (self.get(i, j) as f64).ln_1p();
                let shade = if peak > 0.0 { 255.0 * (1.0 - c / peak) } else { 255.0 };
                px.push(shade.round() as u8);
            }
        }
        w.write_all(&px)?;
        Ok(())
    }
}

/// Joint histogram on `[0, max)` with `bin`-wide cells; values outside
/// the range land in the edge bins.
pub fn density_hist2d(pairs: &[AreaPair], bin: f64, max: f64) -> Result<Hist2d> {
    if !(bin > 0.0 && max > 0.0 && bin.is_finite() && max.is_finite()) {
        return Err(Error::Domain(format!("bin {bin} and range {max} must be positive")));
    }
    let n = (max / bin).ceil() as usize;
    let idx = |v: f64| ((v / bin).floor().max(0.0) as usize).min(n - 1);
    let mut counts = vec![0u64; n * n];
    for a in pairs {
        for (o, p) in a.values() {
            counts[idx(o) * n + idx(p)] += 1;
        }
    }
    Ok(Hist2d { bin, n_bins: n, counts })
}

/// Pearson correlation, `None` with fewer than two points or a constant
/// variable. Computed from unit-normalized deviations as `1 − |u − v|²/2`
/// (or its mirror for negative correlation), which keeps exactly affine
/// data at exactly ±1.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let unit = |v: &[f64]| -> Option<Vec<f64>> {
        let m = v.iter().sum::<f64>() / n as f64;
        let d: Vec<f64> = v.iter().map(|x| x - m).collect();
        let norm = d.iter().map(|x| x * x).sum::<f64>().sqrt();
        (norm > 0.0).then(|| d.into_iter().map(|x| x / norm).collect())
    };
    let (u, v) = (unit(xs)?, unit(ys)?);
    let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
    let r = if dot >= 0.0 {
        1.0 - 0.5 * u.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
    } else {
        0.5 * u.iter().zip(&v).map(|(a, b)| (a + b) * (a + b)).sum::<f64>() - 1.0
    };
    Some(r.clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AreaPercentile {
    pub area_id: String,
    pub p: f64,
    pub obs_m: f64,
    pub pred_m: f64,
}

/// Predicted heights of the areas whose observed percentile falls in one
/// 5 m bin.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedMedian {
    pub p: f64,
    pub bin_lo_m: f64,
    pub n: usize,
    pub median_m: f64,
    pub q2_5_m: f64,
    pub q97_5_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agreement {
    pub per_area: Vec<AreaPercentile>,
    /// Pearson ρ across areas for each requested percentile.
    pub rho: Vec<(f64, Option<f64>)>,
    pub binned: Vec<BinnedMedian>,
}

/// Per-area nearest-rank percentiles of observed and predicted heights,
/// their correlation across areas, and binned medians of the predicted
/// percentile by observed percentile. Areas without valid pixels are
/// skipped; areas are taken in ascending id order.
pub fn area_percentile_agreement(pairs: &[AreaPair], ps: &[f64]) -> Result<Agreement> {
    if let Some(p) = ps.iter().find(|p| !(0.0..=100.0).contains(*p)) {
        return Err(Error::Domain(format!("percentile {p} outside [0, 100]")));
    }
    let mut areas: Vec<&AreaPair> = pairs.iter().collect();
    areas.sort_by(|a, b| a.area_id.cmp(&b.area_id));
    let sorted: Vec<(&str, Vec<f64>, Vec<f64>)> = crate::par::map_ordered(&areas, |a| {
        let vals = a.values();
        let mut o: Vec<f64> = vals.iter().map(|x| x.0).collect();
        let mut p: Vec<f64> = vals.iter().map(|x| x.1).collect();
        o.sort_by(f64::total_cmp);
        p.sort_by(f64::total_cmp);
        (a.area_id.as_str(), o, p)
    })
    .into_iter()
    .filter(|x| !x.1.is_empty())
    .collect();

    let mut per_area = Vec::new();
    let mut rho = Vec::new();
    let mut binned = Vec::new();
    for &p in ps {
        let pts: Vec<(f64, f64)> = sorted
            .iter()
            .map(|(_, o, q)| (nearest_rank(o, p), nearest_rank(q, p)))
            .collect();
        for ((id, _, _), (o, q)) in sorted.iter().zip(&pts) {
            per_area.push(AreaPercentile {
                area_id: id.to_string(),
                p,
                obs_m: *o,
                pred_m: *q,
            });
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
        rho.push((p, pearson(&xs, &ys)));
        binned.extend(binned_medians(&pts, p));
    }
    Ok(Agreement { per_area, rho, binned })
}

fn binned_medians(pts: &[(f64, f64)], p: f64) -> Vec<BinnedMedian> {
    let mut bins: std::collections::BTreeMap<i64, Vec<f64>> = Default::default();
    for &(o, q) in pts {
        bins.entry((o / AGREEMENT_BIN_M).floor() as i64).or_default().push(q);
    }
    bins.into_iter()
        .map(|(k, mut v)| {
            v.sort_by(f64::total_cmp);
            BinnedMedian {
                p,
                bin_lo_m: k as f64 * AGREEMENT_BIN_M,
                n: v.len(),
                median_m: nearest_rank(&v, 50.0),
                q2_5_m: nearest_rank(&v, 2.5),
                q97_5_m: nearest_rank(&v, 97.5),
            }
        })
        .collect()
}

/// Density histogram of valid heights, bins aligned to multiples of `bin`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub bin: f64,
    pub lo: f64,
    pub density: Vec<f64>,
}

impl Histogram {
    /// Σ density · bin, which is 1 up to rounding.
    pub fn integral(&self) -> f64 {
        self.density.iter().sum::<f64>() * self.bin
    }
}

/// Histogram of the valid pixels of every map.
pub fn height_histogram(maps: &[&Raster], bin: f64) -> Result<Histogram> {
    let vals: Vec<f64> = maps.iter().flat_map(|m| m.band_values(0)).flatten().collect();
    value_histogram(&vals, bin)
}

pub fn value_histogram(vals: &[f64], bin: f64) -> Result<Histogram> {
    if !(bin > 0.0 && bin.is_finite()) {
        return Err(Error::Domain(format!("bin must be positive, got {bin}")));
    }
    if vals.is_empty() {
        return Err(Error::Empty("no valid pixels for histogram".into()));
    }
    let key = |v: f64| (v / bin).floor() as i64;
    let kmin = vals.iter().map(|&v| key(v)).min().unwrap();
    let kmax = vals.iter().map(|&v| key(v)).max().unwrap();
    let mut counts = vec![0u64; (kmax - kmin + 1) as usize];
    for &v in vals {
        counts[(key(v) - kmin) as usize] += 1;
    }
    let scale = 1.0 / (vals.len() as f64 * bin);
    Ok(Histogram {
        bin,
        lo: kmin as f64 * bin,
        density: counts.into_iter().map(|c| c as f64 * scale).collect(),
    })
}

/// `metric,value`.
pub fn write_metrics_csv<W: Write>(rows: &[(&str, Option<f64>)], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["metric", "value"])?;
    for (k, v) in rows {
        wr.write_record([k.to_string(), v.map(|x| x.to_string()).unwrap_or_default()])?;
    }
    wr.flush()?;
    Ok(())
}

/// `area_id,p,obs_m,pred_m`.
pub fn write_area_csv<W: Write>(rows: &[AreaPercentile], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["area_id", "p", "obs_m", "pred_m"])?;
    for r in rows {
        wr.write_record([
            r.area_id.clone(),
            r.p.to_string(),
            r.obs_m.to_string(),
            r.pred_m.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// `p,bin_lo_m,bin_hi_m,n,median_m,q2_5_m,q97_5_m`.
pub fn write_binned_csv<W: Write>(rows: &[BinnedMedian], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["p", "bin_lo_m", "bin_hi_m", "n", "median_m", "q2_5_m", "q97_5_m"])?;
    for r in rows {
        wr.write_record([
            r.p.to_string(),
            r.bin_lo_m.to_string(),
            (r.bin_lo_m + AGREEMENT_BIN_M).to_string(),
            r.n.to_string(),
            r.median_m.to_string(),
            r.q2_5_m.to_string(),
            r.q97_5_m.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// `bin_lo_m,density`.
pub fn write_histogram_csv<W: Write>(h: &Histogram, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["bin_lo_m", "density"])?;
    for (k, d) in h.density.iter().enumerate() {
        wr.write_record([(h.lo + k as f64 * h.bin).to_string(), d.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}
