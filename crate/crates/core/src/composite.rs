//! Multi-date compositing and tile statistics.
//!
//! A pixel's admissible dates are those whose mask is clear and whose layer
//! holds a value. Pixels deforested before, or regrown on or after, January
//! 1st of the reference year are dropped outright. Masked observations never
//! reach any output.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::inference::HEIGHT_NODATA;
use crate::raster::{rsf_read, Raster, RasterData};

/// Percentile levels reported per tile and over the whole area.
pub const PERCENTILES: [f64; 7] = [2.5, 5.0, 25.0, 50.0, 75.0, 95.0, 97.5];
/// Nodata of observation-count rasters.
pub const COUNT_NODATA: f64 = -1.0;
pub const DEFAULT_REF_YEAR: i32 = 2020;

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationStack {
    pub quad_id: String,
    dates: Vec<NaiveDate>,
    layers: Vec<Raster>,
    masks: Vec<Raster>,
}

impl ObservationStack {
    /// `layers` are height maps in meters, `masks` are 1 where the date is
    /// cloudy or shaded (any non-zero value counts as masked).
    pub fn new(
        quad_id: impl Into<String>,
        dates: Vec<NaiveDate>,
        layers: Vec<Raster>,
        masks: Vec<Raster>,
    ) -> Result<Self> {
        if dates.is_empty() || dates.len() != layers.len() || dates.len() != masks.len() {
            return Err(Error::shape(format!(
                "stack needs one layer and one mask per date (dates {}, layers {}, masks {})",
                dates.len(),
                layers.len(),
                masks.len()
            )));
        }
        if !dates.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Invalid("stack dates must be strictly increasing".into()));
        }
        let first = &layers[0];
        for r in layers.iter().chain(&masks) {
            if !r.same_grid(first) || r.bands() != 1 {
                return Err(Error::shape(
                    "stack layers and masks must be single-band rasters on one grid",
                ));
            }
        }
        Ok(Self {
            quad_id: quad_id.into(),
            dates,
            layers,
            masks,
        })
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }
    pub fn layers(&self) -> &[Raster] {
        &self.layers
    }
    pub fn masks(&self) -> &[Raster] {
        &self.masks
    }
    pub fn width(&self) -> usize {
        self.layers[0].width()
    }
    pub fn height(&self) -> usize {
        self.layers[0].height()
    }
    pub fn grid(&self) -> &Raster {
        &self.layers[0]
    }

    /// Height of date `t` at `(col, row)` if that observation is usable:
    /// clear mask and a valid layer value.
    pub fn observation(&self, t: usize, col: usize, row: usize) -> Option<f64> {
        if self.masks[t].get(0, col, row) != 0.0 {
            return None;
        }
        self.layers[t].value(0, col, row)
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }
    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }
}

/// Per-pixel deforestation and regrowth dates.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelEventMap {
    width: usize,
    height: usize,
    deforestation: Vec<Option<NaiveDate>>,
    regrowth: Vec<Option<NaiveDate>>,
}

impl PixelEventMap {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            deforestation: vec![None; width * height],
            regrowth: vec![None; width * height],
        }
    }

    /// Records the events of one pixel; regrowth must follow deforestation.
    pub fn set(
        &mut self,
        col: usize,
        row: usize,
        deforestation: Option<NaiveDate>,
        regrowth: Option<NaiveDate>,
    ) -> Result<()> {
        if col >= self.width || row >= self.height {
            return Err(Error::Invalid(format!(
                "event pixel ({col}, {row}) outside {}x{}",
                self.width, self.height
            )));
        }
        if let (Some(d), Some(g)) = (deforestation, regrowth) {
            if g <= d {
                return Err(Error::Invalid(format!(
                    "pixel ({col}, {row}): regrowth {g} does not follow deforestation {d}"
                )));
            }
        }
        let i = row * self.width + col;
        self.deforestation[i] = deforestation;
        self.regrowth[i] = regrowth;
        Ok(())
    }

    pub fn get(&self, col: usize, row: usize) -> (Option<NaiveDate>, Option<NaiveDate>) {
        let i = row * self.width + col;
        (self.deforestation[i], self.regrowth[i])
    }

    /// Whether the pixel is dropped from compositing for `ref_year`.
    pub fn excludes(&self, col: usize, row: usize, ref_year: i32) -> bool {
        let start = NaiveDate::from_ymd_opt(ref_year, 1, 1).expect("valid year");
        let (d, g) = self.get(col, row);
        d.is_some_and(|d| d < start) || g.is_some_and(|g| g >= start)
    }

    /// CSV `col,row,deforestation_date,regrowth_date`, empty for none.
    pub fn read_csv<R: Read>(r: R, width: usize, height: usize) -> Result<Self> {
        let mut map = Self::empty(width, height);
        let mut rd = csv::Reader::from_reader(r);
        for (n, rec) in rd.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::format("events", format!("row {}: bad {what}", n + 1));
            if rec.len() != 4 {
                return Err(bad("field count"));
            }
            let date = |s: &str| -> Result<Option<NaiveDate>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    NaiveDate::parse_from_str(s, "%Y-%m-%d")
                        .map(Some)
                        .map_err(|_| bad("date"))
                }
            };
            let col = rec[0].parse().map_err(|_| bad("col"))?;
            let row = rec[1].parse().map_err(|_| bad("row"))?;
            map.set(col, row, date(&rec[2])?, date(&rec[3])?)?;
        }
        Ok(map)
    }
}

fn check_events(stack: &ObservationStack, events: Option<&PixelEventMap>) -> Result<()> {
    if let Some(e) = events {
        if (e.width, e.height) != (stack.width(), stack.height()) {
            return Err(Error::shape("event map and stack differ in size"));
        }
    }
    Ok(())
}

/// Admissible date indices of every pixel, row-major.
pub fn valid_layers(
    stack: &ObservationStack,
    events: Option<&PixelEventMap>,
    ref_year: i32,
) -> Result<Vec<Vec<usize>>> {
    check_events(stack, events)?;
    let (w, h) = (stack.width(), stack.height());
    let mut out = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            if events.is_some_and(|e| e.excludes(col, row, ref_year)) {
                out.push(Vec::new());
                continue;
            }
            out.push(
                (0..stack.len())
                    .filter(|&t| stack.observation(t, col, row).is_some())
                    .collect(),
            );
        }
    }
    Ok(out)
}

/// Per-pixel mean over admissible dates (f32 meters, nodata when there are
/// none) and the admissible-date count (i16).
pub fn temporal_mean(
    stack: &ObservationStack,
    events: Option<&PixelEventMap>,
    ref_year: i32,
) -> Result<(Raster, Raster)> {
    let admissible = valid_layers(stack, events, ref_year)?;
    let (w, h) = (stack.width(), stack.height());
    let mut mean = vec![HEIGHT_NODATA; w * h];
    let mut count = vec![0i16; w * h];
    for (i, dates) in admissible.iter().enumerate() {
        if dates.is_empty() {
            continue;
        }
        let (col, row) = (i % w, i / w);
        let sum: f64 = dates.iter().map(|&t| stack.observation(t, col, row).unwrap()).sum();
        mean[i] = (sum / dates.len() as f64) as f32;
        count[i] = i16::try_from(dates.len()).unwrap_or(i16::MAX);
    }
    let geo = *stack.grid().geo();
    Ok((
        Raster::new(w, h, 1, geo, HEIGHT_NODATA as f64, RasterData::F32(mean))?,
        Raster::new(w, h, 1, geo, COUNT_NODATA, RasterData::I16(count))?,
    ))
}

/// Which pixels of a mean map enter tile statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileRule {
    /// Minimum observation count, inclusive.
    pub min_count: u32,
    /// Heights must be strictly above this.
    pub min_height: f64,
}

impl TileRule {
    /// Per-tile maps: at least three observations, height above zero.
    pub const fn map() -> Self {
        Self {
            min_count: 3,
            min_height: 0.0,
        }
    }

    /// Area-wide weighted statistics: more than five observations and
    /// height above 5 m.
    pub const fn eq1() -> Self {
        Self {
            min_count: 6,
            min_height: 5.0,
        }
    }

    pub fn admits(&self, height: f64, count: f64) -> bool {
        count >= self.min_count as f64 && height > self.min_height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileStats {
    pub quad_id: String,
    /// `None` when no pixel contributes.
    pub mean_m: Option<f64>,
    /// Values at [`PERCENTILES`]; `None` when no pixel contributes.
    pub percentiles: Option<[f64; 7]>,
    pub valid_observations: u64,
}

/// Nearest-rank percentile of sorted values: the value at rank
/// `ceil(p/100 · n)`, at least 1. The median (`p = 50`) of an even count
/// is the mean of the two middle values instead.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "nearest_rank of an empty slice");
    if p == 50.0 && n.is_multiple_of(2) {
        return 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
    }
    let rank = ((p * n as f64) / 100.0 - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[rank - 1]
}

/// Statistics over the pixels of one tile admitted by `rule`.
pub fn tile_stats(quad_id: &str, mean: &Raster, count: &Raster, rule: TileRule) -> Result<TileStats> {
    if !mean.same_grid(count) {
        return Err(Error::shape("mean and count maps must share a grid"));
    }
    let mut v: Vec<f64> = mean
        .band_values(0)
        .into_iter()
        .zip(count.band_values(0))
        .filter_map(|(h, c)| match (h, c) {
            (Some(h), Some(c)) if rule.admits(h, c) => Some(h),
            _ => None,
        })
        .collect();
    if v.is_empty() {
        return Ok(TileStats {
            quad_id: quad_id.to_string(),
            mean_m: None,
            percentiles: None,
            valid_observations: 0,
        });
    }
    let mean_m = v.iter().sum::<f64>() / v.len() as f64;
    v.sort_by(f64::total_cmp);
    Ok(TileStats {
        quad_id: quad_id.to_string(),
        mean_m: Some(mean_m),
        percentiles: Some(PERCENTILES.map(|p| nearest_rank(&v, p))),
        valid_observations: v.len() as u64,
    })
}

/// One tile's inputs for [`tile_stats_batch`].
pub struct TileInput {
    pub quad_id: String,
    pub mean: Raster,
    pub count: Raster,
}

/// [`tile_stats`] for many tiles, in parallel when enabled. Output order
/// follows the input.
pub fn tile_stats_batch(tiles: &[TileInput], rule: TileRule) -> Result<Vec<TileStats>> {
    crate::par::map_ordered(tiles, |t| tile_stats(&t.quad_id, &t.mean, &t.count, rule))
        .into_iter()
        .collect()
}

/// Tiles with weight, sorted by quad id so the reduction order is fixed.
fn weighted_tiles(tiles: &[TileStats]) -> Result<Vec<&TileStats>> {
    let mut t: Vec<&TileStats> = tiles.iter().filter(|t| t.valid_observations > 0).collect();
    if t.is_empty() {
        return Err(Error::Empty("every tile has zero valid observations".into()));
    }
    t.sort_by(|a, b| a.quad_id.cmp(&b.quad_id));
    Ok(t)
}

/// `Σ mean_i · n_i / Σ n_i` over tiles, where `n_i` is the tile's valid
/// observation count. Build the tiles with [`TileRule::eq1`] for the
/// area-wide statistic.
pub fn weighted_mean_eq1(tiles: &[TileStats]) -> Result<f64> {
    let t = weighted_tiles(tiles)?;
    let (mut num, mut den) = (0.0, 0.0);
    for tile in t {
        let n = tile.valid_observations as f64;
        num += tile.mean_m.expect("weighted tile has a mean") * n;
        den += n;
    }
    Ok(num / den)
}

/// Weighted nearest-rank over tiles for each requested level: tile values
/// at `p` sorted ascending, the first whose cumulative weight reaches
/// `p/100` of the total. Each `p` must be one of [`PERCENTILES`].
pub fn weighted_percentile(tiles: &[TileStats], ps: &[f64]) -> Result<Vec<f64>> {
    let t = weighted_tiles(tiles)?;
    let total: u64 = t.iter().map(|x| x.valid_observations).sum();
    ps.iter()
        .map(|&p| {
            let k = PERCENTILES
                .iter()
                .position(|&q| q == p)
                .ok_or_else(|| Error::Invalid(format!("percentile {p} is not tracked per tile")))?;
            let mut vals: Vec<(f64, u64)> = t
                .iter()
                .map(|x| {
                    (
                        x.percentiles.expect("weighted tile has percentiles")[k],
                        x.valid_observations,
                    )
                })
                .collect();
            vals.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut cum = 0u64;
            for (v, w) in &vals {
                cum += w;
                if cum as f64 * 100.0 >= p * total as f64 {
                    return Ok(*v);
                }
            }
            Ok(vals.last().unwrap().0)
        })
        .collect()
}

/// One row of a stack manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct StackRow {
    pub date: NaiveDate,
    pub layer: PathBuf,
    pub mask: PathBuf,
}

/// Stack manifest CSV `date,layer_path,mask_path`, paths relative to the
/// manifest.
pub fn read_stack_manifest<R: Read>(r: R) -> Result<Vec<StackRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (n, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::format("stack", format!("row {}: expected 3 fields", n + 1)));
        }
        let date = NaiveDate::parse_from_str(&rec[0], "%Y-%m-%d")
            .map_err(|_| Error::format("stack", format!("row {}: bad date `{}`", n + 1, &rec[0])))?;
        out.push(StackRow {
            date,
            layer: rec[1].into(),
            mask: rec[2].into(),
        });
    }
    Ok(out)
}

/// Loads every layer and mask named by a stack manifest.
pub fn load_stack(quad_id: &str, manifest: &Path) -> Result<ObservationStack> {
    let f = std::fs::File::open(manifest).map_err(|e| Error::file(manifest, e))?;
    let rows = read_stack_manifest(f)?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let (mut dates, mut layers, mut masks) = (Vec::new(), Vec::new(), Vec::new());
    for row in rows {
        dates.push(row.date);
        layers.push(rsf_read(base.join(&row.layer))?);
        masks.push(rsf_read(base.join(&row.mask))?);
    }
    ObservationStack::new(quad_id, dates, layers, masks)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `quad_id,valid_obs,mean_m,p2_5,p5,p25,p50,p75,p95,p97_5`.
pub fn write_stats_csv<W: Write>(tiles: &[TileStats], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "quad_id",
        "valid_obs",
        "mean_m",
        "p2_5",
        "p5",
        "p25",
        "p50",
        "p75",
        "p95",
        "p97_5",
    ])?;
    for t in tiles {
        let mut rec = vec![t.quad_id.clone(), t.valid_observations.to_string(), opt(t.mean_m)];
        for k in 0..PERCENTILES.len() {
            rec.push(opt(t.percentiles.map(|p| p[k])));
        }
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_stats_csv<R: Read>(r: R) -> Result<Vec<TileStats>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (n, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad = || Error::format("stats", format!("row {}: malformed", n + 1));
        if rec.len() != 10 {
            return Err(bad());
        }
        let num = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad())
            }
        };
        let mut ps = [0.0; 7];
        let mut missing = false;
        for k in 0..7 {
            match num(&rec[3 + k])? {
                Some(v) => ps[k] = v,
                None => missing = true,
            }
        }
        out.push(TileStats {
            quad_id: rec[0].to_string(),
            valid_observations: rec[1].parse().map_err(|_| bad())?,
            mean_m: num(&rec[2])?,
            percentiles: (!missing).then_some(ps),
        });
    }
    Ok(out)
}

/// Area-wide summary rows labelled like a descriptive statistics table.
pub fn area_summary(tiles: &[TileStats]) -> Result<Vec<(String, f64)>> {
    let mean = weighted_mean_eq1(tiles)?;
    let ps = weighted_percentile(tiles, &PERCENTILES)?;
    let mut rows = vec![("Mean".to_string(), mean)];
    for (p, v) in PERCENTILES.iter().zip(ps) {
        let label = if *p == 50.0 {
            "Median, Percentile 50".to_string()
        } else {
            format!("Percentile {p}")
        };
        rows.push((label, v));
    }
    Ok(rows)
}

/// `metric,value_m` rows of [`area_summary`].
pub fn write_summary_csv<W: Write>(rows: &[(String, f64)], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["metric", "value_m"])?;
    for (k, v) in rows {
        wr.write_record([k.clone(), v.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}
