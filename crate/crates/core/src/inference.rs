//! Whole-quad prediction with mirrored borders.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::nn::{image_tensor, UNet};
use crate::par::map_ordered;
use crate::raster::{crop_border, mirror_pad, rsf_read, rsf_write, Raster, RasterData};

/// Border removed from each side of a prediction.
pub const DEFAULT_BORDER: usize = 64;
/// Nodata of height maps.
pub const HEIGHT_NODATA: f32 = -9999.0;

/// Heights in meters for a 4-band u8 quad.
///
/// The quad is mirror-padded by `border` pixels, run through the network in
/// one pass, cropped back to the input grid and scaled from fractions to
/// meters.
pub fn predict_quad(model: &UNet<f32>, quad: &Raster, border: usize) -> Result<Raster> {
    let cfg = model.config();
    if quad.bands() != cfg.in_channels {
        return Err(Error::shape(format!(
            "quad has {} bands, the model expects {}",
            quad.bands(),
            cfg.in_channels
        )));
    }
    let (pw, ph) = (quad.width() + 2 * border, quad.height() + 2 * border);
    let m = cfg.size_multiple();
    if pw % m != 0 || ph % m != 0 {
        return Err(Error::shape(format!(
            "padded size {pw}x{ph} is not a multiple of {m}; choose a border so that size + 2*border is divisible by {m}"
        )));
    }
    let padded = mirror_pad(quad, border)?;
    let pred = model.forward(&image_tensor::<f32>(&padded))?;
    let heights: Vec<f32> = pred.into_vec().into_iter().map(|p| p * 100.0).collect();
    let full = Raster::new(pw, ph, 1, *padded.geo(), HEIGHT_NODATA as f64, RasterData::F32(heights))?;
    crop_border(&full, border)
}

/// One quad of a prediction run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuadJob {
    pub quad_id: String,
    pub image_path: PathBuf,
}

/// Outcome of one quad: height statistics or the error message.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadSummary {
    pub quad_id: String,
    pub result: std::result::Result<(f64, f64, f64), String>,
    pub output: Option<PathBuf>,
}

/// Quad manifest CSV: `quad_id,image_path`.
pub fn read_quad_manifest<R: Read>(r: R) -> Result<Vec<QuadJob>> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != ["quad_id", "image_path"] {
        return Err(Error::format("header", "expected `quad_id,image_path`"));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        out.push(QuadJob {
            quad_id: rec[0].to_string(),
            image_path: PathBuf::from(&rec[1]),
        });
    }
    Ok(out)
}

fn min_max_mean(r: &Raster) -> (f64, f64, f64) {
    let (mut lo, mut hi, mut sum, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for v in r.band_values(0).into_iter().flatten() {
        lo = lo.min(v);
        hi = hi.max(v);
        sum += v;
        n += 1;
    }
    if n == 0 {
        (f64::NAN, f64::NAN, f64::NAN)
    } else {
        (lo, hi, sum / n as f64)
    }
}

/// Predicts every quad of `jobs`, writing `<quad_id>_height.rsf` into
/// `out_dir`. A failing quad is reported in its summary row and the run
/// goes on. Relative image paths resolve against `base`.
pub fn predict_batch(
    model: &UNet<f32>,
    jobs: &[QuadJob],
    base: &Path,
    out_dir: &Path,
    border: usize,
) -> Vec<QuadSummary> {
    map_ordered(jobs, |job| {
        let run = || -> Result<((f64, f64, f64), PathBuf)> {
            let quad = rsf_read(base.join(&job.image_path))?;
            let h = predict_quad(model, &quad, border)?;
            let out = out_dir.join(format!("{}_height.rsf", job.quad_id));
            rsf_write(&h, &out)?;
            Ok((min_max_mean(&h), out))
        };
        match run() {
            Ok((stats, out)) => QuadSummary {
                quad_id: job.quad_id.clone(),
                result: Ok(stats),
                output: Some(out),
            },
            Err(e) => {
                log::warn!("quad {}: {e}", job.quad_id);
                QuadSummary {
                    quad_id: job.quad_id.clone(),
                    result: Err(e.to_string()),
                    output: None,
                }
            }
        }
    })
}

/// `quad_id,status,min_m,max_m,mean_m`; failed quads have status
/// `error: <message>` and empty statistics.
pub fn write_summary_csv<W: Write>(rows: &[QuadSummary], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["quad_id", "status", "min_m", "max_m", "mean_m"])?;
    for r in rows {
        match &r.result {
            Ok((lo, hi, mean)) => wr.write_record([
                r.quad_id.clone(),
                "ok".into(),
                lo.to_string(),
                hi.to_string(),
                mean.to_string(),
            ])?,
            Err(msg) => wr.write_record([
                r.quad_id.clone(),
                format!("error: {msg}"),
                String::new(),
                String::new(),
                String::new(),
            ])?,
        }
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::UNetConfig;
    use crate::raster::{DType, GeoTransform};

    fn quad(n: usize, v: f64) -> Raster {
        Raster::filled(
            n,
            n,
            4,
            DType::U8,
            GeoTransform::new(100.0, 200.0, 4.78, 3857).unwrap(),
            0.0,
            v,
        )
        .unwrap()
    }

    #[test]
    fn zero_head_gives_fifty_meters() {
        let mut m = UNet::<f32>::new(UNetConfig::new(2, 2), 3).unwrap();
        let head = m.layers_mut().last_mut().unwrap();
        head.weight.iter_mut().for_each(|w| *w = 0.0);
        head.bias.iter_mut().for_each(|b| *b = 0.0);
        let q = quad(24, 90.0);
        let h = predict_quad(&m, &q, 4).unwrap();
        assert!(h.band_f64(0).iter().all(|&v| v == 50.0));
        assert_eq!(h.geo(), q.geo());
        assert_eq!((h.width(), h.height()), (24, 24));
    }

    #[test]
    fn constant_quad_gives_constant_map() {
        let cfg = UNetConfig::new(2, 3);
        assert_eq!(cfg.receptive_radius(), 29);
        let m = UNet::<f32>::new(cfg, 8).unwrap();
        let h = predict_quad(&m, &quad(64, 120.0), 32).unwrap();
        let v = h.band_f64(0);
        assert!(v.iter().all(|&x| x == v[0]));
        assert!((0.0..=100.0).contains(&v[0]));
    }

    #[test]
    fn incompatible_border() {
        let m = UNet::<f32>::new(UNetConfig::new(2, 2), 3).unwrap();
        let err = predict_quad(&m, &quad(24, 1.0), 3).unwrap_err().to_string();
        assert!(err.contains("multiple of 4"), "{err}");
    }
}
