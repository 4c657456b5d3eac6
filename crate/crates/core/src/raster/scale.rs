//! Radiometric and height quantization rules.

use super::{DType, Raster, RasterData};
use crate::error::{Error, Result};

/// CHM rasters store `round(height_m * CHM_SCALE)` in 8 bits.
pub const CHM_SCALE: f64 = 2.5;

const RGB_CAP: f64 = 2540.0;
const NIR_DIVISOR: f64 = 3.937;

/// Convert 4-band (Red, Green, Blue, NIR) 12-bit digital numbers to 8 bits.
///
/// RGB values are capped at 2540 and NIR is divided by 3.937 (then capped),
/// after which every band is divided by 10 and truncated.
pub fn scale_nicfi(raw: &Raster) -> Result<Raster> {
    if raw.bands() != 4 {
        return Err(Error::shape(format!(
            "expected 4 bands (R, G, B, NIR), got {}",
            raw.bands()
        )));
    }
    let n = raw.band_len();
    let mut out = vec![0u8; n * 4];
    for band in 0..4 {
        for i in 0..n {
            let dn = raw.data().get(band * n + i).max(0.0);
            let v = if band == 3 { dn / NIR_DIVISOR } else { dn };
            out[band * n + i] = (v.min(RGB_CAP) / 10.0).floor() as u8;
        }
    }
    raw.with_data(0.0, RasterData::U8(out))
}

pub fn scale_chm_u8(h: f64) -> Result<u8> {
    if !(h >= 0.0) {
        return Err(Error::Domain(format!("canopy height must be >= 0, got {h}")));
    }
    Ok(DType::U8.quantize((h * CHM_SCALE).min(255.0)) as u8)
}

pub fn unscale_chm(v: u8) -> f64 {
    v as f64 / CHM_SCALE
}
