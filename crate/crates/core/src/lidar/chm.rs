use crate::error::{Error, Result};
use crate::raster::{scale_chm_u8, Raster, RasterData};

/// Nodata of u8 canopy height rasters. Stored heights saturate one step
/// below it, at 254 (101.6 m).
pub const CHM_NODATA: u8 = 255;

/// `max(dsm − dtm, 0)` scaled by 2.5 into u8; nodata where either input is.
pub fn compute_chm(dsm: &Raster, dtm: &Raster) -> Result<Raster> {
    if !dsm.same_grid(dtm) || dsm.bands() != 1 || dtm.bands() != 1 {
        return Err(Error::shape("DSM and DTM must be single-band rasters on the same grid"));
    }
    let mut out = Vec::with_capacity(dsm.band_len());
    for (s, t) in dsm.band_values(0).into_iter().zip(dtm.band_values(0)) {
        out.push(match (s, t) {
            (Some(s), Some(t)) => scale_chm_u8((s - t).max(0.0))?.min(CHM_NODATA - 1),
            _ => CHM_NODATA,
        });
    }
    Raster::new(
        dsm.width(),
        dsm.height(),
        1,
        *dsm.geo(),
        CHM_NODATA as f64,
        RasterData::U8(out),
    )
}
