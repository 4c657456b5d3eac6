use super::{GeoTransform, Raster, RasterData, Window};
use crate::error::{Error, Result};

/// Aggregation applied to the source pixels that fall in a destination pixel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reducer {
    Median,
    Min,
    Mean,
    /// Source pixel containing the destination pixel center.
    Nearest,
}

impl std::str::FromStr for Reducer {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "median" => Ok(Reducer::Median),
            "min" => Ok(Reducer::Min),
            "mean" => Ok(Reducer::Mean),
            "nearest" => Ok(Reducer::Nearest),
            _ => Err(Error::Invalid(format!("unknown reducer `{s}`"))),
        }
    }
}

/// Median of a non-empty slice; even counts average the two middle values.
pub(crate) fn median_in_place(v: &mut [f64]) -> f64 {
    debug_assert!(!v.is_empty());
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Source index range `[lo, hi)` whose centers fall in `[start, end)` along
/// one axis, where `coord(i) = (i + 0.5)` in source pixel units.
fn center_range(start: f64, end: f64, n: usize) -> (usize, usize) {
    let lo = (start - 0.5).ceil().max(0.0);
    let hi = (end - 0.5).ceil().max(0.0);
    (lo.min(n as f64) as usize, hi.min(n as f64) as usize)
}

/// Aggregate `src` onto a destination grid.
///
/// A source pixel contributes to the destination pixel whose footprint
/// contains its center. Nodata sources are skipped; destination pixels
/// without contributors become nodata. Integer outputs round half away from
/// zero.
pub fn resample_to_grid(
    src: &Raster,
    dst_geo: GeoTransform,
    dst_w: usize,
    dst_h: usize,
    reducer: Reducer,
) -> Result<Raster> {
    let sg = *src.geo();
    if sg.epsg != dst_geo.epsg {
        return Err(Error::CrsMismatch {
            src: sg.epsg,
            dst: dst_geo.epsg,
        });
    }
    let dtype = src.dtype();
    let nodata = src.nodata();
    let mut data = RasterData::zeros(dtype, dst_w * dst_h * src.bands());
    let mut scratch = Vec::new();
    let dps = dst_geo.pixel_size;
    let sps = sg.pixel_size;

    for band in 0..src.bands() {
        for r in 0..dst_h {
            let top = dst_geo.origin_y - r as f64 * dps;
            let (r0, r1) = center_range(
                (sg.origin_y - top) / sps,
                (sg.origin_y - (top - dps)) / sps,
                src.height(),
            );
            for c in 0..dst_w {
                let left = dst_geo.origin_x + c as f64 * dps;
                let out_idx = (band * dst_h + r) * dst_w + c;
                let value = if reducer == Reducer::Nearest {
                    let (cx, cy) = dst_geo.pixel_center(c, r);
                    sg.pixel_of(cx, cy)
                        .filter(|&(sc, sr)| sc < src.width() && sr < src.height())
                        .and_then(|(sc, sr)| src.value(band, sc, sr))
                } else {
                    let (c0, c1) = center_range(
                        (left - sg.origin_x) / sps,
                        (left + dps - sg.origin_x) / sps,
                        src.width(),
                    );
                    scratch.clear();
                    for sr in r0..r1 {
                        for sc in c0..c1 {
                            if let Some(v) = src.value(band, sc, sr) {
                                scratch.push(v);
                            }
                        }
                    }
                    (!scratch.is_empty()).then(|| match reducer {
                        Reducer::Median => median_in_place(&mut scratch),
                        Reducer::Min => scratch.iter().copied().fold(f64::INFINITY, f64::min),
                        Reducer::Mean => scratch.iter().sum::<f64>() / scratch.len() as f64,
                        Reducer::Nearest => unreachable!(),
                    })
                };
                data.set(out_idx, value.map_or(nodata, |v| dtype.quantize(v)));
            }
        }
    }
    Raster::new(dst_w, dst_h, src.bands(), dst_geo, nodata, data)
}

/// Row-major tiling. Edge tiles keep their partial size.
pub fn retile(src: &Raster, tile: usize) -> Result<Vec<(usize, Raster)>> {
    if tile == 0 {
        return Err(Error::Invalid("tile size must be >= 1".into()));
    }
    let tiles_x = src.width().div_ceil(tile);
    let tiles_y = src.height().div_ceil(tile);
    let mut out = Vec::with_capacity(tiles_x * tiles_y);
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let w = Window::new(tx * tile, ty * tile, tile, tile);
            out.push((ty * tiles_x + tx, src.window(w)?));
        }
    }
    Ok(out)
}

/// Reflect an out-of-range index about the edge pixel without repeating it:
/// `-1 -> 1`, `n -> n-2`. Valid for offsets smaller than `n`.
#[inline]
pub fn reflect_101(i: isize, n: usize) -> usize {
    let n = n as isize;
    let j = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    debug_assert!((0..n).contains(&j));
    j as usize
}

/// Reflect-101 padding by `b` pixels on every side.
pub fn mirror_pad(src: &Raster, b: usize) -> Result<Raster> {
    let (w, h) = (src.width(), src.height());
    if b >= w.min(h) {
        return Err(Error::Invalid(format!(
            "pad width {b} must be smaller than the raster ({w}x{h})"
        )));
    }
    let (pw, ph) = (w + 2 * b, h + 2 * b);
    let mut data = RasterData::zeros(src.dtype(), pw * ph * src.bands());
    let mut k = 0;
    for band in 0..src.bands() {
        for r in 0..ph {
            let sr = reflect_101(r as isize - b as isize, h);
            for c in 0..pw {
                let sc = reflect_101(c as isize - b as isize, w);
                data.set(k, src.get(band, sc, sr));
                k += 1;
            }
        }
    }
    Raster::new(
        pw,
        ph,
        src.bands(),
        src.geo().offset(-(b as f64), -(b as f64)),
        src.nodata(),
        data,
    )
}

/// Remove `b` pixels from every side.
pub fn crop_border(src: &Raster, b: usize) -> Result<Raster> {
    let (w, h) = (src.width(), src.height());
    if w <= 2 * b || h <= 2 * b {
        return Err(Error::Invalid(format!("cannot crop {b} pixels from a {w}x{h} raster")));
    }
    src.window(Window::new(b, b, w - 2 * b, h - 2 * b))
}
