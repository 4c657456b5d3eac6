//! Georeferenced raster container and the grid operations the pipeline is
//! built on.
//!
//! A [`Raster`] is band-sequential, row-major, and carries a north-up
//! [`GeoTransform`] with square pixels. Nodata is a sentinel value stored in
//! the raster's own dtype; float rasters never hold NaN.

mod io;
mod ops;
mod scale;

pub use io::{read_rsf, rsf_read, rsf_write, write_rsf, RSF_HEADER_LEN, RSF_MAGIC};
pub use ops::{crop_border, mirror_pad, reflect_101, resample_to_grid, retile, Reducer};
pub use scale::{scale_chm_u8, scale_nicfi, unscale_chm, CHM_SCALE};

use crate::error::{Error, Result};

/// North-up affine grid definition with square pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeoTransform {
    /// Easting of the top-left corner.
    pub origin_x: f64,
    /// Northing of the top-left corner.
    pub origin_y: f64,
    pub pixel_size: f64,
    pub epsg: u32,
}

impl GeoTransform {
    pub fn new(origin_x: f64, origin_y: f64, pixel_size: f64, epsg: u32) -> Result<Self> {
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return Err(Error::Domain(format!(
                "pixel size must be positive and finite, got {pixel_size}"
            )));
        }
        if !origin_x.is_finite() || !origin_y.is_finite() {
            return Err(Error::Domain("origin must be finite".into()));
        }
        Ok(Self {
            origin_x,
            origin_y,
            pixel_size,
            epsg,
        })
    }

    /// Map coordinates of the center of pixel `(col, row)`.
    pub fn pixel_center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.pixel_size,
            self.origin_y - (row as f64 + 0.5) * self.pixel_size,
        )
    }

    /// Fractional pixel coordinates of a map point; the inverse of
    /// [`pixel_center`](Self::pixel_center) up to the half-pixel offset.
    pub fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin_x) / self.pixel_size,
            (self.origin_y - y) / self.pixel_size,
        )
    }

    /// Pixel containing a map point, if it falls on the non-negative side of
    /// the origin. Bounds against a raster size are the caller's business.
    pub fn pixel_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let (c, r) = self.to_pixel(x, y);
        let (c, r) = (c.floor(), r.floor());
        if c < 0.0 || r < 0.0 || !c.is_finite() || !r.is_finite() {
            return None;
        }
        Some((c as usize, r as usize))
    }

    /// The same grid shifted by a whole number of pixels.
    pub fn offset(&self, dcol: f64, drow: f64) -> Self {
        Self {
            origin_x: self.origin_x + dcol * self.pixel_size,
            origin_y: self.origin_y - drow * self.pixel_size,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum DType {
    U8 = 0,
    I16 = 1,
    F32 = 2,
}

impl DType {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DType::U8),
            1 => Some(DType::I16),
            2 => Some(DType::F32),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::I16 => 2,
            DType::F32 => 4,
        }
    }

    pub fn is_integer(self) -> bool {
        !matches!(self, DType::F32)
    }

    /// Convert a computed value to this dtype: integers round half away
    /// from zero and saturate.
    pub fn quantize(self, v: f64) -> f64 {
        match self {
            DType::U8 => v.round().clamp(0.0, u8::MAX as f64),
            DType::I16 => v.round().clamp(i16::MIN as f64, i16::MAX as f64),
            DType::F32 => v as f32 as f64,
        }
    }

    fn in_range(self, v: f64) -> bool {
        match self {
            DType::U8 => (0.0..=255.0).contains(&v),
            DType::I16 => (i16::MIN as f64..=i16::MAX as f64).contains(&v),
            DType::F32 => v.is_finite() && (v as f32).is_finite(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum RasterData {
    U8(Vec<u8>),
    I16(Vec<i16>),
    F32(Vec<f32>),
}

impl RasterData {
    pub fn zeros(dtype: DType, len: usize) -> Self {
        match dtype {
            DType::U8 => RasterData::U8(vec![0; len]),
            DType::I16 => RasterData::I16(vec![0; len]),
            DType::F32 => RasterData::F32(vec![0.0; len]),
        }
    }

    pub fn dtype(&self) -> DType {
        match self {
            RasterData::U8(_) => DType::U8,
            RasterData::I16(_) => DType::I16,
            RasterData::F32(_) => DType::F32,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            RasterData::U8(v) => v.len(),
            RasterData::I16(v) => v.len(),
            RasterData::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> f64 {
        match self {
            RasterData::U8(v) => v[i] as f64,
            RasterData::I16(v) => v[i] as f64,
            RasterData::F32(v) => v[i] as f64,
        }
    }

    /// Stores `v` after quantizing to the element type.
    #[inline]
    pub fn set(&mut self, i: usize, v: f64) {
        match self {
            RasterData::U8(d) => d[i] = DType::U8.quantize(v) as u8,
            RasterData::I16(d) => d[i] = DType::I16.quantize(v) as i16,
            RasterData::F32(d) => d[i] = v as f32,
        }
    }

    fn bit_eq(&self, other: &Self) -> bool {
        match (self, other) {
            (RasterData::U8(a), RasterData::U8(b)) => a == b,
            (RasterData::I16(a), RasterData::I16(b)) => a == b,
            (RasterData::F32(a), RasterData::F32(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}

/// Rectangular pixel window inside a parent raster.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub col0: usize,
    pub row0: usize,
    pub n_cols: usize,
    pub n_rows: usize,
}

impl Window {
    pub fn new(col0: usize, row0: usize, n_cols: usize, n_rows: usize) -> Self {
        Self {
            col0,
            row0,
            n_cols,
            n_rows,
        }
    }

    /// Clip to a `width × height` parent. `None` when nothing remains.
    pub fn clip(&self, width: usize, height: usize) -> Option<Window> {
        if self.col0 >= width || self.row0 >= height {
            return None;
        }
        let n_cols = self.n_cols.min(width - self.col0);
        let n_rows = self.n_rows.min(height - self.row0);
        (n_cols > 0 && n_rows > 0).then_some(Window {
            n_cols,
            n_rows,
            ..*self
        })
    }
}

#[derive(Debug, Clone)]
pub struct Raster {
    width: usize,
    height: usize,
    bands: usize,
    geo: GeoTransform,
    nodata: f64,
    data: RasterData,
}

/// Bitwise equality: every header field and every payload element.
impl PartialEq for Raster {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.bands == other.bands
            && self.geo.origin_x.to_bits() == other.geo.origin_x.to_bits()
            && self.geo.origin_y.to_bits() == other.geo.origin_y.to_bits()
            && self.geo.pixel_size.to_bits() == other.geo.pixel_size.to_bits()
            && self.geo.epsg == other.geo.epsg
            && self.nodata.to_bits() == other.nodata.to_bits()
            && self.data.bit_eq(&other.data)
    }
}

impl Raster {
    pub fn new(
        width: usize,
        height: usize,
        bands: usize,
        geo: GeoTransform,
        nodata: f64,
        data: RasterData,
    ) -> Result<Self> {
        if width == 0 || height == 0 || bands == 0 {
            return Err(Error::shape(format!(
                "raster dimensions must be non-zero, got {width}x{height}x{bands}"
            )));
        }
        let expected = width * height * bands;
        if data.len() != expected {
            return Err(Error::shape(format!(
                "payload holds {} values, expected {expected}",
                data.len()
            )));
        }
        if !data.dtype().in_range(nodata) {
            return Err(Error::Domain(format!(
                "nodata {nodata} is not representable as {:?}",
                data.dtype()
            )));
        }
        if let RasterData::F32(v) = &data {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Domain("float raster contains non-finite values".into()));
            }
        }
        Ok(Self {
            width,
            height,
            bands,
            geo,
            nodata,
            data,
        })
    }

    /// A raster with every value set to `fill`.
    pub fn filled(
        width: usize,
        height: usize,
        bands: usize,
        dtype: DType,
        geo: GeoTransform,
        nodata: f64,
        fill: f64,
    ) -> Result<Self> {
        let mut data = RasterData::zeros(dtype, width * height * bands);
        if fill != 0.0 {
            for i in 0..data.len() {
                data.set(i, fill);
            }
        }
        Self::new(width, height, bands, geo, nodata, data)
    }

    /// Single-band f32 raster from values; NaN entries become `nodata`.
    pub fn from_f32(width: usize, height: usize, geo: GeoTransform, nodata: f32, mut values: Vec<f32>) -> Result<Self> {
        for v in values.iter_mut() {
            if v.is_nan() {
                *v = nodata;
            }
        }
        Self::new(width, height, 1, geo, nodata as f64, RasterData::F32(values))
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn bands(&self) -> usize {
        self.bands
    }
    pub fn geo(&self) -> &GeoTransform {
        &self.geo
    }
    pub fn nodata(&self) -> f64 {
        self.nodata
    }
    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }
    pub fn data(&self) -> &RasterData {
        &self.data
    }
    pub fn into_data(self) -> RasterData {
        self.data
    }

    /// Pixels per band.
    pub fn band_len(&self) -> usize {
        self.width * self.height
    }

    pub fn same_grid(&self, other: &Raster) -> bool {
        self.width == other.width && self.height == other.height && self.geo == other.geo
    }

    #[inline]
    pub fn index(&self, band: usize, col: usize, row: usize) -> usize {
        debug_assert!(band < self.bands && col < self.width && row < self.height);
        (band * self.height + row) * self.width + col
    }

    #[inline]
    pub fn get(&self, band: usize, col: usize, row: usize) -> f64 {
        self.data.get(self.index(band, col, row))
    }

    /// Value at `(col,row)` unless it is nodata.
    #[inline]
    pub fn value(&self, band: usize, col: usize, row: usize) -> Option<f64> {
        let v = self.get(band, col, row);
        (!self.is_nodata(v)).then_some(v)
    }

    #[inline]
    pub fn set(&mut self, band: usize, col: usize, row: usize, v: f64) {
        let i = self.index(band, col, row);
        self.data.set(i, v);
    }

    #[inline]
    pub fn is_nodata(&self, v: f64) -> bool {
        v == self.nodata
    }

    /// One band as f64, nodata left as the sentinel.
    pub fn band_f64(&self, band: usize) -> Vec<f64> {
        let n = self.band_len();
        (band * n..(band + 1) * n).map(|i| self.data.get(i)).collect()
    }

    /// One band as optional values, `None` for nodata.
    pub fn band_values(&self, band: usize) -> Vec<Option<f64>> {
        let n = self.band_len();
        (band * n..(band + 1) * n)
            .map(|i| {
                let v = self.data.get(i);
                (!self.is_nodata(v)).then_some(v)
            })
            .collect()
    }

    /// Copy of a window; the window is clipped to the raster first.
    pub fn window(&self, w: Window) -> Result<Raster> {
        let w = w
            .clip(self.width, self.height)
            .ok_or_else(|| Error::shape("window lies outside the raster"))?;
        let mut data = RasterData::zeros(self.dtype(), w.n_cols * w.n_rows * self.bands);
        let mut k = 0;
        for b in 0..self.bands {
            for r in 0..w.n_rows {
                for c in 0..w.n_cols {
                    data.set(k, self.get(b, w.col0 + c, w.row0 + r));
                    k += 1;
                }
            }
        }
        Raster::new(
            w.n_cols,
            w.n_rows,
            self.bands,
            self.geo.offset(w.col0 as f64, w.row0 as f64),
            self.nodata,
            data,
        )
    }

    /// Write `src` into this raster with its top-left at `(col0,row0)`.
    pub fn paste(&mut self, src: &Raster, col0: usize, row0: usize) -> Result<()> {
        if src.bands != self.bands || col0 + src.width > self.width || row0 + src.height > self.height {
            return Err(Error::shape("pasted raster does not fit"));
        }
        for b in 0..self.bands {
            for r in 0..src.height {
                for c in 0..src.width {
                    self.set(b, col0 + c, row0 + r, src.get(b, c, r));
                }
            }
        }
        Ok(())
    }

    /// Apply `f` to every non-nodata value; nodata is preserved.
    pub fn map_valid(&self, dtype: DType, nodata: f64, f: impl Fn(f64) -> f64) -> Result<Raster> {
        let mut data = RasterData::zeros(dtype, self.data.len());
        for i in 0..self.data.len() {
            let v = self.data.get(i);
            data.set(i, if self.is_nodata(v) { nodata } else { f(v) });
        }
        Raster::new(self.width, self.height, self.bands, self.geo, nodata, data)
    }

    /// Same grid and bands, new dtype/nodata/payload.
    pub fn with_data(&self, nodata: f64, data: RasterData) -> Result<Raster> {
        Raster::new(self.width, self.height, self.bands, self.geo, nodata, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geo() -> GeoTransform {
        GeoTransform::new(500_000.0, 9_000_000.0, 4.78, 32721).unwrap()
    }

    #[test]
    fn pixel_center_mapping() {
        let g = geo();
        let (x, y) = g.pixel_center(3, 7);
        assert_eq!(x, 500_000.0 + 3.5 * 4.78);
        assert_eq!(y, 9_000_000.0 - 7.5 * 4.78);
        let (c, r) = g.to_pixel(x, y);
        assert!((c - 3.5).abs() < 1e-9 && (r - 7.5).abs() < 1e-9);
        assert_eq!(g.pixel_of(x, y), Some((3, 7)));
    }

    #[test]
    fn rejects_non_positive_pixel_size() {
        assert!(GeoTransform::new(0.0, 0.0, 0.0, 4326).is_err());
        assert!(GeoTransform::new(0.0, 0.0, -1.0, 4326).is_err());
    }

    #[test]
    fn rejects_wrong_payload_length() {
        let err = Raster::new(2, 2, 1, geo(), 0.0, RasterData::U8(vec![0; 3])).unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn rejects_nan_payload() {
        let data = RasterData::F32(vec![0.0, f32::NAN, 1.0, 2.0]);
        assert!(Raster::new(2, 2, 1, geo(), -9999.0, data).is_err());
    }

    #[test]
    fn window_is_clipped_and_georeferenced() {
        let vals: Vec<u8> = (0..16).collect();
        let r = Raster::new(4, 4, 1, geo(), 255.0, RasterData::U8(vals)).unwrap();
        let w = r.window(Window::new(2, 3, 5, 5)).unwrap();
        assert_eq!((w.width(), w.height()), (2, 1));
        assert_eq!(w.band_f64(0), vec![14.0, 15.0]);
        assert_eq!(w.geo().origin_x, geo().origin_x + 2.0 * 4.78);
        assert_eq!(w.geo().origin_y, geo().origin_y - 3.0 * 4.78);
        assert!(r.window(Window::new(4, 0, 1, 1)).is_err());
    }

    #[test]
    fn quantize_rounds_half_away_from_zero() {
        assert_eq!(DType::U8.quantize(3.5), 4.0);
        assert_eq!(DType::U8.quantize(2.5), 3.0);
        assert_eq!(DType::I16.quantize(-2.5), -3.0);
        assert_eq!(DType::U8.quantize(300.0), 255.0);
    }
}
