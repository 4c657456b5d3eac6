//! RSF raster files.
//!
//! Little-endian layout:
//!
//! ```text
//! magic "RSF1" | width u32 | height u32 | bands u32 | dtype u8
//! | origin_x f64 | origin_y f64 | pixel_size f64 | nodata f64 | epsg u32
//! | band-sequential row-major payload
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DType, GeoTransform, Raster, RasterData};
use crate::error::{Error, Result};

pub const RSF_MAGIC: &[u8; 4] = b"RSF1";
pub const RSF_HEADER_LEN: usize = 53;

/// Serialize to a writer, returning the number of bytes written.
pub fn write_rsf<W: Write>(r: &Raster, mut w: W) -> Result<u64> {
    let mut header = Vec::with_capacity(RSF_HEADER_LEN);
    header.extend_from_slice(RSF_MAGIC);
    header.extend_from_slice(&(r.width() as u32).to_le_bytes());
    header.extend_from_slice(&(r.height() as u32).to_le_bytes());
    header.extend_from_slice(&(r.bands() as u32).to_le_bytes());
    header.push(r.dtype().code());
    let g = r.geo();
    header.extend_from_slice(&g.origin_x.to_le_bytes());
    header.extend_from_slice(&g.origin_y.to_le_bytes());
    header.extend_from_slice(&g.pixel_size.to_le_bytes());
    header.extend_from_slice(&r.nodata().to_le_bytes());
    header.extend_from_slice(&g.epsg.to_le_bytes());
    debug_assert_eq!(header.len(), RSF_HEADER_LEN);
    w.write_all(&header)?;

    let payload: Vec<u8> = match r.data() {
        RasterData::U8(v) => v.clone(),
        RasterData::I16(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        RasterData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
    };
    w.write_all(&payload)?;
    w.flush()?;
    Ok((RSF_HEADER_LEN + payload.len()) as u64)
}

pub fn read_rsf<R: Read>(mut rd: R) -> Result<Raster> {
    let mut header = [0u8; RSF_HEADER_LEN];
    read_exact_or(&mut rd, &mut header, "header")?;
    if &header[0..4] != RSF_MAGIC {
        return Err(Error::format(
            "magic",
            format!("expected RSF1, found {:?}", &header[0..4]),
        ));
    }
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
    let f64_at = |o: usize| f64::from_le_bytes(header[o..o + 8].try_into().unwrap());

    let width = u32_at(4) as usize;
    let height = u32_at(8) as usize;
    let bands = u32_at(12) as usize;
    let dtype =
        DType::from_code(header[16]).ok_or_else(|| Error::format("dtype", format!("unknown code {}", header[16])))?;
    let origin_x = f64_at(17);
    let origin_y = f64_at(25);
    let pixel_size = f64_at(33);
    let nodata = f64_at(41);
    let epsg = u32_at(49);

    for (name, v) in [("width", width), ("height", height), ("bands", bands)] {
        if v == 0 {
            return Err(Error::format(name, "must be non-zero"));
        }
    }
    let geo = GeoTransform::new(origin_x, origin_y, pixel_size, epsg)
        .map_err(|e| Error::format("pixel_size", e.to_string()))?;

    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(bands))
        .ok_or_else(|| Error::format("width", "dimensions overflow"))?;
    let mut payload = vec![0u8; n * dtype.size()];
    read_exact_or(&mut rd, &mut payload, "payload")?;

    let data = match dtype {
        DType::U8 => RasterData::U8(payload),
        DType::I16 => RasterData::I16(
            payload
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]))
                .collect(),
        ),
        DType::F32 => RasterData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
    };
    Raster::new(width, height, bands, geo, nodata, data).map_err(|e| match e {
        Error::Domain(msg) => Error::format("nodata", msg),
        other => other,
    })
}

fn read_exact_or<R: Read>(rd: &mut R, buf: &mut [u8], field: &'static str) -> Result<()> {
    rd.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(field, "truncated"),
        _ => Error::Io(e),
    })
}

pub fn rsf_write(r: &Raster, path: impl AsRef<Path>) -> Result<u64> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::file(path, e))?;
    write_rsf(r, BufWriter::new(f))
}

pub fn rsf_read(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::file(path, e))?;
    read_rsf(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dtype: DType) -> Raster {
        let geo = GeoTransform::new(10.0, 20.0, 1.0, 31983).unwrap();
        let data = match dtype {
            DType::U8 => RasterData::U8(vec![1, 2, 3, 4]),
            DType::I16 => RasterData::I16(vec![-1, 2, -3, 4]),
            DType::F32 => RasterData::F32(vec![0.5, -0.0, 3.25, 1e-30]),
        };
        Raster::new(2, 2, 1, geo, 0.0, data).unwrap()
    }

    #[test]
    fn byte_counts() {
        let mut buf = Vec::new();
        assert_eq!(write_rsf(&small(DType::U8), &mut buf).unwrap(), 57);
        assert_eq!(buf.len(), 57);
        let mut buf = Vec::new();
        assert_eq!(write_rsf(&small(DType::F32), &mut buf).unwrap(), 69);
        assert_eq!(buf.len(), 69);
    }

    #[test]
    fn round_trip_each_dtype() {
        for dt in [DType::U8, DType::I16, DType::F32] {
            let r = small(dt);
            let mut buf = Vec::new();
            write_rsf(&r, &mut buf).unwrap();
            assert_eq!(read_rsf(&buf[..]).unwrap(), r);
        }
    }

    #[test]
    fn bad_magic() {
        let mut buf = Vec::new();
        write_rsf(&small(DType::U8), &mut buf).unwrap();
        buf[3] = b'2';
        match read_rsf(&buf[..]).unwrap_err() {
            Error::Format { field, .. } => assert_eq!(field, "magic"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_dtype() {
        let mut buf = Vec::new();
        write_rsf(&small(DType::U8), &mut buf).unwrap();
        buf[16] = 3;
        match read_rsf(&buf[..]).unwrap_err() {
            Error::Format { field, .. } => assert_eq!(field, "dtype"),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn truncated_payload() {
        let mut buf = Vec::new();
        write_rsf(&small(DType::F32), &mut buf).unwrap();
        buf.truncate(60);
        match read_rsf(&buf[..]).unwrap_err() {
            Error::Format { field, .. } => assert_eq!(field, "payload"),
            e => panic!("unexpected {e}"),
        }
        match read_rsf(&buf[..10]).unwrap_err() {
            Error::Format { field, .. } => assert_eq!(field, "header"),
            e => panic!("unexpected {e}"),
        }
    }
}
