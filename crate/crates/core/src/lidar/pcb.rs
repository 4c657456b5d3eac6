//! PCB point files.
//!
//! Little-endian: magic `PCB1`, count u64, then per point x f64, y f64,
//! z f64 and a class byte (0 unclassified, 1 ground, 7 noise).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Point, PointClass, PointCloud};
use crate::error::{Error, Result};

pub const PCB_MAGIC: &[u8; 4] = b"PCB1";
const RECORD: usize = 25;

pub fn write_pcb<W: Write>(pc: &PointCloud, mut w: W) -> Result<u64> {
    let mut buf = Vec::with_capacity(12 + pc.len() * RECORD);
    buf.extend_from_slice(PCB_MAGIC);
    buf.extend_from_slice(&(pc.len() as u64).to_le_bytes());
    for p in &pc.points {
        for v in [p.x, p.y, p.z] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        buf.push(p.class.code());
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(buf.len() as u64)
}

pub fn read_pcb<R: Read>(mut r: R) -> Result<PointCloud> {
    let mut head = [0u8; 12];
    r.read_exact(&mut head)
        .map_err(|_| Error::format("header", "file shorter than 12 bytes"))?;
    if &head[..4] != PCB_MAGIC {
        return Err(Error::format("magic", "expected PCB1"));
    }
    let count = u64::from_le_bytes(head[4..12].try_into().unwrap());
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    let expected = usize::try_from(count)
        .ok()
        .and_then(|c| c.checked_mul(RECORD))
        .ok_or_else(|| Error::format("count", format!("{count} points is too many")))?;
    if body.len() != expected {
        return Err(Error::format(
            "payload",
            format!("{count} points need {expected} bytes, found {}", body.len()),
        ));
    }
    let f = |b: &[u8]| f64::from_le_bytes(b.try_into().unwrap());
    let mut points = Vec::with_capacity(count as usize);
    for (i, rec) in body.chunks_exact(RECORD).enumerate() {
        let class = PointClass::from_code(rec[24])
            .ok_or_else(|| Error::format("class", format!("point {i} has unknown class {}", rec[24])))?;
        points.push(Point {
            x: f(&rec[0..8]),
            y: f(&rec[8..16]),
            z: f(&rec[16..24]),
            class,
        });
    }
    PointCloud::new(points)
}

pub fn pcb_write(pc: &PointCloud, path: impl AsRef<Path>) -> Result<u64> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::file(path, e))?;
    write_pcb(pc, BufWriter::new(f))
}

pub fn pcb_read(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::file(path, e))?;
    read_pcb(BufReader::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut pts = vec![Point::new(1.5, -2.0, 300.25), Point::new(0.0, 0.0, 0.0)];
        pts[1].class = PointClass::Noise;
        let pc = PointCloud::new(pts).unwrap();
        let mut buf = Vec::new();
        assert_eq!(write_pcb(&pc, &mut buf).unwrap(), 12 + 2 * 25);
        assert_eq!(read_pcb(&buf[..]).unwrap(), pc);
    }

    #[test]
    fn errors_name_the_field() {
        let pc = PointCloud::new(vec![Point::new(1.0, 2.0, 3.0)]).unwrap();
        let mut buf = Vec::new();
        write_pcb(&pc, &mut buf).unwrap();
        let field = |b: &[u8]| match read_pcb(b) {
            Err(Error::Format { field, .. }) => field,
            other => panic!("{other:?}"),
        };
        assert_eq!(field(&buf[..buf.len() - 1]), "payload");
        let mut bad = buf.clone();
        bad[36] = 3;
        assert_eq!(field(&bad), "class");
        bad[0] = b'Q';
        assert_eq!(field(&bad), "magic");
        assert_eq!(field(&buf[..5]), "header");
    }
}
