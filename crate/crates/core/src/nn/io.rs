//! UNW weight files and training history CSV.
//!
//! Little-endian layout: magic `UNW1`, config as four u32 (depth, base
//! channels, input channels, output channels), then for every parameter
//! tensor: name length u16, UTF-8 name, rank u8, rank × u32 dims, f32
//! payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::tensor::Scalar;
use super::train::EpochRecord;
use super::unet::{UNet, UNetConfig};
use crate::error::{Error, Result};

pub const UNW_MAGIC: &[u8; 4] = b"UNW1";

pub fn write_unw<T: Scalar, W: Write>(model: &UNet<T>, mut w: W) -> Result<u64> {
    let cfg = model.config();
    let mut buf = Vec::new();
    buf.extend_from_slice(UNW_MAGIC);
    for v in [cfg.depth, cfg.base_channels, cfg.in_channels, cfg.out_channels] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for conv in model.layers() {
        let wdims = [conv.out_ch, conv.in_ch, conv.kernel, conv.kernel];
        let tensors: [(String, &[usize], &[T]); 2] = [
            (format!("{}.weight", conv.name), &wdims, &conv.weight),
            (format!("{}.bias", conv.name), &[conv.out_ch], &conv.bias),
        ];
        for (name, dims, values) in tensors {
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            buf.push(dims.len() as u8);
            for &d in dims {
                buf.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in values {
                buf.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
            }
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(buf.len() as u64)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::format(field, "truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self, field: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }
}

pub fn read_unw<T: Scalar, R: Read>(mut r: R) -> Result<UNet<T>> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0 };
    if cur.take(4, "magic")? != UNW_MAGIC {
        return Err(Error::format("magic", "expected UNW1"));
    }
    let cfg = UNetConfig {
        depth: cur.u32("depth")? as usize,
        base_channels: cur.u32("base")? as usize,
        in_channels: cur.u32("in")? as usize,
        out_channels: cur.u32("out")? as usize,
    };
    let mut model = UNet::<T>::zeros(cfg).map_err(|e| Error::format("config", e.to_string()))?;
    for conv in model.layers_mut() {
        let wdims = vec![conv.out_ch, conv.in_ch, conv.kernel, conv.kernel];
        let bdims = vec![conv.out_ch];
        for (suffix, dims, dst) in [("weight", wdims, &mut conv.weight), ("bias", bdims, &mut conv.bias)] {
            let expected = format!("{}.{suffix}", conv.name);
            let n = u16::from_le_bytes(cur.take(2, "name")?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(cur.take(n, "name")?).map_err(|_| Error::format("name", "not UTF-8"))?;
            if name != expected {
                return Err(Error::format("name", format!("expected `{expected}`, found `{name}`")));
            }
            let rank = cur.take(1, "rank")?[0] as usize;
            let mut got = Vec::with_capacity(rank);
            for _ in 0..rank {
                got.push(cur.u32("dims")? as usize);
            }
            if got != dims {
                return Err(Error::format(
                    "dims",
                    format!("`{name}`: expected {dims:?}, found {got:?}"),
                ));
            }
            let payload = cur.take(dst.len() * 4, "payload")?;
            for (d, c) in dst.iter_mut().zip(payload.chunks_exact(4)) {
                let v = f32::from_le_bytes(c.try_into().unwrap());
                if !v.is_finite() {
                    return Err(Error::format("payload", format!("`{name}` holds a non-finite value")));
                }
                *d = T::from_f64(v as f64);
            }
        }
    }
    if cur.pos != buf.len() {
        return Err(Error::format("payload", "trailing bytes after the last tensor"));
    }
    Ok(model)
}

pub fn unw_write<T: Scalar>(model: &UNet<T>, path: impl AsRef<Path>) -> Result<u64> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::file(path, e))?;
    write_unw(model, BufWriter::new(f))
}

pub fn unw_read<T: Scalar>(path: impl AsRef<Path>) -> Result<UNet<T>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::file(path, e))?;
    read_unw(BufReader::new(f))
}

/// `epoch,train_loss,val_loss,val_mae_m`; missing validation values are
/// written as empty fields.
pub fn write_history_csv<W: Write>(history: &[EpochRecord], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["epoch", "train_loss", "val_loss", "val_mae_m"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in history {
        wr.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            opt(r.val_loss),
            opt(r.val_mae_m),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
