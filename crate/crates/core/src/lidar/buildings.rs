//! Building footprint masking.
//!
//! Polygon files hold one polygon per line: `city` or `out`, a tab, then
//! `x y` vertex pairs separated by `;`, with the first vertex repeated at
//! the end. Blank lines and lines starting with `#` are skipped.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::Raster;

#[derive(Debug, Clone, PartialEq)]
pub struct BuildingPolygon {
    /// Closed exterior ring (first vertex equals last).
    pub ring: Vec<(f64, f64)>,
    pub in_city: bool,
}

impl BuildingPolygon {
    pub fn new(ring: Vec<(f64, f64)>, in_city: bool) -> Result<Self> {
        if ring.len() < 4 || ring.first() != ring.last() {
            return Err(Error::Invalid(format!(
                "polygon ring must be closed with at least 4 vertices, got {}",
                ring.len()
            )));
        }
        if ring.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::Domain("polygon vertex is not finite".into()));
        }
        Ok(Self { ring, in_city })
    }

    /// Even-odd point-in-polygon test.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let mut inside = false;
        for w in self.ring.windows(2) {
            let ((x1, y1), (x2, y2)) = (w[0], w[1]);
            if (y1 > y) != (y2 > y) && x < x1 + (y - y1) * (x2 - x1) / (y2 - y1) {
                inside = !inside;
            }
        }
        inside
    }

    /// Distance to the polygon: 0 inside, else the distance to the nearest
    /// edge.
    pub fn distance(&self, x: f64, y: f64) -> f64 {
        if self.contains(x, y) {
            return 0.0;
        }
        self.ring
            .windows(2)
            .map(|w| segment_distance((x, y), w[0], w[1]))
            .fold(f64::INFINITY, f64::min)
    }

    fn bbox(&self) -> (f64, f64, f64, f64) {
        self.ring.iter().fold(
            (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY),
            |b, &(x, y)| (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y)),
        )
    }
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    (p.0 - (a.0 + t * dx)).hypot(p.1 - (a.1 + t * dy))
}

/// Buffer distances in map units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferParams {
    pub outside_city: f64,
    pub in_city: f64,
}

impl Default for BufferParams {
    fn default() -> Self {
        Self {
            outside_city: 5.0,
            in_city: 15.0,
        }
    }
}

/// Sets to 0 every valid pixel whose center lies within the buffer distance
/// of a building polygon. Nodata pixels stay nodata.
pub fn mask_buildings(chm: &Raster, polys: &[BuildingPolygon], buffers: BufferParams) -> Result<Raster> {
    let mut out = chm.clone();
    let g = *chm.geo();
    for poly in polys {
        let buffer = if poly.in_city {
            buffers.in_city
        } else {
            buffers.outside_city
        };
        let (x0, y0, x1, y1) = poly.bbox();
        let (c0, r0) = g.to_pixel(x0 - buffer, y1 + buffer);
        let (c1, r1) = g.to_pixel(x1 + buffer, y0 - buffer);
        let c_lo = (c0 - 0.5).ceil().max(0.0) as usize;
        let r_lo = (r0 - 0.5).ceil().max(0.0) as usize;
        let c_hi = ((c1 - 0.5).floor()).min(chm.width() as f64 - 1.0);
        let r_hi = ((r1 - 0.5).floor()).min(chm.height() as f64 - 1.0);
        if c_hi < 0.0 || r_hi < 0.0 {
            continue;
        }
        for r in r_lo..=r_hi as usize {
            for c in c_lo..=c_hi as usize {
                let (x, y) = g.pixel_center(c, r);
                if poly.distance(x, y) <= buffer {
                    for b in 0..chm.bands() {
                        if out.value(b, c, r).is_some() {
                            out.set(b, c, r, 0.0);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn read_polygons(path: impl AsRef<Path>) -> Result<Vec<BuildingPolygon>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_polygons(&text)
}

pub fn parse_polygons(text: &str) -> Result<Vec<BuildingPolygon>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: String| Error::format("polygon", format!("line {}: {msg}", n + 1));
        let (kind, coords) = line
            .split_once('\t')
            .ok_or_else(|| bad("missing tab after city|out".into()))?;
        let in_city = match kind.trim() {
            "city" => true,
            "out" => false,
            other => return Err(bad(format!("expected `city` or `out`, found `{other}`"))),
        };
        let mut ring = Vec::new();
        for pair in coords.split(';') {
            let mut it = pair.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(x)), Some(Ok(y)), None) => ring.push((x, y)),
                _ => return Err(bad(format!("bad vertex `{}`", pair.trim()))),
            }
        }
        out.push(BuildingPolygon::new(ring, in_city).map_err(|e| bad(e.to_string()))?);
    }
    Ok(out)
}

pub fn write_polygons(polys: &[BuildingPolygon]) -> String {
    let mut s = String::new();
    for p in polys {
        s.push_str(if p.in_city { "city\t" } else { "out\t" });
        let verts: Vec<String> = p.ring.iter().map(|(x, y)| format!("{x} {y}")).collect();
        s.push_str(&verts.join(";"));
        s.push('\n');
    }
    s
}
