//! Delaunay triangulated irregular networks and their rasterization.

use spade::{DelaunayTriangulation, HasPosition, Point2, Triangulation};

use super::{PixelGrid, PointCloud};
use crate::error::{Error, Result};
use crate::raster::Raster;

/// Nodata of the f32 elevation rasters (DTM and DSM).
pub const DEM_NODATA: f32 = -9999.0;

#[derive(Debug, Clone, Copy)]
struct Vertex {
    x: f64,
    y: f64,
    z: f64,
}

impl HasPosition for Vertex {
    type Scalar = f64;
    fn position(&self) -> Point2<f64> {
        Point2::new(self.x, self.y)
    }
}

/// Triangles of a Delaunay triangulation with per-vertex elevations.
#[derive(Debug, Clone, PartialEq)]
pub struct Tin {
    triangles: Vec<[[f64; 3]; 3]>,
}

impl Tin {
    /// Triangulates `(x, y, z)` samples. Samples sharing a position keep the
    /// lowest z. Fails with fewer than three distinct positions or when all
    /// of them are collinear.
    pub fn build(samples: &[[f64; 3]]) -> Result<Self> {
        let mut pts: Vec<[f64; 3]> = samples.to_vec();
        pts.sort_by(|a, b| {
            a[0].total_cmp(&b[0])
                .then(a[1].total_cmp(&b[1]))
                .then(a[2].total_cmp(&b[2]))
        });
        pts.dedup_by(|b, a| a[0] == b[0] && a[1] == b[1]);
        if pts.len() < 3 {
            return Err(Error::Domain(format!(
                "triangulation needs at least 3 distinct points, got {}",
                pts.len()
            )));
        }
        let vertices: Vec<Vertex> = pts
            .iter()
            .map(|p| Vertex {
                x: p[0],
                y: p[1],
                z: p[2],
            })
            .collect();
        let dt: DelaunayTriangulation<Vertex> = DelaunayTriangulation::bulk_load(vertices)
            .map_err(|e| Error::Domain(format!("triangulation failed: {e:?}")))?;
        let triangles: Vec<[[f64; 3]; 3]> = dt
            .inner_faces()
            .map(|f| f.vertices().map(|v| [v.data().x, v.data().y, v.data().z]))
            .collect();
        if triangles.is_empty() {
            return Err(Error::Domain("all points are collinear".into()));
        }
        Ok(Self { triangles })
    }

    pub fn triangles(&self) -> &[[[f64; 3]; 3]] {
        &self.triangles
    }

    /// Drops triangles with an edge longer than `max_edge`.
    pub fn without_long_edges(mut self, max_edge: f64) -> Self {
        self.triangles.retain(|t| {
            (0..3).all(|i| {
                let (a, b) = (t[i], t[(i + 1) % 3]);
                (a[0] - b[0]).hypot(a[1] - b[1]) <= max_edge
            })
        });
        self
    }

    /// Linear interpolation at every pixel center of `grid`; `None` outside
    /// the triangles. A center on a shared edge takes the first triangle.
    pub fn rasterize(&self, grid: &PixelGrid) -> Vec<Option<f64>> {
        let mut out = vec![None; grid.len()];
        let g = &grid.geo;
        let ps = g.pixel_size;
        for t in &self.triangles {
            let xs = [t[0][0], t[1][0], t[2][0]];
            let ys = [t[0][1], t[1][1], t[2][1]];
            let (minx, maxx) = (
                xs.iter().copied().fold(f64::INFINITY, f64::min),
                xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            );
            let (miny, maxy) = (
                ys.iter().copied().fold(f64::INFINITY, f64::min),
                ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            );
            let c0 = ((minx - g.origin_x) / ps - 0.5).ceil().max(0.0);
            let c1 = ((maxx - g.origin_x) / ps - 0.5).floor().min(grid.width as f64 - 1.0);
            let r0 = ((g.origin_y - maxy) / ps - 0.5).ceil().max(0.0);
            let r1 = ((g.origin_y - miny) / ps - 0.5).floor().min(grid.height as f64 - 1.0);
            if c1 < c0 || r1 < r0 {
                continue;
            }
            for r in r0 as usize..=r1 as usize {
                for c in c0 as usize..=c1 as usize {
                    let i = r * grid.width + c;
                    if out[i].is_some() {
                        continue;
                    }
                    let (x, y) = grid.center(c, r);
                    out[i] = interpolate(t, x, y);
                }
            }
        }
        out
    }
}

/// Barycentric interpolation inside triangle `t`, `None` outside it.
pub(crate) fn interpolate(t: &[[f64; 3]; 3], x: f64, y: f64) -> Option<f64> {
    let [[x1, y1, z1], [x2, y2, z2], [x3, y3, z3]] = *t;
    let d = (y2 - y3) * (x1 - x3) + (x3 - x2) * (y1 - y3);
    if d == 0.0 {
        return None;
    }
    let l1 = ((y2 - y3) * (x - x3) + (x3 - x2) * (y - y3)) / d;
    let l2 = ((y3 - y1) * (x - x3) + (x1 - x3) * (y - y3)) / d;
    let l3 = 1.0 - l1 - l2;
    const TOL: f64 = -1e-10;
    (l1 >= TOL && l2 >= TOL && l3 >= TOL).then_some(l1 * z1 + l2 * z2 + l3 * z3)
}

pub(crate) fn to_dem_raster(grid: &PixelGrid, values: &[Option<f64>]) -> Result<Raster> {
    let v = values.iter().map(|v| v.map_or(DEM_NODATA, |z| z as f32)).collect();
    Raster::from_f32(grid.width, grid.height, grid.geo, DEM_NODATA, v)
}

/// Terrain model: TIN of the cloud's points, sampled at pixel centers.
/// Pixels outside the convex hull are nodata.
pub fn dtm_tin(ground: &PointCloud, grid: &PixelGrid) -> Result<Raster> {
    ground.require_points("dtm_tin")?;
    let samples: Vec<[f64; 3]> = ground.points.iter().map(|p| [p.x, p.y, p.z]).collect();
    let tin = Tin::build(&samples)?;
    to_dem_raster(grid, &tin.rasterize(grid))
}
