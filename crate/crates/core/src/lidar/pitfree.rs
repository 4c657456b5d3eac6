//! Pit-free surface model: one TIN per height layer, maximized.

use super::tin::{to_dem_raster, Tin};
use super::{PixelGrid, PointCloud};
use crate::error::{Error, Result};
use crate::raster::Raster;

#[derive(Debug, Clone, PartialEq)]
pub struct PitfreeParams {
    /// Layer thresholds in meters above ground, strictly increasing from 0.
    pub thresholds: Vec<f64>,
    /// Longest allowed triangle edge per layer; 0 disables the filter. The
    /// last entry applies to every later layer.
    pub max_edge: Vec<f64>,
}

impl Default for PitfreeParams {
    fn default() -> Self {
        Self {
            thresholds: vec![0.0, 2.0, 5.0, 10.0, 15.0],
            max_edge: vec![0.0, 1.5],
        }
    }
}

impl PitfreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.first() != Some(&0.0) || !self.thresholds.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Invalid(
                "pitfree thresholds must increase strictly from 0".into(),
            ));
        }
        if self.max_edge.is_empty() || self.max_edge.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::Invalid(
                "pitfree max_edge needs at least one non-negative value".into(),
            ));
        }
        Ok(())
    }

    pub fn max_edge_for(&self, layer: usize) -> f64 {
        self.max_edge[layer.min(self.max_edge.len() - 1)]
    }
}

/// Highest sample per pixel among `points`, in row-major pixel order.
fn highest_per_cell(points: impl Iterator<Item = [f64; 3]>, grid: &PixelGrid) -> Vec<[f64; 3]> {
    let mut best: Vec<Option<[f64; 3]>> = vec![None; grid.len()];
    for p in points {
        if let Some((c, r)) = grid.cell_of(p[0], p[1]) {
            let slot = &mut best[r * grid.width + c];
            if slot.is_none_or(|b| p[2] > b[2]) {
                *slot = Some(p);
            }
        }
    }
    best.into_iter().flatten().collect()
}

/// Surface model on the grid of `dtm`.
///
/// The first layer triangulates the highest point of every pixel. Layer
/// `t > 0` keeps only points at least `t` above the terrain pixel they fall
/// in. Each pixel takes the highest layer value and never less than the
/// terrain, which also fills valid terrain pixels that no layer reaches.
pub fn dsm_pitfree(pc: &PointCloud, dtm: &Raster, p: &PitfreeParams) -> Result<Raster> {
    pc.require_points("dsm_pitfree")?;
    p.validate()?;
    let grid = PixelGrid::new(*dtm.geo(), dtm.width(), dtm.height())?;
    let hag = |x: f64, y: f64, z: f64| -> Option<f64> {
        let (c, r) = grid.cell_of(x, y)?;
        dtm.value(0, c, r).map(|g| z - g)
    };

    let mut dsm: Vec<Option<f64>> = vec![None; grid.len()];
    for (layer, &t) in p.thresholds.iter().enumerate() {
        let eligible = pc
            .points
            .iter()
            .filter(|pt| layer == 0 || hag(pt.x, pt.y, pt.z).is_some_and(|h| h >= t))
            .map(|pt| [pt.x, pt.y, pt.z]);
        let samples = highest_per_cell(eligible, &grid);
        let tin = match Tin::build(&samples) {
            Ok(tin) => tin,
            Err(e) if layer == 0 => return Err(e),
            Err(_) => continue,
        };
        let max_edge = p.max_edge_for(layer);
        let tin = if max_edge > 0.0 {
            tin.without_long_edges(max_edge)
        } else {
            tin
        };
        for (d, v) in dsm.iter_mut().zip(tin.rasterize(&grid)) {
            if let Some(v) = v {
                *d = Some(d.map_or(v, |old| old.max(v)));
            }
        }
    }
    for (i, d) in dsm.iter_mut().enumerate() {
        let (c, r) = (i % grid.width, i / grid.width);
        if let Some(g) = dtm.value(0, c, r) {
            *d = Some(d.map_or(g, |v| v.max(g)));
        }
    }
    to_dem_raster(&grid, &dsm)
}
