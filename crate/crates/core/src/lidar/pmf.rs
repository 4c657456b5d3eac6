//! Progressive morphological filter for ground classification.
//!
//! A minimum-z grid is opened (erosion, then dilation) with square windows
//! of growing size. A point whose height above the opened surface at its
//! cell exceeds the stage threshold is non-ground. Borders replicate the
//! edge cells, which keeps the opening of a planar slope exactly planar.

use std::collections::VecDeque;

use super::{PixelGrid, PointClass, PointCloud};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PmfParams {
    /// Window sizes in meters, strictly increasing.
    pub ws: Vec<f64>,
    /// Elevation thresholds in meters, one per window, strictly increasing.
    pub th: Vec<f64>,
    /// Grid cell in meters.
    pub cell: f64,
}

/// `n` evenly spaced values from `a` to `b` inclusive.
fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// `a, a+step, ...` up to and including `b`.
fn stepped(a: f64, b: f64, step: f64) -> Vec<f64> {
    let n = ((b - a) / step + 1e-9).floor() as usize + 1;
    (0..n).map(|i| a + step * i as f64).collect()
}

impl Default for PmfParams {
    /// Windows 4, 7, …, 40 m with thresholds 0.1 to 1.5 m on a 1 m grid.
    fn default() -> Self {
        let ws = stepped(4.0, 42.0, 3.0);
        let th = linspace(0.1, 1.5, ws.len());
        Self { ws, th, cell: 1.0 }
    }
}

impl PmfParams {
    /// Shorter schedule (3, 6, 9, 12 m) for scenes where the default one
    /// misbehaves.
    pub fn alternate() -> Self {
        let ws = stepped(3.0, 12.0, 3.0);
        let th = linspace(0.1, 1.5, ws.len());
        Self { ws, th, cell: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ws.is_empty() || self.ws.len() != self.th.len() {
            return Err(Error::Invalid(format!(
                "pmf needs as many thresholds as windows (got {} and {})",
                self.ws.len(),
                self.th.len()
            )));
        }
        let increasing = |v: &[f64]| v.windows(2).all(|w| w[0] < w[1]);
        if !increasing(&self.ws) || !increasing(&self.th) {
            return Err(Error::Invalid(
                "pmf windows and thresholds must be strictly increasing".into(),
            ));
        }
        if !(self.ws[0] > 0.0) || !(self.cell > 0.0 && self.cell.is_finite()) {
            return Err(Error::Invalid("pmf windows and cell size must be positive".into()));
        }
        Ok(())
    }
}

/// Odd number of cells spanned by a window of `ws` meters.
pub fn window_cells(ws: f64, cell: f64) -> usize {
    let n = (ws / cell - 1e-9).ceil().max(1.0) as usize;
    if n.is_multiple_of(2) {
        n + 1
    } else {
        n
    }
}

/// Lowest z per cell; empty cells take the value of the nearest filled cell
/// in breadth-first (4-neighbour) order.
fn min_z_grid(pc: &PointCloud, grid: &PixelGrid) -> Vec<f64> {
    let mut z = vec![f64::INFINITY; grid.len()];
    for p in &pc.points {
        if let Some((c, r)) = grid.cell_of(p.x, p.y) {
            let i = r * grid.width + c;
            z[i] = z[i].min(p.z);
        }
    }
    let mut queue: VecDeque<usize> = (0..z.len()).filter(|&i| z[i].is_finite()).collect();
    while let Some(i) = queue.pop_front() {
        let (c, r) = (i % grid.width, i / grid.width);
        let mut visit = |j: usize| {
            if !z[j].is_finite() {
                z[j] = z[i];
                queue.push_back(j);
            }
        };
        if c > 0 {
            visit(i - 1);
        }
        if c + 1 < grid.width {
            visit(i + 1);
        }
        if r > 0 {
            visit(i - grid.width);
        }
        if r + 1 < grid.height {
            visit(i + grid.width);
        }
    }
    z
}

/// Sliding extremum of half-width `k` along one axis of a `w × h` grid.
/// With `extend` the output spans positions `-k..n+k` and reads clamp to
/// the edge; without it the input is taken as already extended by `k` and
/// the output is its `n - 2k` interior.
fn sweep(
    src: &[f64],
    w: usize,
    h: usize,
    k: usize,
    along_rows: bool,
    extend: bool,
    take: fn(f64, f64) -> f64,
) -> (Vec<f64>, usize, usize) {
    let (n, lines) = if along_rows { (w, h) } else { (h, w) };
    let out_n = if extend { n + 2 * k } else { n - 2 * k };
    let (ow, oh) = if along_rows { (out_n, h) } else { (w, out_n) };
    let mut out = vec![0.0; ow * oh];
    let at = |line: usize, pos: usize| {
        if along_rows {
            src[line * w + pos]
        } else {
            src[pos * w + line]
        }
    };
    for line in 0..lines {
        for o in 0..out_n {
            // center in input coordinates
            let center = if extend {
                o as isize - k as isize
            } else {
                (o + k) as isize
            };
            let mut acc = at(line, (center - k as isize).clamp(0, n as isize - 1) as usize);
            for d in -(k as isize) + 1..=k as isize {
                acc = take(acc, at(line, (center + d).clamp(0, n as isize - 1) as usize));
            }
            let idx = if along_rows { line * ow + o } else { o * ow + line };
            out[idx] = acc;
        }
    }
    (out, ow, oh)
}

/// Morphological opening with a square window of `2k+1` cells and
/// edge-replicating borders.
fn open(z: &[f64], w: usize, h: usize, k: usize) -> Vec<f64> {
    if k == 0 {
        return z.to_vec();
    }
    let (e1, w1, h1) = sweep(z, w, h, k, true, true, f64::min);
    let (e2, w2, h2) = sweep(&e1, w1, h1, k, false, true, f64::min);
    let (d1, w3, h3) = sweep(&e2, w2, h2, k, true, false, f64::max);
    let (d2, _, _) = sweep(&d1, w3, h3, k, false, false, f64::max);
    d2
}

/// The minimum-z grid and the opened surface of every stage.
pub fn opened_surfaces(pc: &PointCloud, p: &PmfParams) -> Result<(PixelGrid, Vec<Vec<f64>>)> {
    pc.require_points("classify_ground_pmf")?;
    p.validate()?;
    let grid = PixelGrid::covering(pc, p.cell, 0)?;
    let z = min_z_grid(pc, &grid);
    let surfaces =
        p.ws.iter()
            .map(|&ws| open(&z, grid.width, grid.height, window_cells(ws, p.cell) / 2))
            .collect();
    Ok((grid, surfaces))
}

/// Labels every point ground or unclassified.
pub fn classify_ground_pmf(pc: &PointCloud, p: &PmfParams) -> Result<PointCloud> {
    let (grid, surfaces) = opened_surfaces(pc, p)?;
    let mut out = pc.clone();
    let mut any_ground = false;
    for pt in out.points.iter_mut() {
        let (c, r) = grid.cell_of(pt.x, pt.y).expect("grid covers the cloud");
        let i = r * grid.width + c;
        let above = surfaces.iter().zip(&p.th).any(|(s, &th)| pt.z - s[i] > th);
        pt.class = if above {
            PointClass::Unclassified
        } else {
            PointClass::Ground
        };
        any_ground |= !above;
    }
    if !any_ground {
        return Err(Error::NoGround);
    }
    Ok(out)
}
