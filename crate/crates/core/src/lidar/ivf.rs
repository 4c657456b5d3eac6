use std::collections::HashMap;

use super::PointCloud;
use crate::error::{Error, Result};

fn voxel(v: f64, res: f64) -> i64 {
    (v / res).floor() as i64
}

/// Isolated-voxel filter. A point is noise when the number of *other*
/// points in its 3×3×3 voxel neighbourhood is at most `n`; noise points are
/// dropped and the survivors keep their input order.
pub fn denoise_ivf(pc: &PointCloud, res: f64, n: usize) -> Result<PointCloud> {
    pc.require_points("denoise_ivf")?;
    if !(res > 0.0 && res.is_finite()) {
        return Err(Error::Domain(format!("voxel resolution must be positive, got {res}")));
    }
    let key = |x: f64, y: f64, z: f64| (voxel(x, res), voxel(y, res), voxel(z, res));
    let mut counts: HashMap<(i64, i64, i64), usize> = HashMap::with_capacity(pc.len());
    for p in &pc.points {
        *counts.entry(key(p.x, p.y, p.z)).or_insert(0) += 1;
    }
    // neighbourhood totals are shared by every point of a voxel
    let mut totals: HashMap<(i64, i64, i64), usize> = HashMap::with_capacity(counts.len());
    for &(i, j, k) in counts.keys() {
        let mut total = 0;
        for di in -1..=1 {
            for dj in -1..=1 {
                for dk in -1..=1 {
                    total += counts.get(&(i + di, j + dj, k + dk)).copied().unwrap_or(0);
                }
            }
        }
        totals.insert((i, j, k), total);
    }
    let points = pc
        .points
        .iter()
        .filter(|p| totals[&key(p.x, p.y, p.z)] - 1 > n)
        .copied()
        .collect();
    Ok(PointCloud { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lidar::Point;

    #[test]
    fn isolated_point_removed() {
        let mut pts: Vec<Point> = (0..10).map(|_| Point::new(0.5, 0.5, 0.5)).collect();
        pts.push(Point::new(50.5, 0.5, 0.5));
        let out = denoise_ivf(&PointCloud::new(pts).unwrap(), 1.0, 5).unwrap();
        assert_eq!(out.len(), 10);
        assert!(out.points.iter().all(|p| p.x == 0.5));
    }

    #[test]
    fn exactly_n_neighbours_is_noise() {
        let six: Vec<Point> = (0..6).map(|i| Point::new(0.1 * i as f64, 0.2, 0.3)).collect();
        assert!(denoise_ivf(&PointCloud::new(six).unwrap(), 1.0, 5).unwrap().is_empty());
        let seven: Vec<Point> = (0..7).map(|i| Point::new(0.1 * i as f64, 0.2, 0.3)).collect();
        assert_eq!(denoise_ivf(&PointCloud::new(seven).unwrap(), 1.0, 5).unwrap().len(), 7);
    }

    #[test]
    fn empty_cloud() {
        assert!(denoise_ivf(&PointCloud::default(), 1.0, 5).is_err());
    }
}
