//! Deterministic synthetic scenes: LiDAR point clouds with known crowns and
//! image/height patch corpora with a known image→height relation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::lidar::{generate_chm, ChmParams, ChmProducts, Point, PointCloud};
use crate::raster::{reflect_101, GeoTransform, Raster, RasterData};

/// Height in meters of the synthetic target for a smoothed NIR value.
pub const TARGET_M_PER_NIR: f64 = 40.0 / 255.0;

/// One generated training patch.
#[derive(Debug, Clone)]
pub struct SyntheticPatch {
    /// 4-band u8 (R, G, B, NIR).
    pub image: Raster,
    /// f32 height as a fraction of 100 m.
    pub target: Raster,
    /// u8 0/1 coverage.
    pub weight: Raster,
}

/// 5×5 box filter with reflect-101 borders.
pub fn box_blur5(values: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let mut acc = 0.0;
            for dr in -2..=2isize {
                for dc in -2..=2isize {
                    let rr = reflect_101(r as isize + dr, h);
                    let cc = reflect_101(c as isize + dc, w);
                    acc += values[rr * w + cc];
                }
            }
            out[r * w + c] = acc / 25.0;
        }
    }
    out
}

/// Corpus where height = 40·smooth(NIR)/255 m and the visible bands are
/// noisy functions of NIR. A quarter of the patches miss a rectangle of
/// reference coverage.
pub fn training_corpus(count: usize, size: usize, seed: u64) -> Result<Vec<SyntheticPatch>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 6.0).unwrap();
    let geo = GeoTransform::new(0.0, 0.0, 4.78, 3857)?;
    let mut out = Vec::with_capacity(count);
    let n = size * size;
    for _ in 0..count {
        // low-frequency field from a few random blobs
        let blobs: Vec<(f64, f64, f64, f64)> = (0..rng.gen_range(3..7))
            .map(|_| {
                (
                    rng.gen_range(0.0..size as f64),
                    rng.gen_range(0.0..size as f64),
                    rng.gen_range(size as f64 / 10.0..size as f64 / 3.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let base = rng.gen_range(60.0..160.0);
        let mut nir = vec![0.0; n];
        for r in 0..size {
            for c in 0..size {
                let mut v = base;
                for &(bx, by, s, a) in &blobs {
                    let d2 = (c as f64 - bx).powi(2) + (r as f64 - by).powi(2);
                    v += 90.0 * a * (-d2 / (2.0 * s * s)).exp();
                }
                nir[r * size + c] = (v + noise.sample(&mut rng)).clamp(0.0, 255.0).round();
            }
        }
        let smooth = box_blur5(&nir, size, size);

        let mut bands = vec![0u8; 4 * n];
        for i in 0..n {
            let v = nir[i];
            let t = |x: f64, rng: &mut ChaCha8Rng| (x + noise.sample(rng)).clamp(0.0, 255.0).round() as u8;
            bands[i] = t(140.0 - 0.35 * v, &mut rng);
            bands[n + i] = t(50.0 + 0.25 * v, &mut rng);
            bands[2 * n + i] = t(30.0 + 0.1 * v, &mut rng);
            bands[3 * n + i] = v as u8;
        }
        let target: Vec<f32> = smooth.iter().map(|s| (TARGET_M_PER_NIR * s / 100.0) as f32).collect();
        let mut weight = vec![1u8; n];
        if rng.gen_bool(0.25) {
            let (c0, r0) = (rng.gen_range(0..size / 2), rng.gen_range(0..size / 2));
            let (cw, rh) = (rng.gen_range(size / 8..size / 2), rng.gen_range(size / 8..size / 2));
            for r in r0..(r0 + rh).min(size) {
                for c in c0..(c0 + cw).min(size) {
                    weight[r * size + c] = 0;
                }
            }
        }
        out.push(SyntheticPatch {
            image: Raster::new(size, size, 4, geo, 0.0, RasterData::U8(bands))?,
            target: Raster::new(size, size, 1, geo, -1.0, RasterData::F32(target))?,
            weight: Raster::new(size, size, 1, geo, 255.0, RasterData::U8(weight))?,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CrownShape {
    /// Flat top at the crown height.
    Cylinder,
    /// Apex at the crown height, dropping `slope` meters per meter of
    /// distance from the axis.
    Cone { slope: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crown {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub height: f64,
    pub shape: CrownShape,
}

impl Crown {
    /// Canopy height above ground at `(x, y)`, `None` outside the crown.
    pub fn height_at(&self, x: f64, y: f64) -> Option<f64> {
        let d = (x - self.x).hypot(y - self.y);
        let h = match self.shape {
            CrownShape::Cylinder => self.height,
            CrownShape::Cone { slope } => self.height - slope * d,
        };
        (d <= self.radius).then_some(h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    /// Side of the square scene in meters.
    pub size: f64,
    /// Returns per square meter.
    pub density: f64,
    /// Terrain gradient `(dz/dx, dz/dy)`.
    pub slope: (f64, f64),
    pub base_elevation: f64,
    pub crowns: usize,
    pub min_height: f64,
    pub max_height: f64,
    /// Isolated outliers far above or below the surface.
    pub outliers: usize,
    /// Standard deviation of vertical return noise in meters.
    pub z_noise: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            size: 150.0,
            density: 10.0,
            slope: (0.04, -0.03),
            base_elevation: 120.0,
            crowns: 20,
            min_height: 5.0,
            max_height: 35.0,
            outliers: 12,
            z_noise: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LidarScene {
    pub params: SceneParams,
    pub crowns: Vec<Crown>,
    pub cloud: PointCloud,
    /// Indices into `cloud` of the injected outliers.
    pub outlier_indices: Vec<usize>,
}

impl LidarScene {
    pub fn ground_z(&self, x: f64, y: f64) -> f64 {
        let p = &self.params;
        p.base_elevation + p.slope.0 * x + p.slope.1 * y
    }

    /// True canopy height at a map point.
    pub fn canopy_height(&self, x: f64, y: f64) -> f64 {
        self.crowns.iter().find_map(|c| c.height_at(x, y)).unwrap_or(0.0)
    }
}

/// Plane terrain with non-overlapping crowns whose heights are spread evenly
/// over `[min_height, max_height]`; shapes alternate between cylinders and
/// cones. Returns hit the top surface only.
pub fn lidar_scene(params: SceneParams, seed: u64) -> Result<LidarScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = params.size;
    let mut crowns: Vec<Crown> = Vec::with_capacity(params.crowns);
    let mut attempts = 0;
    while crowns.len() < params.crowns {
        attempts += 1;
        if attempts > 100_000 {
            return Err(crate::Error::Invalid("scene too small for the requested crowns".into()));
        }
        let radius = rng.gen_range(3.0..7.0);
        let margin = radius + 8.0;
        if size <= 2.0 * margin {
            continue;
        }
        let (x, y) = (
            rng.gen_range(margin..size - margin),
            rng.gen_range(margin..size - margin),
        );
        if crowns
            .iter()
            .any(|c| (c.x - x).hypot(c.y - y) < c.radius + radius + 4.0)
        {
            continue;
        }
        let i = crowns.len();
        let frac = if params.crowns > 1 {
            i as f64 / (params.crowns - 1) as f64
        } else {
            0.0
        };
        let height = params.min_height + frac * (params.max_height - params.min_height);
        let shape = if i.is_multiple_of(2) {
            CrownShape::Cylinder
        } else {
            CrownShape::Cone { slope: 0.3 }
        };
        crowns.push(Crown {
            x,
            y,
            radius,
            height,
            shape,
        });
    }

    let mut scene = LidarScene {
        params,
        crowns,
        cloud: PointCloud::default(),
        outlier_indices: Vec::new(),
    };
    let noise = Normal::new(0.0, params.z_noise.max(0.0)).map_err(|e| crate::Error::Invalid(e.to_string()))?;
    let n = (params.density * size * size).round() as usize;
    let mut points = Vec::with_capacity(n + params.outliers);
    for _ in 0..n {
        let (x, y) = (rng.gen_range(0.0..size), rng.gen_range(0.0..size));
        let z = scene.ground_z(x, y) + scene.canopy_height(x, y) + noise.sample(&mut rng);
        points.push(Point::new(x, y, z));
    }
    for k in 0..params.outliers {
        let (x, y) = (rng.gen_range(0.0..size), rng.gen_range(0.0..size));
        let dz = if k % 3 == 2 {
            -rng.gen_range(20.0..40.0)
        } else {
            rng.gen_range(50.0..90.0)
        };
        scene.outlier_indices.push(points.len());
        points.push(Point::new(x, y, scene.ground_z(x, y) + dz));
    }
    scene.cloud = PointCloud::new(points)?;
    Ok(scene)
}

/// Full LiDAR chain with default parameters on a 1 m grid.
pub fn chm_from_cloud(cloud: &PointCloud, epsg: u32) -> Result<ChmProducts> {
    generate_chm(
        cloud,
        &ChmParams {
            epsg,
            ..ChmParams::default()
        },
    )
}
