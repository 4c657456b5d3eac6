//! LiDAR point clouds to a 1 m canopy height model.
//!
//! The chain is [`denoise_ivf`] → [`classify_ground_pmf`] → [`dtm_tin`] and
//! [`dsm_pitfree`] → [`compute_chm`] → [`mask_buildings`]. All rasters of
//! one run share a [`PixelGrid`], usually [`PixelGrid::covering`] the
//! denoised cloud.

mod buildings;
mod chm;
mod ivf;
mod pcb;
mod pitfree;
mod pmf;
mod tin;

pub use buildings::{mask_buildings, parse_polygons, read_polygons, write_polygons, BufferParams, BuildingPolygon};
pub use chm::{compute_chm, CHM_NODATA};
pub use ivf::denoise_ivf;
pub use pcb::{pcb_read, pcb_write, read_pcb, write_pcb, PCB_MAGIC};
pub use pitfree::{dsm_pitfree, PitfreeParams};
pub use pmf::{classify_ground_pmf, opened_surfaces, window_cells, PmfParams};
pub use tin::{dtm_tin, Tin, DEM_NODATA};

use crate::error::{Error, Result};
use crate::raster::{GeoTransform, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PointClass {
    Unclassified,
    Ground,
    Noise,
}

impl PointClass {
    pub fn code(self) -> u8 {
        match self {
            PointClass::Unclassified => 0,
            PointClass::Ground => 1,
            PointClass::Noise => 7,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(PointClass::Unclassified),
            1 => Some(PointClass::Ground),
            7 => Some(PointClass::Noise),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub class: PointClass,
}

impl Point {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self {
            x,
            y,
            z,
            class: PointClass::Unclassified,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    /// Rejects non-finite coordinates.
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if let Some(i) = points
            .iter()
            .position(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()))
        {
            return Err(Error::Domain(format!("point {i} has a non-finite coordinate")));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub(crate) fn require_points(&self, what: &str) -> Result<()> {
        if self.points.is_empty() {
            return Err(Error::Empty(format!("{what}: point cloud is empty")));
        }
        Ok(())
    }

    /// Points of one class.
    pub fn of_class(&self, class: PointClass) -> PointCloud {
        PointCloud {
            points: self.points.iter().filter(|p| p.class == class).copied().collect(),
        }
    }

    /// `(min_x, min_y, max_x, max_y)`.
    pub fn bounds(&self) -> Option<(f64, f64, f64, f64)> {
        let first = self.points.first()?;
        let mut b = (first.x, first.y, first.x, first.y);
        for p in &self.points {
            b.0 = b.0.min(p.x);
            b.1 = b.1.min(p.y);
            b.2 = b.2.max(p.x);
            b.3 = b.3.max(p.y);
        }
        Some(b)
    }
}

/// Raster geometry shared by every product of a LiDAR run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelGrid {
    pub geo: GeoTransform,
    pub width: usize,
    pub height: usize,
}

impl PixelGrid {
    pub fn new(geo: GeoTransform, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::shape("grid must have at least one pixel"));
        }
        Ok(Self { geo, width, height })
    }

    /// Smallest grid aligned to multiples of `res` whose pixels contain
    /// every point of the cloud.
    pub fn covering(pc: &PointCloud, res: f64, epsg: u32) -> Result<Self> {
        let (x0, y0, x1, y1) = pc.bounds().ok_or_else(|| Error::Empty("point cloud is empty".into()))?;
        if !(res > 0.0 && res.is_finite()) {
            return Err(Error::Domain(format!("resolution must be positive, got {res}")));
        }
        let ox = (x0 / res).floor() * res;
        let oy = (y1 / res).floor() * res + res;
        let width = (((x1 - ox) / res).floor() as usize) + 1;
        let height = (((oy - y0) / res).floor() as usize) + 1;
        Self::new(GeoTransform::new(ox, oy, res, epsg)?, width, height)
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Pixel containing a map point, or `None` outside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        self.geo
            .pixel_of(x, y)
            .filter(|&(c, r)| c < self.width && r < self.height)
    }

    pub fn center(&self, col: usize, row: usize) -> (f64, f64) {
        self.geo.pixel_center(col, row)
    }
}

/// Parameters of the whole LiDAR chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChmParams {
    /// Output pixel size in meters.
    pub res: f64,
    pub epsg: u32,
    pub ivf_res: f64,
    pub ivf_n: usize,
    pub pmf: PmfParams,
    pub pitfree: PitfreeParams,
}

impl Default for ChmParams {
    fn default() -> Self {
        Self {
            res: 1.0,
            epsg: 32721,
            ivf_res: 1.0,
            ivf_n: 5,
            pmf: PmfParams::default(),
            pitfree: PitfreeParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChmProducts {
    /// Denoised cloud with ground labels.
    pub denoised: PointCloud,
    pub dtm: Raster,
    pub dsm: Raster,
    pub chm: Raster,
}

/// Denoise, classify ground, interpolate terrain and surface, and subtract,
/// all on the grid covering the denoised cloud.
pub fn generate_chm(cloud: &PointCloud, p: &ChmParams) -> Result<ChmProducts> {
    let denoised = denoise_ivf(cloud, p.ivf_res, p.ivf_n)?;
    let classified = classify_ground_pmf(&denoised, &p.pmf)?;
    let grid = PixelGrid::covering(&denoised, p.res, p.epsg)?;
    let dtm = dtm_tin(&classified.of_class(PointClass::Ground), &grid)?;
    let dsm = dsm_pitfree(&classified, &dtm, &p.pitfree)?;
    let chm = compute_chm(&dsm, &dtm)?;
    Ok(ChmProducts {
        denoised: classified,
        dtm,
        dsm,
        chm,
    })
}
