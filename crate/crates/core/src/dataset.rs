//! Training data: pairing CHMs with imagery by date, presence-weighted
//! targets on the image grid, fixed-size patches and the validation split.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use chrono::{Months, NaiveDate};

use crate::error::{Error, Result};
use crate::nn::TrainSample;
use crate::raster::{
    resample_to_grid, retile, rsf_read, rsf_write, unscale_chm, DType, GeoTransform, Raster, RasterData, Reducer,
};

/// Nodata of target rasters (targets themselves are always in `[0, 1]`).
pub const TARGET_NODATA: f64 = -1.0;
/// Nodata of weight rasters.
pub const WEIGHT_NODATA: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cadence {
    Biannual,
    Monthly,
}

impl Cadence {
    /// Half-width of the admissible window around the closest image date.
    pub fn window(self) -> Months {
        match self {
            Cadence::Biannual => Months::new(6),
            Cadence::Monthly => Months::new(1),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Cadence::Biannual => "biannual",
            Cadence::Monthly => "monthly",
        }
    }
}

impl std::str::FromStr for Cadence {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "biannual" => Ok(Cadence::Biannual),
            "monthly" => Ok(Cadence::Monthly),
            _ => Err(Error::Invalid(format!("unknown cadence `{s}`"))),
        }
    }
}

/// One mosaic of one quad.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogEntry {
    pub quad_id: String,
    pub date: NaiveDate,
    pub cadence: Cadence,
    pub path: PathBuf,
}

/// Images to pair with a CHM acquired on `chm_date`: the closest mosaic
/// plus its neighbours in the quad's date sequence, kept only within the
/// closest mosaic's cadence window (±6 months biannual, ±1 month monthly).
///
/// The closest mosaic itself must fall in that window around `chm_date`,
/// otherwise no image is temporally valid.
pub fn select_image_dates(chm_date: NaiveDate, catalog: &[CatalogEntry]) -> Result<Vec<CatalogEntry>> {
    let Some(first) = catalog.first() else {
        return Err(Error::NoValidImage);
    };
    if catalog.iter().any(|e| e.quad_id != first.quad_id) {
        return Err(Error::Invalid(
            "catalog passed to select_image_dates spans several quads".into(),
        ));
    }
    let mut sorted: Vec<&CatalogEntry> = catalog.iter().collect();
    sorted.sort_by_key(|e| e.date);
    if sorted.windows(2).any(|w| w[0].date == w[1].date) {
        return Err(Error::Invalid(format!(
            "duplicate catalog date for quad {}",
            first.quad_id
        )));
    }
    // ties go to the earlier date
    let closest = (0..sorted.len())
        .min_by_key(|&i| ((sorted[i].date - chm_date).num_days().abs(), sorted[i].date))
        .expect("non-empty");
    let anchor = sorted[closest];
    let win = anchor.cadence.window();
    let within = |center: NaiveDate, d: NaiveDate| {
        let lo = center.checked_sub_months(win).unwrap_or(NaiveDate::MIN);
        let hi = center.checked_add_months(win).unwrap_or(NaiveDate::MAX);
        (lo..=hi).contains(&d)
    };
    if !within(chm_date, anchor.date) {
        return Err(Error::NoValidImage);
    }
    let lo = closest.saturating_sub(1);
    let hi = (closest + 1).min(sorted.len() - 1);
    Ok(sorted[lo..=hi]
        .iter()
        .filter(|e| within(anchor.date, e.date))
        .map(|e| (*e).clone())
        .collect())
}

/// Target and weight on an image grid.
///
/// `chm` is either the u8 CHM (2.5 units per meter, nodata 255) or an f32
/// raster in meters. The target is the median CHM height of the 1 m pixels
/// whose centers fall in each image pixel, divided by 100 and clamped to
/// `[0, 1]`. The weight is the minimum of the coverage indicator, and is 0
/// for pixels whose footprint leaves the CHM extent. Weight-0 pixels carry
/// target 0.
pub fn build_targets(chm: &Raster, geo: GeoTransform, width: usize, height: usize) -> Result<(Raster, Raster)> {
    if chm.bands() != 1 {
        return Err(Error::shape("CHM must have one band"));
    }
    if chm.geo().epsg != geo.epsg {
        return Err(Error::CrsMismatch {
            src: chm.geo().epsg,
            dst: geo.epsg,
        });
    }
    let cg = *chm.geo();
    let (cx0, cy1) = (cg.origin_x, cg.origin_y);
    let (cx1, cy0) = (
        cx0 + chm.width() as f64 * cg.pixel_size,
        cy1 - chm.height() as f64 * cg.pixel_size,
    );
    let (ix0, iy1) = (geo.origin_x, geo.origin_y);
    let (ix1, iy0) = (
        ix0 + width as f64 * geo.pixel_size,
        iy1 - height as f64 * geo.pixel_size,
    );
    if cx1.min(ix1) <= cx0.max(ix0) || cy1.min(iy1) <= cy0.max(iy0) {
        return Err(Error::Domain("CHM does not overlap the image grid".into()));
    }

    let meters = match chm.dtype() {
        DType::U8 => chm.map_valid(DType::F32, TARGET_NODATA, |v| unscale_chm(v as u8))?,
        DType::F32 => chm.map_valid(DType::F32, TARGET_NODATA, |v| v)?,
        DType::I16 => return Err(Error::Invalid("CHM must be u8 (scaled) or f32 (meters)".into())),
    };
    let coverage = chm.map_valid(DType::U8, WEIGHT_NODATA, |_| 1.0)?;
    let coverage = {
        // nodata pixels of the CHM are explicit zero coverage
        let v: Vec<u8> = coverage
            .band_f64(0)
            .iter()
            .map(|&x| if x == WEIGHT_NODATA { 0 } else { 1 })
            .collect();
        coverage.with_data(WEIGHT_NODATA, RasterData::U8(v))?
    };
    let med = resample_to_grid(&meters, geo, width, height, Reducer::Median)?;
    let minw = resample_to_grid(&coverage, geo, width, height, Reducer::Min)?;

    let tol = 1e-9 * cg.pixel_size.max(geo.pixel_size);
    let mut target = vec![0f32; width * height];
    let mut weight = vec![0u8; width * height];
    for r in 0..height {
        let top = iy1 - r as f64 * geo.pixel_size;
        let inside_y = top <= cy1 + tol && top - geo.pixel_size >= cy0 - tol;
        for c in 0..width {
            let left = ix0 + c as f64 * geo.pixel_size;
            let inside = inside_y && left >= cx0 - tol && left + geo.pixel_size <= cx1 + tol;
            let i = r * width + c;
            if inside && minw.value(0, c, r) == Some(1.0) {
                if let Some(m) = med.value(0, c, r) {
                    weight[i] = 1;
                    target[i] = (m / 100.0).clamp(0.0, 1.0) as f32;
                }
            }
        }
    }
    Ok((
        Raster::new(width, height, 1, geo, TARGET_NODATA, RasterData::F32(target))?,
        Raster::new(width, height, 1, geo, WEIGHT_NODATA, RasterData::U8(weight))?,
    ))
}

/// 4-band image patch with its target and weight.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTriplet {
    pub image: Raster,
    pub target: Raster,
    pub weight: Raster,
    pub quad_id: String,
    /// Row-major position of the patch in the quad's tiling, counting
    /// dropped partial tiles.
    pub patch_index: usize,
}

impl PatchTriplet {
    /// Fraction of pixels with weight 1.
    pub fn coverage(&self) -> f64 {
        let w = self.weight.band_f64(0);
        w.iter().filter(|&&v| v == 1.0).count() as f64 / w.len() as f64
    }

    pub fn to_sample(&self) -> Result<TrainSample<f32>> {
        TrainSample::from_rasters(&self.image, &self.target, &self.weight)
    }
}

/// Aligned `tile × tile` patches of the three rasters; partial edge tiles
/// are dropped.
pub fn make_patches(
    image: &Raster,
    target: &Raster,
    weight: &Raster,
    tile: usize,
    quad_id: &str,
) -> Result<Vec<PatchTriplet>> {
    if !image.same_grid(target) || !image.same_grid(weight) {
        return Err(Error::shape("image, target and weight must share one grid"));
    }
    let (ti, tt, tw) = (retile(image, tile)?, retile(target, tile)?, retile(weight, tile)?);
    Ok(ti
        .into_iter()
        .zip(tt)
        .zip(tw)
        .filter(|((i, _), _)| i.1.width() == tile && i.1.height() == tile)
        .map(|(((idx, image), (_, target)), (_, weight))| PatchTriplet {
            image,
            target,
            weight,
            quad_id: quad_id.to_string(),
            patch_index: idx,
        })
        .collect())
}

/// Indices into the patch list.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// Per quad, the patch with the smallest `patch_index` whose weight is at
/// least half ones goes to validation (the earliest in list order on ties);
/// every other patch trains.
pub fn split_train_val(patches: &[PatchTriplet]) -> Split {
    let mut chosen: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, p) in patches.iter().enumerate() {
        let ones = p.weight.band_f64(0).iter().filter(|&&v| v == 1.0).count();
        if 2 * ones < p.weight.band_len() {
            continue;
        }
        chosen
            .entry(p.quad_id.as_str())
            .and_modify(|j| {
                if p.patch_index < patches[*j].patch_index {
                    *j = i;
                }
            })
            .or_insert(i);
    }
    for q in patches.iter().map(|p| p.quad_id.as_str()) {
        if !chosen.contains_key(q) {
            log::warn!("quad {q} has no patch with >= 50% coverage; no validation patch");
            chosen.insert(q, usize::MAX);
        }
    }
    let val_set: Vec<usize> = chosen.values().copied().filter(|&i| i != usize::MAX).collect();
    let mut split = Split::default();
    for i in 0..patches.len() {
        if val_set.contains(&i) {
            split.val.push(i);
        } else {
            split.train.push(i);
        }
    }
    split
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Val,
}

impl SplitKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
        }
    }
}

impl std::str::FromStr for SplitKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitKind::Train),
            "val" => Ok(SplitKind::Val),
            _ => Err(Error::Invalid(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub quad_id: String,
    pub patch_index: usize,
    pub split: SplitKind,
    pub image_path: PathBuf,
    pub target_path: PathBuf,
    pub weight_path: PathBuf,
}

pub const MANIFEST_HEADER: [&str; 6] = [
    "quad_id",
    "patch_index",
    "split",
    "image_path",
    "target_path",
    "weight_path",
];

pub fn write_manifest<W: Write>(rows: &[ManifestRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(MANIFEST_HEADER)?;
    for r in rows {
        wr.write_record([
            r.quad_id.clone(),
            r.patch_index.to_string(),
            r.split.as_str().to_string(),
            r.image_path.display().to_string(),
            r.target_path.display().to_string(),
            r.weight_path.display().to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_manifest<R: Read>(r: R) -> Result<Vec<ManifestRow>> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if header != MANIFEST_HEADER {
        return Err(Error::format(
            "header",
            format!("expected `{}`", MANIFEST_HEADER.join(",")),
        ));
    }
    let mut rows = Vec::new();
    for (n, rec) in rd.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::format("manifest", format!("row {}: bad {what}", n + 1));
        rows.push(ManifestRow {
            quad_id: rec[0].to_string(),
            patch_index: rec[1].parse().map_err(|_| bad("patch_index"))?,
            split: rec[2].parse().map_err(|_| bad("split"))?,
            image_path: PathBuf::from(&rec[3]),
            target_path: PathBuf::from(&rec[4]),
            weight_path: PathBuf::from(&rec[5]),
        });
    }
    Ok(rows)
}

pub fn manifest_read(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    read_manifest(File::open(path).map_err(|e| Error::file(path, e))?)
}

/// Writes each patch as three RSF files under `dir` and returns manifest
/// rows with paths relative to `dir`. `tag` distinguishes several images
/// of one quad.
pub fn write_patches(dir: &Path, patches: &[PatchTriplet], split: &Split, tag: &str) -> Result<Vec<ManifestRow>> {
    let mut rows = Vec::with_capacity(patches.len());
    for (i, p) in patches.iter().enumerate() {
        let kind = if split.val.contains(&i) {
            SplitKind::Val
        } else {
            SplitKind::Train
        };
        let stem = format!("{}_{}_{:05}", p.quad_id, tag, p.patch_index);
        let names = [
            format!("{stem}_image.rsf"),
            format!("{stem}_target.rsf"),
            format!("{stem}_weight.rsf"),
        ];
        for (name, r) in names.iter().zip([&p.image, &p.target, &p.weight]) {
            rsf_write(r, dir.join(name))?;
        }
        let [image_path, target_path, weight_path] = names.map(PathBuf::from);
        rows.push(ManifestRow {
            quad_id: p.quad_id.clone(),
            patch_index: p.patch_index,
            split: kind,
            image_path,
            target_path,
            weight_path,
        });
    }
    Ok(rows)
}

/// Training and validation samples loaded from a manifest.
pub type SampleSet = Vec<TrainSample<f32>>;

/// Loads the samples listed in a manifest; relative paths resolve against
/// `base`. Returns `(train, val)`.
pub fn load_samples(rows: &[ManifestRow], base: &Path) -> Result<(SampleSet, SampleSet)> {
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for r in rows {
        let s = TrainSample::from_rasters(
            &rsf_read(base.join(&r.image_path))?,
            &rsf_read(base.join(&r.target_path))?,
            &rsf_read(base.join(&r.weight_path))?,
        )?;
        match r.split {
            SplitKind::Train => train.push(s),
            SplitKind::Val => val.push(s),
        }
    }
    Ok((train, val))
}

/// Catalog CSV: `quad_id,date,cadence,path` with ISO dates.
pub fn read_catalog<R: Read>(r: R) -> Result<Vec<CatalogEntry>> {
    let mut rd = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for (n, rec) in rd.records().enumerate() {
        let rec = rec?;
        if rec.len() != 4 {
            return Err(Error::format("catalog", format!("row {}: expected 4 fields", n + 1)));
        }
        let date = NaiveDate::parse_from_str(&rec[1], "%Y-%m-%d")
            .map_err(|_| Error::format("catalog", format!("row {}: bad date `{}`", n + 1, &rec[1])))?;
        out.push(CatalogEntry {
            quad_id: rec[0].to_string(),
            date,
            cadence: rec[2].parse()?,
            path: PathBuf::from(&rec[3]),
        });
    }
    Ok(out)
}

pub fn write_catalog<W: Write>(entries: &[CatalogEntry], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["quad_id", "date", "cadence", "path"])?;
    for e in entries {
        wr.write_record([
            e.quad_id.clone(),
            e.date.format("%Y-%m-%d").to_string(),
            e.cadence.as_str().to_string(),
            e.path.display().to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
