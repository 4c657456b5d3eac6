//! Subcommand arguments and their implementations.
//!
//! Each command reads and validates everything it needs before it creates
//! any output file.

use std::fs::File;
use std::io::BufWriter;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use clap::Args;

use canopy_core::change::{self, DropParams, RegrowthParams};
use canopy_core::composite::{self, PixelEventMap, TileInput, TileRule};
use canopy_core::dataset::{self, Split};
use canopy_core::evaluation::{self, AreaPair};
use canopy_core::inference::{self, DEFAULT_BORDER};
use canopy_core::lidar::{self, BufferParams, ChmParams, PitfreeParams, PmfParams};
use canopy_core::nn::{self, AdamConfig, TrainConfig, UNet, UNetConfig};
use canopy_core::raster::{rsf_read, rsf_write, scale_nicfi, Raster};

use crate::write_sidecar;

fn sidecar_for(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".log");
    PathBuf::from(s)
}

fn read_raster(path: &Path) -> Result<Raster> {
    rsf_read(path).with_context(|| format!("reading {}", path.display()))
}

fn write_raster(r: &Raster, path: &Path) -> Result<()> {
    rsf_write(r, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).with_context(|| format!("opening {}", path.display()))
}

fn base_of(path: &Path) -> &Path {
    path.parent().unwrap_or(Path::new("."))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating directory {}", dir.display()))
}

#[derive(Debug, Args)]
pub struct ChmArgs {
    /// Input point cloud.
    #[arg(long = "in", value_name = "PCB")]
    pub input: PathBuf,
    #[arg(long, value_name = "RSF")]
    pub out: PathBuf,
    /// Output pixel size in meters.
    #[arg(long, default_value_t = 1.0)]
    pub res: f64,
    #[arg(long, default_value_t = 32721)]
    pub epsg: u32,
    /// Voxel size of the isolated-voxel noise filter.
    #[arg(long, default_value_t = 1.0)]
    pub ivf_res: f64,
    /// A point with at most this many neighbors in its 27 voxels is noise.
    #[arg(long, default_value_t = 5)]
    pub ivf_n: usize,
    /// Morphological filter windows in meters, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub pmf_ws: Option<Vec<f64>>,
    /// Morphological filter height thresholds in meters, one per window.
    #[arg(long, value_delimiter = ',')]
    pub pmf_th: Option<Vec<f64>>,
    /// Pit-free layer thresholds in meters.
    #[arg(long, value_delimiter = ',')]
    pub pitfree_thresholds: Option<Vec<f64>>,
    /// Pit-free maximum triangle edge per layer (0 disables).
    #[arg(long, value_delimiter = ',')]
    pub pitfree_max_edge: Option<Vec<f64>>,
    /// Also write the terrain model.
    #[arg(long)]
    pub dtm_out: Option<PathBuf>,
    /// Also write the surface model.
    #[arg(long)]
    pub dsm_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[arg(long, value_name = "RSF")]
    pub chm: PathBuf,
    /// Footprints, one per line: `city|out<TAB>x y;x y;...`.
    #[arg(long)]
    pub polygons: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    pub buffer_outside: f64,
    #[arg(long, default_value_t = 15.0)]
    pub buffer_city: f64,
}

#[derive(Debug, Args)]
pub struct ScaleArgs {
    /// 4-band RGB-NIR raster of raw digital numbers.
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// u8 canopy height model.
    #[arg(long)]
    pub chm: PathBuf,
    /// Acquisition date of the CHM, YYYY-MM-DD.
    #[arg(long)]
    pub chm_date: NaiveDate,
    /// Image catalog CSV `quad_id,date,cadence,path`.
    #[arg(long)]
    pub catalog: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Patch size in pixels.
    #[arg(long, default_value_t = 256)]
    pub tile: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Patch manifest written by `dataset`.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Best model (lowest validation loss).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub depth: usize,
    #[arg(long, default_value_t = 64)]
    pub base_channels: usize,
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Seeds both weight initialization and batch shuffling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stop once validation MAE (meters) falls below this.
    #[arg(long)]
    pub stop_below_mae: Option<f64>,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("mode").required(true).args(["image", "manifest"])))]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Single 8-bit quad.
    #[arg(long, requires = "out")]
    pub image: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Quad manifest CSV `quad_id,image_path`.
    #[arg(long, requires = "out_dir")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Mirrored border in pixels, cropped after prediction.
    #[arg(long, default_value_t = DEFAULT_BORDER)]
    pub border: usize,
}

#[derive(Debug, Args)]
pub struct CompositeArgs {
    /// Stack manifest CSV `date,layer_path,mask_path`.
    #[arg(long)]
    pub stack: PathBuf,
    #[arg(long, default_value = "quad")]
    pub quad_id: String,
    /// Per-pixel events CSV `col,row,deforestation_date,regrowth_date`.
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[arg(long, default_value_t = composite::DEFAULT_REF_YEAR)]
    pub ref_year: i32,
    #[arg(long)]
    pub out_mean: PathBuf,
    #[arg(long)]
    pub out_count: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Tile list CSV `quad_id,mean_path,count_path`.
    #[arg(long)]
    pub tiles: PathBuf,
    /// Per-tile statistics CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Area-wide summary CSV.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Per-tile maps: minimum observation count (inclusive).
    #[arg(long, default_value_t = 3)]
    pub min_obs: u32,
    /// Per-tile maps: heights must exceed this.
    #[arg(long, default_value_t = 0.0)]
    pub forest_min_h: f64,
    /// Area-wide statistics: observation count must exceed this.
    #[arg(long, default_value_t = 5)]
    pub eq1_obs_above: u32,
    /// Area-wide statistics: heights must exceed this.
    #[arg(long, default_value_t = 5.0)]
    pub eq1_height_above: f64,
}

#[derive(Debug, Args)]
pub struct DiffArgs {
    #[arg(long)]
    pub before: PathBuf,
    #[arg(long)]
    pub after: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SeriesArgs {
    #[arg(long)]
    pub stack: PathBuf,
    #[arg(long)]
    pub col: usize,
    #[arg(long)]
    pub row: usize,
    /// Series CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Events CSV.
    #[arg(long)]
    pub events_out: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    pub drop_m: f64,
    #[arg(long, default_value_t = 3)]
    pub persist: usize,
    /// Minimum regrowth rate in m/yr.
    #[arg(long, default_value_t = 0.5)]
    pub regrowth_rate: f64,
    #[arg(long, default_value_t = 4)]
    pub regrowth_points: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Area list CSV `area_id,pred_path,obs_path,mask_path` (mask optional).
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub bin: f64,
    /// Upper edge of the joint histogram in meters.
    #[arg(long, default_value_t = 80.0)]
    pub range: f64,
    #[arg(long, value_delimiter = ',', default_values_t = [5.0, 50.0, 95.0])]
    pub percentiles: Vec<f64>,
}

pub fn dispatch(cmd: &crate::Command, log_text: &str) -> Result<()> {
    use crate::Command::*;
    match cmd {
        Chm(a) => chm(a, log_text),
        MaskBuildings(a) => mask_buildings(a, log_text),
        Scale(a) => scale(a, log_text),
        Dataset(a) => dataset(a, log_text),
        Train(a) => train(a, log_text),
        Predict(a) => predict(a, log_text),
        Composite(a) => composite_cmd(a, log_text),
        Stats(a) => stats(a, log_text),
        Diff(a) => diff(a, log_text),
        Series(a) => series(a, log_text),
        Eval(a) => eval(a, log_text),
    }
}

fn chm(a: &ChmArgs, log_text: &str) -> Result<()> {
    let mut p = ChmParams {
        res: a.res,
        epsg: a.epsg,
        ivf_res: a.ivf_res,
        ivf_n: a.ivf_n,
        ..ChmParams::default()
    };
    match (&a.pmf_ws, &a.pmf_th) {
        (Some(ws), Some(th)) => {
            p.pmf = PmfParams {
                ws: ws.clone(),
                th: th.clone(),
                cell: a.res,
            }
        }
        (None, None) => p.pmf.cell = a.res,
        _ => bail!("--pmf-ws and --pmf-th must be given together"),
    }
    p.pmf.validate()?;
    let mut pf = PitfreeParams::default();
    if let Some(t) = &a.pitfree_thresholds {
        pf.thresholds = t.clone();
    }
    if let Some(e) = &a.pitfree_max_edge {
        pf.max_edge = e.clone();
    }
    pf.validate()?;
    p.pitfree = pf;
    let cloud = lidar::pcb_read(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let products = lidar::generate_chm(&cloud, &p)?;
    write_raster(&products.chm, &a.out)?;
    if let Some(path) = &a.dtm_out {
        write_raster(&products.dtm, path)?;
    }
    if let Some(path) = &a.dsm_out {
        write_raster(&products.dsm, path)?;
    }
    write_sidecar(&sidecar_for(&a.out), log_text)
}

fn mask_buildings(a: &MaskArgs, log_text: &str) -> Result<()> {
    let chm = read_raster(&a.chm)?;
    let polys = lidar::read_polygons(&a.polygons).with_context(|| format!("reading {}", a.polygons.display()))?;
    let buffers = BufferParams {
        outside_city: a.buffer_outside,
        in_city: a.buffer_city,
    };
    let masked = lidar::mask_buildings(&chm, &polys, buffers)?;
    write_raster(&masked, &a.out)?;
    write_sidecar(&sidecar_for(&a.out), log_text)
}

fn scale(a: &ScaleArgs, log_text: &str) -> Result<()> {
    let scaled = scale_nicfi(&read_raster(&a.input)?)?;
    write_raster(&scaled, &a.out)?;
    write_sidecar(&sidecar_for(&a.out), log_text)
}

fn dataset(a: &DatasetArgs, log_text: &str) -> Result<()> {
    let chm = read_raster(&a.chm)?;
    let catalog =
        dataset::read_catalog(open(&a.catalog)?).with_context(|| format!("reading {}", a.catalog.display()))?;
    let chosen = dataset::select_image_dates(a.chm_date, &catalog)?;
    let base = base_of(&a.catalog);
    let mut patches = Vec::new();
    let mut groups = Vec::new();
    for entry in &chosen {
        let image = read_raster(&base.join(&entry.path))?;
        if image.bands() != 4 {
            bail!("{}: expected 4 bands, found {}", entry.path.display(), image.bands());
        }
        let (target, weight) = dataset::build_targets(&chm, *image.geo(), image.width(), image.height())?;
        let start = patches.len();
        patches.extend(dataset::make_patches(&image, &target, &weight, a.tile, &entry.quad_id)?);
        groups.push((start..patches.len(), entry.date.format("%Y%m%d").to_string()));
    }
    if patches.is_empty() {
        bail!("no full {}-pixel patch fits the selected images", a.tile);
    }
    let split = dataset::split_train_val(&patches);
    create_dir(&a.out_dir)?;
    let mut rows = Vec::new();
    for (range, tag) in groups {
        let local = |v: &[usize]| {
            v.iter()
                .filter(|i| range.contains(i))
                .map(|i| i - range.start)
                .collect()
        };
        let sub = Split {
            train: local(&split.train),
            val: local(&split.val),
        };
        rows.extend(dataset::write_patches(&a.out_dir, &patches[range.clone()], &sub, &tag)?);
    }
    dataset::write_manifest(&rows, create(&a.out_dir.join("manifest.csv"))?)?;
    println!(
        "{} patches ({} validation) from {} images",
        patches.len(),
        split.val.len(),
        chosen.len()
    );
    write_sidecar(&a.out_dir.join("canopy.log"), log_text)
}

fn train(a: &TrainArgs, log_text: &str) -> Result<()> {
    let rows = dataset::manifest_read(&a.manifest)?;
    let (train_set, val_set) = dataset::load_samples(&rows, base_of(&a.manifest))?;
    let model = UNet::<f32>::new(UNetConfig::new(a.depth, a.base_channels), a.seed)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        adam: AdamConfig {
            lr: a.lr,
            ..AdamConfig::default()
        },
        seed: a.seed,
    };
    let outcome = nn::train_with_callback(model, &train_set, &val_set, &cfg, |r| {
        log::info!(
            "epoch {} train_loss {:.6} val_mae {:?}",
            r.epoch,
            r.train_loss,
            r.val_mae_m
        );
        match (a.stop_below_mae, r.val_mae_m) {
            (Some(t), Some(m)) if m < t => ControlFlow::Break(()),
            _ => ControlFlow::Continue(()),
        }
    })?;
    nn::unw_write(&outcome.best, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let mut hist = a.out.as_os_str().to_owned();
    hist.push(".history.csv");
    nn::write_history_csv(&outcome.history, create(Path::new(&hist))?)?;
    println!("best epoch {} of {}", outcome.best_epoch, outcome.history.len());
    write_sidecar(&sidecar_for(&a.out), log_text)
}

fn predict(a: &PredictArgs, log_text: &str) -> Result<()> {
    let model: UNet<f32> = nn::unw_read(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    if let (Some(image), Some(out)) = (&a.image, &a.out) {
        let h = inference::predict_quad(&model, &read_raster(image)?, a.border)?;
        write_raster(&h, out)?;
        return write_sidecar(&sidecar_for(out), log_text);
    }
    let (Some(manifest), Some(out_dir)) = (&a.manifest, &a.out_dir) else {
        bail!("give --image with --out, or --manifest with --out-dir");
    };
    let jobs = inference::read_quad_manifest(open(manifest)?)?;
    create_dir(out_dir)?;
    let summary = inference::predict_batch(&model, &jobs, base_of(manifest), out_dir, a.border);
    inference::write_summary_csv(&summary, create(&out_dir.join("summary.csv"))?)?;
    let failed = summary.iter().filter(|s| s.result.is_err()).count();
    write_sidecar(&out_dir.join("canopy.log"), log_text)?;
    if failed > 0 {
        bail!("{failed} of {} quads failed; see summary.csv", summary.len());
    }
    Ok(())
}

fn composite_cmd(a: &CompositeArgs, log_text: &str) -> Result<()> {
    let stack = composite::load_stack(&a.quad_id, &a.stack)?;
    let events = match &a.events {
        Some(p) => Some(PixelEventMap::read_csv(open(p)?, stack.width(), stack.height())?),
        None => None,
    };
    let (mean, count) = composite::temporal_mean(&stack, events.as_ref(), a.ref_year)?;
    write_raster(&mean, &a.out_mean)?;
    write_raster(&count, &a.out_count)?;
    write_sidecar(&sidecar_for(&a.out_mean), log_text)
}

fn read_tiles(path: &Path) -> Result<Vec<TileInput>> {
    let base = base_of(path);
    let mut rd = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != 3 {
            bail!("{}: expected `quad_id,mean_path,count_path`", path.display());
        }
        out.push(TileInput {
            quad_id: rec[0].to_string(),
            mean: read_raster(&base.join(&rec[1]))?,
            count: read_raster(&base.join(&rec[2]))?,
        });
    }
    Ok(out)
}

fn stats(a: &StatsArgs, log_text: &str) -> Result<()> {
    let tiles = read_tiles(&a.tiles)?;
    let map_rule = TileRule {
        min_count: a.min_obs,
        min_height: a.forest_min_h,
    };
    let eq1_rule = TileRule {
        min_count: a.eq1_obs_above + 1,
        min_height: a.eq1_height_above,
    };
    let per_tile = composite::tile_stats_batch(&tiles, map_rule)?;
    let summary = composite::area_summary(&composite::tile_stats_batch(&tiles, eq1_rule)?)?;
    composite::write_stats_csv(&per_tile, create(&a.out)?)?;
    if let Some(path) = &a.summary {
        composite::write_summary_csv(&summary, create(path)?)?;
    }
    for (k, v) in &summary {
        println!("{k}: {v:.2} m");
    }
    write_sidecar(&sidecar_for(&a.out), log_text)
}

fn diff(a: &DiffArgs, log_text: &str) -> Result<()> {
    let d = change::height_diff(&read_raster(&a.before)?, &read_raster(&a.after)?)?;
    write_raster(&d, &a.out)?;
    write_sidecar(&sidecar_for(&a.out), log_text)
}

fn series(a: &SeriesArgs, log_text: &str) -> Result<()> {
    let stack = composite::load_stack("series", &a.stack)?;
    let s = change::extract_series(&stack, a.col, a.row)?;
    let drop = change::detect_drop(
        &s,
        DropParams {
            drop_m: a.drop_m,
            persist: a.persist,
        },
    );
    let mut events = Vec::new();
    if let Some(d) = drop {
        events.push((a.col, a.row, d));
        let rp = RegrowthParams {
            min_rate: a.regrowth_rate,
            min_points: a.regrowth_points,
        };
        // Regrowth is measured from the first date after the fall.
        if let Some(g) = change::fit_regrowth(&s, d.onset, rp) {
            events.push((a.col, a.row, g));
        }
    }
    s.write_csv(create(&a.out)?)?;
    if let Some(path) = &a.events_out {
        change::write_events_csv(&events, create(path)?)?;
    }
    for (_, _, e) in &events {
        println!("{} at {}: {:.2}", e.kind.as_str(), e.onset, e.value);
    }
    write_sidecar(&sidecar_for(&a.out), log_text)
}

fn read_pairs(path: &Path) -> Result<Vec<AreaPair>> {
    let base = base_of(path);
    let mut rd = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if !(3..=4).contains(&rec.len()) {
            bail!("{}: expected `area_id,pred_path,obs_path,mask_path`", path.display());
        }
        let mask = match rec.get(3).filter(|m| !m.is_empty()) {
            Some(m) => Some(read_raster(&base.join(m))?),
            None => None,
        };
        out.push(AreaPair::new(
            &rec[0],
            read_raster(&base.join(&rec[1]))?,
            read_raster(&base.join(&rec[2]))?,
            mask,
        )?);
    }
    Ok(out)
}

fn eval(a: &EvalArgs, log_text: &str) -> Result<()> {
    let pairs = read_pairs(&a.pairs)?;
    let mae = evaluation::mae(&pairs)?;
    let hist = evaluation::density_hist2d(&pairs, a.bin, a.range)?;
    let agreement = evaluation::area_percentile_agreement(&pairs, &a.percentiles)?;
    let vals: Vec<(f64, f64)> = pairs.iter().flat_map(AreaPair::values).collect();
    let obs: Vec<f64> = vals.iter().map(|v| v.0).collect();
    let pred: Vec<f64> = vals.iter().map(|v| v.1).collect();
    let obs_hist = evaluation::value_histogram(&obs, a.bin)?;
    let pred_hist = evaluation::value_histogram(&pred, a.bin)?;

    create_dir(&a.out_dir)?;
    let d = &a.out_dir;
    let rho_keys: Vec<String> = agreement.rho.iter().map(|(p, _)| format!("rho_p{p}")).collect();
    let mut metrics: Vec<(&str, Option<f64>)> = vec![("mae_m", Some(mae)), ("valid_pixels", Some(vals.len() as f64))];
    for (k, (_, r)) in rho_keys.iter().zip(&agreement.rho) {
        metrics.push((k, *r));
    }
    evaluation::write_metrics_csv(&metrics, create(&d.join("metrics.csv"))?)?;
    write_raster(&hist.to_raster()?, &d.join("hist2d.rsf"))?;
    hist.write_pgm(create(&d.join("hist2d.pgm"))?)?;
    evaluation::write_area_csv(&agreement.per_area, create(&d.join("areas.csv"))?)?;
    evaluation::write_binned_csv(&agreement.binned, create(&d.join("binned.csv"))?)?;
    evaluation::write_histogram_csv(&obs_hist, create(&d.join("obs_histogram.csv"))?)?;
    evaluation::write_histogram_csv(&pred_hist, create(&d.join("pred_histogram.csv"))?)?;
    println!("MAE {mae:.3} m over {} pixels", vals.len());
    write_sidecar(&d.join("canopy.log"), log_text)
}
