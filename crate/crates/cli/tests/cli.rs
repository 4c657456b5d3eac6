use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use canopy_core::inference::HEIGHT_NODATA;
use canopy_core::lidar::pcb_write;
use canopy_core::raster::{rsf_read, rsf_write, DType, GeoTransform, Raster, RasterData};
use canopy_core::synth::{lidar_scene, SceneParams};

fn canopy(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_canopy"))
        .args(args)
        .current_dir(dir)
        .env_remove("CANOPY_THREADS")
        .output()
        .expect("spawn canopy")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn small_scene(dir: &Path) -> PathBuf {
    let params = SceneParams {
        size: 60.0,
        crowns: 3,
        ..SceneParams::default()
    };
    let scene = lidar_scene(params, 3).unwrap();
    let path = dir.join("pts.pcb");
    pcb_write(&scene.cloud, &path).unwrap();
    path
}

#[test]
fn no_arguments_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = canopy(&[], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = canopy(
        &["diff", "--before", "a", "--after", "b", "--out", "c", "--colour"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("c").exists());
}

#[test]
fn missing_config_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = canopy(&["train", "--config", "missing.cfg"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.cfg"));
}

#[test]
fn unknown_config_key_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    small_scene(dir.path());
    std::fs::write(dir.path().join("run.cfg"), "res = 1\nflavour = x\n").unwrap();
    let out = canopy(
        &["chm", "--in", "pts.pcb", "--out", "chm.rsf", "--config", "run.cfg"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("flavour"));
    assert!(!dir.path().join("chm.rsf").exists());
}

#[test]
fn chm_runs_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    small_scene(dir.path());
    std::fs::write(dir.path().join("run.cfg"), "# products\nres = 1\nivf_n = 5\n").unwrap();
    ok(&canopy(
        &[
            "chm",
            "--in",
            "pts.pcb",
            "--out",
            "a.rsf",
            "--config",
            "run.cfg",
            "--threads",
            "1",
        ],
        dir.path(),
    ));
    ok(&canopy(
        &[
            "chm",
            "--in",
            "pts.pcb",
            "--out",
            "b.rsf",
            "--res",
            "1",
            "--threads",
            "2",
        ],
        dir.path(),
    ));
    let a = std::fs::read(dir.path().join("a.rsf")).unwrap();
    let b = std::fs::read(dir.path().join("b.rsf")).unwrap();
    assert_eq!(a, b);
    let chm = rsf_read(dir.path().join("a.rsf")).unwrap();
    assert_eq!(chm.dtype(), DType::U8);
    let log = std::fs::read_to_string(dir.path().join("a.rsf.log")).unwrap();
    assert!(
        log.contains("command=chm") && log.contains("res=1") && log.contains("seed=none"),
        "{log}"
    );
}

#[test]
fn missing_input_is_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = canopy(&["chm", "--in", "nope.pcb", "--out", "chm.rsf"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.pcb"));
    assert!(!dir.path().join("chm.rsf").exists());
}

fn write(dir: &Path, name: &str, r: &Raster) {
    rsf_write(r, dir.join(name)).unwrap();
}

/// 16×16 4-band image over a 1 m CHM whose height follows NIR.
fn imagery(dir: &Path) {
    let res = 4.78;
    let (w, h) = (16usize, 16usize);
    let img_geo = GeoTransform::new(0.0, h as f64 * res, res, 3857).unwrap();
    let mut px = vec![0u8; 4 * w * h];
    for r in 0..h {
        for c in 0..w {
            let nir = (40 + 8 * c + 3 * r) as u8;
            for b in 0..4 {
                px[b * w * h + r * w + c] = if b == 3 { nir } else { nir / 2 };
            }
        }
    }
    let image = Raster::new(w, h, 4, img_geo, 255.0, RasterData::U8(px)).unwrap();
    write(dir, "img.rsf", &image);

    let n = (w as f64 * res) as usize;
    let chm_geo = GeoTransform::new(0.0, n as f64, 1.0, 3857).unwrap();
    let mut chm = vec![0u8; n * n];
    for r in 0..n {
        for c in 0..n {
            chm[r * n + c] = (20 + c / 2) as u8;
        }
    }
    write(
        dir,
        "chm.rsf",
        &Raster::new(n, n, 1, chm_geo, 255.0, RasterData::U8(chm)).unwrap(),
    );
    std::fs::write(
        dir.join("catalog.csv"),
        "quad_id,date,cadence,path\nq1,2021-06-01,monthly,img.rsf\n",
    )
    .unwrap();
}

fn height_map(values: impl Fn(usize, usize) -> f32) -> Raster {
    let geo = GeoTransform::new(0.0, 16.0 * 4.78, 4.78, 3857).unwrap();
    let v = (0..256).map(|i| values(i % 16, i / 16)).collect();
    Raster::new(16, 16, 1, geo, HEIGHT_NODATA as f64, RasterData::F32(v)).unwrap()
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    imagery(d);

    ok(&canopy(
        &[
            "dataset",
            "--chm",
            "chm.rsf",
            "--chm-date",
            "2021-06-10",
            "--catalog",
            "catalog.csv",
            "--out-dir",
            "patches",
            "--tile",
            "8",
        ],
        d,
    ));
    let manifest = std::fs::read_to_string(d.join("patches/manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 5, "{manifest}");
    assert_eq!(manifest.matches(",val,").count(), 1);

    let train = [
        "train",
        "--manifest",
        "patches/manifest.csv",
        "--out",
        "m.unw",
        "--depth",
        "1",
        "--base-channels",
        "4",
        "--epochs",
        "2",
        "--batch-size",
        "2",
        "--seed",
        "5",
    ];
    ok(&canopy(&train, d));
    let first = std::fs::read(d.join("m.unw")).unwrap();
    ok(&canopy(&train, d));
    assert_eq!(
        first,
        std::fs::read(d.join("m.unw")).unwrap(),
        "training is not reproducible"
    );
    assert!(std::fs::read_to_string(d.join("m.unw.log")).unwrap().contains("seed=5"));

    ok(&canopy(
        &[
            "predict", "--model", "m.unw", "--image", "img.rsf", "--out", "h.rsf", "--border", "4",
        ],
        d,
    ));
    let pred = rsf_read(d.join("h.rsf")).unwrap();
    assert_eq!((pred.width(), pred.height()), (16, 16));
    std::fs::write(d.join("quads.csv"), "quad_id,image_path\nq1,img.rsf\nq2,absent.rsf\n").unwrap();
    let out = canopy(
        &[
            "predict",
            "--model",
            "m.unw",
            "--manifest",
            "quads.csv",
            "--out-dir",
            "pred",
            "--border",
            "4",
        ],
        d,
    );
    assert_eq!(out.status.code(), Some(1));
    let summary = std::fs::read_to_string(d.join("pred/summary.csv")).unwrap();
    assert!(summary.contains("q1,ok") && summary.contains("q2,error"), "{summary}");

    // Three dates; the middle one is fully cloudy and carries junk.
    let clear = Raster::filled(16, 16, 1, DType::U8, *pred.geo(), 255.0, 0.0).unwrap();
    let cloudy = Raster::filled(16, 16, 1, DType::U8, *pred.geo(), 255.0, 1.0).unwrap();
    write(d, "l1.rsf", &height_map(|c, _| 20.0 + c as f32));
    write(d, "l2.rsf", &height_map(|_, _| 999.0));
    write(
        d,
        "l3.rsf",
        &height_map(|c, r| if c < 8 && r < 8 { 2.0 } else { 22.0 + c as f32 }),
    );
    write(d, "clear.rsf", &clear);
    write(d, "cloudy.rsf", &cloudy);
    let stack = "date,layer_path,mask_path\n2020-03-01,l1.rsf,clear.rsf\n2020-09-01,l2.rsf,cloudy.rsf\n2021-03-01,l3.rsf,clear.rsf\n";
    std::fs::write(d.join("stack.csv"), stack).unwrap();

    ok(&canopy(
        &[
            "composite",
            "--stack",
            "stack.csv",
            "--out-mean",
            "mean.rsf",
            "--out-count",
            "count.rsf",
        ],
        d,
    ));
    let mean = rsf_read(d.join("mean.rsf")).unwrap();
    let count = rsf_read(d.join("count.rsf")).unwrap();
    assert_eq!(mean.get(0, 10, 10), 31.0);
    assert_eq!(count.get(0, 10, 10), 2.0);

    std::fs::write(
        d.join("tiles.csv"),
        "quad_id,mean_path,count_path\nq1,mean.rsf,count.rsf\n",
    )
    .unwrap();
    let out = canopy(
        &[
            "stats",
            "--tiles",
            "tiles.csv",
            "--out",
            "stats.csv",
            "--summary",
            "table.csv",
            "--min-obs",
            "2",
            "--eq1-obs-above",
            "1",
        ],
        d,
    );
    ok(&out);
    let table = std::fs::read_to_string(d.join("table.csv")).unwrap();
    assert!(table.contains("\"Median, Percentile 50\""), "{table}");
    assert!(std::fs::read_to_string(d.join("stats.csv"))
        .unwrap()
        .starts_with("quad_id,valid_obs,mean_m,p2_5"));

    ok(&canopy(
        &["diff", "--before", "l1.rsf", "--after", "l3.rsf", "--out", "d.rsf"],
        d,
    ));
    assert_eq!(rsf_read(d.join("d.rsf")).unwrap().get(0, 0, 0), -18.0);

    ok(&canopy(
        &[
            "series",
            "--stack",
            "stack.csv",
            "--col",
            "0",
            "--row",
            "0",
            "--out",
            "s.csv",
            "--events-out",
            "ev.csv",
            "--persist",
            "1",
        ],
        d,
    ));
    let s = std::fs::read_to_string(d.join("s.csv")).unwrap();
    assert_eq!(s.lines().nth(2).unwrap(), "2020-09-01,,,0");
    let ev = std::fs::read_to_string(d.join("ev.csv")).unwrap();
    assert!(ev.contains("0,0,drop,2021-03-01,"), "{ev}");

    std::fs::write(
        d.join("pairs.csv"),
        "area_id,pred_path,obs_path,mask_path\na,l1.rsf,l3.rsf,\nb,l3.rsf,l1.rsf,clear.rsf\n",
    )
    .unwrap();
    ok(&canopy(&["eval", "--pairs", "pairs.csv", "--out-dir", "eval"], d));
    for f in [
        "metrics.csv",
        "hist2d.rsf",
        "hist2d.pgm",
        "areas.csv",
        "binned.csv",
        "obs_histogram.csv",
        "canopy.log",
    ] {
        assert!(d.join("eval").join(f).exists(), "{f}");
    }
    let metrics = std::fs::read_to_string(d.join("eval/metrics.csv")).unwrap();
    assert!(metrics.contains("valid_pixels,512"), "{metrics}");
}
