//! End-to-end acceptance checks. Prints one line per criterion and exits
//! non-zero if any fails. Run with `cargo test -p canopy-core --test acceptance`.

use std::ops::ControlFlow;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use canopy_core::change::{
    detect_drop, fit_regrowth, ols_slope, ChangeKind, DropParams, HeightSeries, RegrowthParams, SeriesDate,
};
use canopy_core::composite::{
    temporal_mean, tile_stats, weighted_mean_eq1, weighted_percentile, ObservationStack, PixelEventMap, TileRule,
    TileStats, PERCENTILES,
};
use canopy_core::evaluation::{area_percentile_agreement, density_hist2d, mae, pearson, AreaPair};
use canopy_core::inference::{predict_quad, HEIGHT_NODATA};
use canopy_core::nn::{
    batch_gradients, gradient_check, train_with_callback, AdamConfig, BackwardFault, GradCheckOptions, TrainConfig,
    TrainSample, UNet, UNetConfig,
};
use canopy_core::raster::{
    crop_border, mirror_pad, retile, rsf_read, rsf_write, scale_chm_u8, unscale_chm, GeoTransform, Raster, RasterData,
};
use canopy_core::synth::{chm_from_cloud, lidar_scene, training_corpus, SceneParams};

const CASES: u32 = 1000;

type Criterion = fn() -> Outcome;
type Check<'a> = Box<dyn Fn() -> std::result::Result<(), String> + 'a>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn runner(seed: u8) -> TestRunner {
    let cfg = Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    };
    TestRunner::new_with_rng(
        cfg,
        proptest::test_runner::TestRng::from_seed(proptest::test_runner::RngAlgorithm::ChaCha, &[seed; 32]),
    )
}

fn geo() -> GeoTransform {
    GeoTransform::new(500.0, 900.0, 4.78, 3857).unwrap()
}

fn f32_raster(w: usize, h: usize, v: Vec<f32>) -> Raster {
    Raster::new(w, h, 1, geo(), HEIGHT_NODATA as f64, RasterData::F32(v)).unwrap()
}

fn u8_raster(w: usize, h: usize, v: Vec<u8>) -> Raster {
    Raster::new(w, h, 1, geo(), 255.0, RasterData::U8(v)).unwrap()
}

// 1. Finite-difference gradient check, with a corrupted backward as control.
fn gradient_suite() -> Outcome {
    let t0 = Instant::now();
    let model = UNet::<f64>::new(UNetConfig::new(3, 8), 2).unwrap();
    let patch = &training_corpus(1, 16, 3).unwrap()[0];
    let sample = TrainSample::<f64>::from_rasters(&patch.image, &patch.target, &patch.weight).unwrap();
    let opts = GradCheckOptions::default();
    let good = gradient_check(&model, &sample, &opts).unwrap();
    let layer = model.layers().len() / 2;
    let bad = gradient_check(
        &model,
        &sample,
        &GradCheckOptions {
            fault: Some(BackwardFault::FlipWeightSign { layer }),
            ..opts
        },
    )
    .unwrap();
    let dt = t0.elapsed();
    let pass = good.max_rel_error < 1e-4 && bad.max_rel_error > 0.1 && dt < Duration::from_secs(120);
    outcome(
        pass,
        format!(
            "max rel error {:.2e} (< 1e-4, eps {:e}, {} probes), corrupted layer {layer} {:.2e} (> 0.1), {:.1} s (< 120 s)",
            good.max_rel_error,
            opts.eps,
            good.probes,
            bad.max_rel_error,
            secs(dt)
        ),
    )
}

// 2. Synthetic training reaches held-out MAE < 2 m.
fn synthetic_training() -> Outcome {
    let t0 = Instant::now();
    let corpus = training_corpus(200, 64, 7).unwrap();
    let samples: Vec<TrainSample<f32>> = corpus
        .iter()
        .map(|p| TrainSample::from_rasters(&p.image, &p.target, &p.weight).unwrap())
        .collect();
    let (train, val) = samples.split_at(180);
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 32,
        adam: AdamConfig {
            lr: 1e-4,
            ..AdamConfig::default()
        },
        seed: 1,
    };
    let model = UNet::<f32>::new(UNetConfig::new(3, 8), 1).unwrap();
    let limit = Duration::from_secs(600);
    let mut reached = None;
    let res = train_with_callback(model, train, val, &cfg, |rec| {
        let mae = rec.val_mae_m.unwrap_or(f64::INFINITY);
        if mae < 2.0 {
            reached = Some((rec.epoch, mae));
            ControlFlow::Break(())
        } else if t0.elapsed() > limit {
            ControlFlow::Break(())
        } else {
            ControlFlow::Continue(())
        }
    });
    let dt = t0.elapsed();
    match (res, reached) {
        (Err(e), _) => outcome(false, format!("training failed: {e}")),
        (Ok(out), None) => {
            let best = out
                .history
                .iter()
                .filter_map(|r| r.val_mae_m)
                .fold(f64::INFINITY, f64::min);
            outcome(
                false,
                format!(
                    "best held-out MAE {best:.3} m after {} epochs, {:.0} s",
                    out.history.len(),
                    secs(dt)
                ),
            )
        }
        (Ok(_), Some((epoch, mae))) => outcome(
            epoch <= 200 && dt < limit,
            format!(
                "held-out MAE {mae:.3} m (< 2 m) at epoch {epoch} (<= 200), {:.0} s (< 600 s)",
                secs(dt)
            ),
        ),
    }
}

// 3. Zero-weight pixels do not influence loss or gradients.
fn weighted_loss_exclusion() -> Outcome {
    let model = UNet::<f64>::new(UNetConfig::new(2, 4), 9).unwrap();
    let corpus = training_corpus(3, 16, 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut trials = 0;
    for _ in 0..20 {
        let mut a: Vec<TrainSample<f64>> = corpus
            .iter()
            .map(|p| TrainSample::from_rasters(&p.image, &p.target, &p.weight).unwrap())
            .collect();
        let frac = rng.gen_range(0.05..0.95);
        for s in &mut a {
            for w in s.weight.data_mut() {
                if rng.gen_bool(frac) {
                    *w = 0.0;
                }
            }
        }
        let mut b = a.clone();
        for s in &mut b {
            let weights = s.weight.data().to_vec();
            for (t, w) in s.target.data_mut().iter_mut().zip(weights) {
                if w == 0.0 {
                    *t = rng.gen_range(-5.0..5.0);
                }
            }
        }
        let ra: Vec<&TrainSample<f64>> = a.iter().collect();
        let rb: Vec<&TrainSample<f64>> = b.iter().collect();
        let (sa, na, ga) = batch_gradients(&model, &ra).unwrap();
        let (sb, nb, gb) = batch_gradients(&model, &rb).unwrap();
        if a == b {
            continue;
        }
        trials += 1;
        let same = sa.to_bits() == sb.to_bits()
            && na.to_bits() == nb.to_bits()
            && ga
                .tensors()
                .iter()
                .zip(gb.tensors())
                .all(|(x, y)| x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
        if !same {
            return outcome(
                false,
                format!("loss {sa} vs {sb} or a gradient differs after randomizing masked targets"),
            );
        }
    }
    outcome(
        trials > 0,
        format!("{trials} random masks: loss and every gradient bit-identical"),
    )
}

// 4. CHM of a synthetic scene matches the known crown heights.
fn chm_scene() -> Outcome {
    let t0 = Instant::now();
    let scene = lidar_scene(SceneParams::default(), 11).unwrap();
    let products = chm_from_cloud(&scene.cloud, 32721).unwrap();
    let chm = &products.chm;
    let (mut core, mut core_ok, mut ground, mut ground_ok) = (0usize, 0usize, 0usize, 0usize);
    for row in 0..chm.height() {
        for col in 0..chm.width() {
            let (x, y) = chm.geo().pixel_center(col, row);
            let v = chm.value(0, col, row).map(|v| unscale_chm(v as u8));
            let d = |c: &canopy_core::synth::Crown| (x - c.x).hypot(y - c.y);
            if scene.crowns.iter().any(|c| d(c) <= 0.5 * c.radius) {
                core += 1;
                let truth = scene.canopy_height(x, y);
                core_ok += usize::from(v.is_some_and(|v| (v - truth).abs() <= 0.5));
            } else if scene.crowns.iter().all(|c| d(c) > c.radius + 2.0) {
                ground += 1;
                ground_ok += usize::from(v.is_some_and(|v| v.abs() <= 0.3));
            }
        }
    }
    let dt = t0.elapsed();
    let frac = core_ok as f64 / core.max(1) as f64;
    let pass = core > 0 && frac >= 0.95 && ground > 0 && ground_ok == ground && dt < Duration::from_secs(60);
    outcome(
        pass,
        format!(
            "{} crowns, core pixels within 0.5 m {core_ok}/{core} ({:.1}% >= 95%), ground within 0.3 m {ground_ok}/{ground}, {:.1} s (< 60 s)",
            scene.crowns.len(),
            100.0 * frac,
            secs(dt)
        ),
    )
}

/// Random cut positions splitting `0..n` into consecutive spans.
fn cuts(n: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let mut at: Vec<usize> = (1..n).filter(|_| rng.gen_bool(0.2)).collect();
    at.insert(0, 0);
    at.push(n);
    at.windows(2).map(|w| (w[0], w[1] - w[0])).collect()
}

/// Value at rank `ceil(p·N/100)` of the list where each value is repeated
/// by its weight. `p10` is `p` in tenths.
fn flattened_nearest_rank(items: &[(f64, u64)], p10: u64) -> f64 {
    let mut flat: Vec<f64> = items
        .iter()
        .flat_map(|&(v, w)| std::iter::repeat_n(v, w as usize))
        .collect();
    flat.sort_by(f64::total_cmp);
    let n = flat.len() as u64;
    let rank = (p10 * n).div_ceil(1000).max(1);
    flat[rank as usize - 1]
}

// 5. Tile-weighted statistics equal the pixel-level ones.
fn eq1_equivalence() -> Outcome {
    let mut runner = runner(5);
    let res = runner.run(&(4usize..40, 4usize..40, any::<u64>()), |(w, h, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mean: Vec<f32> = (0..w * h)
            .map(|_| {
                if rng.gen_bool(0.1) {
                    HEIGHT_NODATA
                } else {
                    rng.gen_range(0.0f32..45.0)
                }
            })
            .collect();
        let count: Vec<i16> = (0..w * h).map(|_| rng.gen_range(0..12)).collect();
        let rule = TileRule::eq1();
        let direct: Vec<f64> = mean
            .iter()
            .zip(&count)
            .filter(|(&m, &c)| m != HEIGHT_NODATA && rule.admits(m as f64, c as f64))
            .map(|(&m, _)| m as f64)
            .collect();
        let mean_r = f32_raster(w, h, mean);
        let count_r = Raster::new(w, h, 1, geo(), -1.0, RasterData::I16(count)).unwrap();

        let mut tiles: Vec<TileStats> = Vec::new();
        for (r0, rh) in cuts(h, &mut rng) {
            for (c0, cw) in cuts(w, &mut rng) {
                let win = canopy_core::raster::Window::new(c0, r0, cw, rh);
                let id = format!("t{:04}", tiles.len());
                tiles.push(tile_stats(&id, &mean_r.window(win).unwrap(), &count_r.window(win).unwrap(), rule).unwrap());
            }
        }
        let got = weighted_mean_eq1(&tiles);
        if direct.is_empty() {
            prop_assert!(got.is_err());
            return Ok(());
        }
        let want = direct.iter().sum::<f64>() / direct.len() as f64;
        let got = got.unwrap();
        prop_assert!((got - want).abs() <= 1e-9, "eq1 {got} vs pixel mean {want}");

        let got_p = weighted_percentile(&tiles, &PERCENTILES).unwrap();
        for (k, (&p, g)) in PERCENTILES.iter().zip(got_p).enumerate() {
            let items: Vec<(f64, u64)> = tiles
                .iter()
                .filter(|t| t.valid_observations > 0)
                .map(|t| (t.percentiles.unwrap()[k], t.valid_observations))
                .collect();
            let want = flattened_nearest_rank(&items, (p * 10.0) as u64);
            prop_assert!(g.to_bits() == want.to_bits(), "p{p}: {g} vs oracle {want}");
        }
        Ok(())
    });
    match res {
        Ok(()) => outcome(
            true,
            format!("{CASES} random partitions: mean within 1e-9, 7 weighted percentiles exact"),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn arb_raster() -> impl Strategy<Value = Raster> {
    (1usize..24, 1usize..24, 1usize..4, 0u8..3, any::<u64>()).prop_map(|(w, h, bands, dt, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = w * h * bands;
        let (data, nodata) = match dt {
            0 => (RasterData::U8((0..n).map(|_| rng.gen()).collect()), 255.0),
            1 => (RasterData::I16((0..n).map(|_| rng.gen()).collect()), -32768.0),
            _ => (
                RasterData::F32((0..n).map(|_| rng.gen_range(-1e4f32..1e4)).collect()),
                HEIGHT_NODATA as f64,
            ),
        };
        let g = GeoTransform::new(
            rng.gen_range(-1e6..1e6),
            rng.gen_range(-1e6..1e6),
            rng.gen_range(0.1..30.0),
            rng.gen_range(1..40000),
        )
        .unwrap();
        Raster::new(w, h, bands, g, nodata, data).unwrap()
    })
}

// 6. Round trips of the raster geometry and quantization helpers.
fn geometry_round_trips() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.rsf");
    let checks: [(&str, Check); 4] = [
        (
            "rsf read∘write",
            Box::new(|| {
                runner(61)
                    .run(&arb_raster(), |r| {
                        rsf_write(&r, &path).unwrap();
                        prop_assert_eq!(rsf_read(&path).unwrap(), r);
                        Ok(())
                    })
                    .map_err(|e| e.to_string())
            }),
        ),
        (
            "retile reassembly",
            Box::new(|| {
                runner(62)
                    .run(&(arb_raster(), 1usize..30), |(r, tile)| {
                        let mut out =
                            Raster::filled(r.width(), r.height(), r.bands(), r.dtype(), *r.geo(), r.nodata(), 0.0)
                                .unwrap();
                        let tiles_x = r.width().div_ceil(tile);
                        for (idx, t) in retile(&r, tile).unwrap() {
                            out.paste(&t, (idx % tiles_x) * tile, (idx / tiles_x) * tile).unwrap();
                        }
                        prop_assert_eq!(out, r);
                        Ok(())
                    })
                    .map_err(|e| e.to_string())
            }),
        ),
        (
            "crop_border∘mirror_pad",
            Box::new(|| {
                runner(63)
                    .run(&(arb_raster(), 0usize..24), |(r, b)| {
                        let b = b % r.width().min(r.height());
                        prop_assert_eq!(crop_border(&mirror_pad(&r, b).unwrap(), b).unwrap(), r);
                        Ok(())
                    })
                    .map_err(|e| e.to_string())
            }),
        ),
        (
            "scale_chm within 0.2 m",
            Box::new(|| {
                runner(64)
                    .run(&(0.0f64..=102.0), |h| {
                        let back = unscale_chm(scale_chm_u8(h).unwrap());
                        prop_assert!((back - h).abs() <= 0.2 + 1e-12, "{h} -> {back}");
                        Ok(())
                    })
                    .map_err(|e| e.to_string())
            }),
        ),
    ];
    let mut failed = Vec::new();
    for (name, check) in &checks {
        if let Err(e) = check() {
            failed.push(format!("{name}: {e}"));
        }
    }
    if failed.is_empty() {
        outcome(
            true,
            format!("rsf, retile, pad/crop and CHM scaling hold on {CASES} random cases each"),
        )
    } else {
        outcome(false, failed.join("; "))
    }
}

// 7. Quad prediction is pad, forward, crop; a zero head predicts 50 m.
fn inference_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(70);
    let quad = Raster::new(
        256,
        256,
        4,
        geo(),
        0.0,
        RasterData::U8((0..4 * 256 * 256).map(|_| rng.gen()).collect()),
    )
    .unwrap();
    let mut model = UNet::<f32>::new(UNetConfig::new(2, 4), 71).unwrap();
    let border = 64;
    let got = predict_quad(&model, &quad, border).unwrap();

    let padded = mirror_pad(&quad, border).unwrap();
    let (pw, ph) = (padded.width(), padded.height());
    let input: Vec<f32> = (0..padded.data().len())
        .map(|i| (padded.data().get(i) / 255.0) as f32)
        .collect();
    let x = canopy_core::nn::Tensor::from_vec([1, 4, ph, pw], input).unwrap();
    let y: Vec<f32> = model
        .forward(&x)
        .unwrap()
        .into_vec()
        .into_iter()
        .map(|v| v * 100.0)
        .collect();
    let full = Raster::new(pw, ph, 1, *padded.geo(), HEIGHT_NODATA as f64, RasterData::F32(y)).unwrap();
    let manual = crop_border(&full, border).unwrap();
    let bit_equal =
        got == manual && (0..got.data().len()).all(|i| got.data().get(i).to_bits() == manual.data().get(i).to_bits());

    let head = model.layers_mut().last_mut().unwrap();
    head.weight.iter_mut().for_each(|w| *w = 0.0);
    head.bias.iter_mut().for_each(|b| *b = 0.0);
    let flat = predict_quad(&model, &quad, border).unwrap();
    let all_50 = (0..flat.data().len()).all(|i| flat.data().get(i) == 50.0);
    outcome(
        bit_equal && all_50 && got.width() == 256 && got.height() == 256,
        format!(
            "256x256 quad bit-equal to manual composition: {bit_equal}; zero head gives 50.0 m everywhere: {all_50}"
        ),
    )
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

/// Everything downstream of a stack, as bit patterns.
fn composite_fingerprint(stack: &ObservationStack, events: &PixelEventMap) -> Vec<u64> {
    let (mean, count) = temporal_mean(stack, Some(events), 2020).unwrap();
    let mut out: Vec<u64> = (0..mean.data().len()).map(|i| mean.data().get(i).to_bits()).collect();
    out.extend((0..count.data().len()).map(|i| count.data().get(i).to_bits()));
    for rule in [
        TileRule::map(),
        TileRule {
            min_count: 2,
            min_height: 5.0,
        },
    ] {
        let mut tiles = Vec::new();
        for (idx, (m, c)) in retile(&mean, 5)
            .unwrap()
            .into_iter()
            .zip(retile(&count, 5).unwrap())
            .enumerate()
        {
            let s = tile_stats(&format!("q{idx:03}"), &m.1, &c.1, rule).unwrap();
            out.push(s.valid_observations);
            out.extend(s.mean_m.map(f64::to_bits));
            out.extend(s.percentiles.into_iter().flatten().map(f64::to_bits));
            tiles.push(s);
        }
        if let Ok(m) = weighted_mean_eq1(&tiles) {
            out.push(m.to_bits());
            out.extend(
                weighted_percentile(&tiles, &PERCENTILES)
                    .unwrap()
                    .into_iter()
                    .map(f64::to_bits),
            );
        }
    }
    out
}

// 8. Masked or event-excluded observations never reach the outputs.
fn composite_exclusion() -> Outcome {
    let res = runner(8).run(&(3usize..14, 3usize..14, 1usize..9, any::<u64>()), |(w, h, t, seed)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dates: Vec<NaiveDate> = (0..t)
            .map(|k| date(2019, 1, 1) + chrono::Days::new(45 * k as u64))
            .collect();
        let masks: Vec<Raster> = (0..t)
            .map(|_| {
                u8_raster(
                    w,
                    h,
                    (0..w * h)
                        .map(|_| if rng.gen_bool(0.35) { rng.gen_range(1..4) } else { 0 })
                        .collect(),
                )
            })
            .collect();
        let layers: Vec<Raster> = (0..t)
            .map(|_| {
                f32_raster(
                    w,
                    h,
                    (0..w * h)
                        .map(|_| {
                            if rng.gen_bool(0.05) {
                                HEIGHT_NODATA
                            } else {
                                rng.gen_range(0.0f32..40.0)
                            }
                        })
                        .collect(),
                )
            })
            .collect();
        let mut events = PixelEventMap::empty(w, h);
        for _ in 0..rng.gen_range(0..4) {
            let (c, r) = (rng.gen_range(0..w), rng.gen_range(0..h));
            events
                .set(c, r, Some(date(2019, rng.gen_range(1..13), 1)), None)
                .unwrap();
        }
        let base = ObservationStack::new("q", dates.clone(), layers.clone(), masks.clone()).unwrap();
        let want = composite_fingerprint(&base, &events);

        let mut perturbed = layers;
        for (k, layer) in perturbed.iter_mut().enumerate() {
            let mut v: Vec<f32> = (0..w * h).map(|i| layer.data().get(i) as f32).collect();
            for (i, x) in v.iter_mut().enumerate() {
                let (c, r) = (i % w, i / w);
                if masks[k].get(0, c, r) != 0.0 || events.excludes(c, r, 2020) {
                    *x = rng.gen_range(-50.0f32..500.0);
                }
            }
            *layer = f32_raster(w, h, v);
        }
        let changed = ObservationStack::new("q", dates, perturbed, masks).unwrap();
        prop_assert!(composite_fingerprint(&changed, &events) == want);
        Ok(())
    });
    match res {
        Ok(()) => outcome(
            true,
            format!("{CASES} random stacks: mean, count, tile and weighted statistics bit-identical"),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

/// Series over a uniform 5x5 patch.
fn series(values: &[(NaiveDate, f64)]) -> HeightSeries {
    let dates = values
        .iter()
        .map(|&(d, v)| SeriesDate {
            date: d,
            center: Some(v),
            window: vec![Some(v); 25],
        })
        .collect();
    HeightSeries { col: 0, row: 0, dates }
}

// 9. Drop detection and regrowth slope on hand-built series.
fn change_detection() -> Outcome {
    let dates: Vec<NaiveDate> = (0..7).map(|k| date(2021, 1 + k, 1)).collect();
    let drop = series(
        &dates
            .iter()
            .zip([25.0, 25.0, 25.0, 3.0, 3.0, 3.0, 3.0])
            .map(|(&d, v)| (d, v))
            .collect::<Vec<_>>(),
    );
    let ev = detect_drop(&drop, DropParams::default());
    let drop_ok = ev
        .as_ref()
        .is_some_and(|e| e.kind == ChangeKind::Drop && e.onset == dates[3] && e.value == 22.0);

    let start = date(2018, 3, 1);
    let (a, b) = (1.37, 2.5);
    let pts: Vec<(NaiveDate, f64)> = (1..=9)
        .map(|k| {
            let d = start + chrono::Days::new(41 * k);
            let t = (d - start).num_days() as f64 / 365.25;
            (d, b + a * t)
        })
        .collect();
    let fit = fit_regrowth(&series(&pts), start, RegrowthParams::default());
    let xs: Vec<f64> = pts
        .iter()
        .map(|(d, _)| (*d - start).num_days() as f64 / 365.25)
        .collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let slope_err = fit.as_ref().map_or(f64::INFINITY, |e| (e.value - a).abs());
    let ols_err = ols_slope(&xs, &ys).map_or(f64::INFINITY, |s| (s - a).abs());
    outcome(
        drop_ok && slope_err <= 1e-9 && ols_err <= 1e-9,
        format!(
            "drop {:?} at {:?} (want 22 m at {}); regrowth slope error {slope_err:.1e} m/yr (<= 1e-9)",
            ev.as_ref().map(|e| e.value),
            ev.as_ref().map(|e| e.onset),
            dates[3]
        ),
    )
}

fn oracle_rank(sorted: &[f64], p10: usize) -> f64 {
    let n = sorted.len();
    if p10 == 500 && n.is_multiple_of(2) {
        return (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0;
    }
    sorted[(p10 * n).div_ceil(1000).max(1) - 1]
}

fn oracle_pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    (x.len() >= 2 && sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

// 10. Evaluation metrics against brute-force implementations.
fn evaluation_oracles() -> Outcome {
    let res = runner(10).run(
        &(1usize..6, 2usize..10, 2usize..10, any::<u64>()),
        |(areas, w, h, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut pairs = Vec::new();
            let mut raw: Vec<(Vec<f32>, Vec<f32>, Vec<u8>)> = Vec::new();
            for a in 0..areas {
                let gen = |rng: &mut ChaCha8Rng| -> Vec<f32> {
                    (0..w * h)
                        .map(|_| {
                            if rng.gen_bool(0.1) {
                                HEIGHT_NODATA
                            } else {
                                rng.gen_range(0.0f32..70.0)
                            }
                        })
                        .collect()
                };
                let (p, o) = (gen(&mut rng), gen(&mut rng));
                let m: Vec<u8> = (0..w * h).map(|_| u8::from(rng.gen_bool(0.2))).collect();
                pairs.push(
                    AreaPair::new(
                        format!("a{a}"),
                        f32_raster(w, h, p.clone()),
                        f32_raster(w, h, o.clone()),
                        Some(u8_raster(w, h, m.clone())),
                    )
                    .unwrap(),
                );
                raw.push((p, o, m));
            }
            // brute force: every pixel where both maps are valid and unmasked
            let valid: Vec<Vec<(f64, f64)>> = raw
                .iter()
                .map(|(p, o, m)| {
                    (0..w * h)
                        .filter(|&i| p[i] != HEIGHT_NODATA && o[i] != HEIGHT_NODATA && m[i] == 0)
                        .map(|i| (o[i] as f64, p[i] as f64))
                        .collect()
                })
                .collect();
            let all: Vec<(f64, f64)> = valid.iter().flatten().copied().collect();

            match mae(&pairs) {
                Ok(got) => {
                    let want = all.iter().map(|(o, p)| (o - p).abs()).sum::<f64>() / all.len() as f64;
                    prop_assert!((got - want).abs() <= 1e-12, "mae {got} vs {want}");
                }
                Err(_) => prop_assert!(all.is_empty()),
            }

            let hist = density_hist2d(&pairs, 1.0, 80.0).unwrap();
            prop_assert_eq!(hist.total(), all.len() as u64);
            for &(o, p) in &all {
                let (bo, bp) = (o.floor() as usize, p.floor() as usize);
                let want = all
                    .iter()
                    .filter(|x| x.0.floor() as usize == bo && x.1.floor() as usize == bp)
                    .count() as u64;
                prop_assert_eq!(hist.get(bo, bp), want);
            }

            let ps = [5.0, 50.0, 95.0];
            let agree = area_percentile_agreement(&pairs, &ps).unwrap();
            let mut xs_by_p = vec![Vec::new(); 3];
            let mut ys_by_p = vec![Vec::new(); 3];
            for (a, v) in valid.iter().enumerate() {
                if v.is_empty() {
                    continue;
                }
                let mut o: Vec<f64> = v.iter().map(|x| x.0).collect();
                let mut q: Vec<f64> = v.iter().map(|x| x.1).collect();
                o.sort_by(|a, b| a.partial_cmp(b).unwrap());
                q.sort_by(|a, b| a.partial_cmp(b).unwrap());
                for (k, &p) in ps.iter().enumerate() {
                    let (wo, wq) = (oracle_rank(&o, p as usize * 10), oracle_rank(&q, p as usize * 10));
                    let row = agree
                        .per_area
                        .iter()
                        .find(|r| r.area_id == format!("a{a}") && r.p == p)
                        .unwrap();
                    prop_assert!((row.obs_m - wo).abs() <= 1e-12 && (row.pred_m - wq).abs() <= 1e-12);
                    xs_by_p[k].push(wo);
                    ys_by_p[k].push(wq);
                }
            }
            for (k, (_, rho)) in agree.rho.iter().enumerate() {
                match (rho, oracle_pearson(&xs_by_p[k], &ys_by_p[k])) {
                    (Some(g), Some(o)) => prop_assert!((g - o).abs() <= 1e-12, "rho {g} vs {o}"),
                    (None, None) => {}
                    (g, o) => return Err(TestCaseError::fail(format!("rho {g:?} vs oracle {o:?}"))),
                }
            }

            let n = rng.gen_range(2..50);
            let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..60.0)).collect();
            let (slope, icpt) = (rng.gen_range(0.1..3.0), rng.gen_range(-10.0..10.0));
            let ys: Vec<f64> = xs.iter().map(|x| slope * x + icpt).collect();
            prop_assert_eq!(pearson(&xs, &ys), Some(1.0));
            Ok(())
        },
    );
    match res {
        Ok(()) => outcome(
            true,
            format!("{CASES} random inputs: MAE, hist2d, percentiles and rho within 1e-12; affine rho exactly 1"),
        ),
        Err(e) => outcome(false, e.to_string()),
    }
}

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("gradient check", gradient_suite),
        ("synthetic training", synthetic_training),
        ("weighted-loss exclusion", weighted_loss_exclusion),
        ("CHM synthetic scene", chm_scene),
        ("tile-weighted statistics", eq1_equivalence),
        ("geometry round trips", geometry_round_trips),
        ("inference contract", inference_contract),
        ("composite exclusion", composite_exclusion),
        ("change detection", change_detection),
        ("evaluation oracles", evaluation_oracles),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|k| k != n) {
            continue;
        }
        let o = check();
        failures += usize::from(!o.pass);
        println!(
            "criterion {n:2} {name}: {} - {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
