//! Browser demo: three small operations on synthetic data, each returning
//! an RGBA image and a short text summary.
//!
//! The `*_view` functions are plain Rust and run natively; the exported
//! wrappers only convert errors for JavaScript.

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wasm_bindgen::prelude::*;

use canopy_core::composite::{temporal_mean, tile_stats, ObservationStack, TileRule, PERCENTILES};
use canopy_core::inference::HEIGHT_NODATA;
use canopy_core::raster::{crop_border, mirror_pad, unscale_chm, GeoTransform, Raster, RasterData};
use canopy_core::synth::{chm_from_cloud, lidar_scene, SceneParams};
use canopy_core::Result;

#[wasm_bindgen]
#[derive(Debug, Clone)]
pub struct View {
    width: usize,
    height: usize,
    rgba: Vec<u8>,
    text: String,
}

#[wasm_bindgen]
impl View {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }
    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }
    #[wasm_bindgen(getter)]
    pub fn rgba(&self) -> Vec<u8> {
        self.rgba.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn text(&self) -> String {
        self.text.clone()
    }
}

/// Dark green to yellow ramp; `None` is drawn grey.
fn color(v: Option<f64>, lo: f64, hi: f64) -> [u8; 4] {
    const STOPS: [[f64; 3]; 4] = [
        [20.0, 30.0, 60.0],
        [30.0, 110.0, 70.0],
        [120.0, 190.0, 60.0],
        [250.0, 230.0, 90.0],
    ];
    let Some(v) = v else {
        return [128, 128, 128, 255];
    };
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let k = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - k as f64;
    let c = |i: usize| (STOPS[k][i] + f * (STOPS[k + 1][i] - STOPS[k][i])).round() as u8;
    [c(0), c(1), c(2), 255]
}

fn paint(values: &[Option<f64>], lo: f64, hi: f64) -> Vec<u8> {
    values.iter().flat_map(|&v| color(v, lo, hi)).collect()
}

/// Synthetic LiDAR scene through the whole CHM chain.
pub fn chm_scene_view(seed: u64, crowns: usize, size_m: f64) -> Result<View> {
    let params = SceneParams {
        size: size_m,
        crowns,
        ..SceneParams::default()
    };
    let scene = lidar_scene(params, seed)?;
    let products = chm_from_cloud(&scene.cloud, 32721)?;
    let chm = &products.chm;
    let (w, h) = (chm.width(), chm.height());
    let mut heights = Vec::with_capacity(w * h);
    let (mut inside, mut close) = (0usize, 0usize);
    for row in 0..h {
        for col in 0..w {
            let v = chm.value(0, col, row).map(|v| unscale_chm(v as u8));
            heights.push(v);
            let (x, y) = chm.geo().pixel_center(col, row);
            if let (Some(v), Some(t)) = (v, scene.crowns.iter().find_map(|c| c.height_at(x, y))) {
                inside += 1;
                close += usize::from((v - t).abs() <= 0.5);
            }
        }
    }
    let ground = products.denoised.points.iter().filter(|p| p.class.code() == 1).count();
    let text = format!(
        "{} points, {} removed as noise, {} ground. CHM {w}×{h} at 1 m. {:.1}% of crown pixels within 0.5 m of the true height.",
        scene.cloud.len(),
        scene.cloud.len() - products.denoised.len(),
        ground,
        100.0 * close as f64 / inside.max(1) as f64
    );
    Ok(View {
        width: w,
        height: h,
        rgba: paint(&heights, 0.0, 40.0),
        text,
    })
}

/// Mirrored border around a test pattern, with the original extent framed.
pub fn mirror_pad_view(size: usize, border: usize) -> Result<View> {
    let geo = GeoTransform::new(0.0, size as f64, 1.0, 0)?;
    let c = size as f64 / 3.0;
    let v: Vec<f32> = (0..size * size)
        .map(|i| {
            let (x, y) = ((i % size) as f64, (i / size) as f64);
            let disc = if (x - c).hypot(y - c) < c / 2.0 { 15.0 } else { 0.0 };
            (x + 0.5 * y + disc) as f32
        })
        .collect();
    let src = Raster::new(size, size, 1, geo, HEIGHT_NODATA as f64, RasterData::F32(v))?;
    let padded = mirror_pad(&src, border)?;
    let identity = crop_border(&padded, border)? == src;
    let pw = padded.width();
    let hi = 1.5 * size as f64 + 15.0;
    let mut rgba = paint(&padded.band_values(0), 0.0, hi);
    for i in 0..pw * pw {
        let (x, y) = (i % pw, i / pw);
        let edge = |a: usize| a + 1 == border || a == border + size;
        let inside = |a: usize| a + 1 >= border && a <= border + size;
        if (edge(x) && inside(y)) || (edge(y) && inside(x)) {
            rgba[4 * i..4 * i + 4].copy_from_slice(&[220, 40, 40, 255]);
        }
    }
    Ok(View {
        width: pw,
        height: pw,
        rgba,
        text: format!(
            "{size}×{size} padded by {border} to {pw}×{pw}; cropping restores the input exactly: {identity}."
        ),
    })
}

/// Noisy multi-date heights under random clouds, composited; the mean map
/// (left) is shown beside the observation counts (right).
pub fn composite_view(dates: usize, cloud_cover: f64, seed: u64) -> Result<View> {
    const N: usize = 64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let geo = GeoTransform::new(0.0, N as f64 * 4.78, 4.78, 3857)?;
    let blobs: Vec<(f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.gen_range(0.0..N as f64),
                rng.gen_range(0.0..N as f64),
                rng.gen_range(10.0..30.0),
            )
        })
        .collect();
    let truth: Vec<f64> = (0..N * N)
        .map(|i| {
            let (x, y) = ((i % N) as f64, (i / N) as f64);
            5.0 + blobs
                .iter()
                .map(|&(bx, by, h)| h * (-((x - bx).powi(2) + (y - by).powi(2)) / 120.0).exp())
                .sum::<f64>()
        })
        .collect();
    let (mut ds, mut layers, mut masks) = (Vec::new(), Vec::new(), Vec::new());
    let start = NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date");
    for t in 0..dates.max(1) {
        ds.push(start + chrono::Months::new(t as u32));
        let layer: Vec<f32> = truth.iter().map(|h| (h + rng.gen_range(-2.0..2.0)) as f32).collect();
        layers.push(Raster::new(N, N, 1, geo, HEIGHT_NODATA as f64, RasterData::F32(layer))?);
        let clouds: Vec<(f64, f64)> = (0..(cloud_cover.clamp(0.0, 1.0) * 12.0).round() as usize)
            .map(|_| (rng.gen_range(0.0..N as f64), rng.gen_range(0.0..N as f64)))
            .collect();
        let mask: Vec<u8> = (0..N * N)
            .map(|i| {
                let (x, y) = ((i % N) as f64, (i / N) as f64);
                u8::from(clouds.iter().any(|&(cx, cy)| (x - cx).hypot(y - cy) < 10.0))
            })
            .collect();
        masks.push(Raster::new(N, N, 1, geo, 255.0, RasterData::U8(mask))?);
    }
    let stack = ObservationStack::new("demo", ds, layers, masks)?;
    let (mean, count) = temporal_mean(&stack, None, 2020)?;
    let stats = tile_stats("demo", &mean, &count, TileRule::map())?;

    let m = paint(&mean.band_values(0), 0.0, 40.0);
    let k = paint(
        &count
            .band_values(0)
            .iter()
            .map(|c| c.filter(|&c| c > 0.0))
            .collect::<Vec<_>>(),
        0.0,
        dates as f64,
    );
    let mut rgba = Vec::with_capacity(2 * N * N * 4);
    for row in 0..N {
        rgba.extend_from_slice(&m[row * N * 4..(row + 1) * N * 4]);
        rgba.extend_from_slice(&k[row * N * 4..(row + 1) * N * 4]);
    }
    let text = match (stats.mean_m, stats.percentiles) {
        (Some(mean_m), Some(p)) => {
            let ps: Vec<String> = PERCENTILES.iter().zip(p).map(|(q, v)| format!("p{q}={v:.1}")).collect();
            format!(
                "{} pixels with ≥ 3 clear dates. Mean {mean_m:.2} m; {}.",
                stats.valid_observations,
                ps.join(", ")
            )
        }
        _ => "No pixel has three clear dates; lower the cloud cover or add dates.".to_string(),
    };
    Ok(View {
        width: 2 * N,
        height: N,
        rgba,
        text,
    })
}

fn js(e: canopy_core::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

#[wasm_bindgen]
pub fn chm_scene(seed: u32, crowns: u32, size_m: f64) -> std::result::Result<View, JsValue> {
    chm_scene_view(seed as u64, crowns as usize, size_m).map_err(js)
}

#[wasm_bindgen]
pub fn mirror_pad_demo(size: u32, border: u32) -> std::result::Result<View, JsValue> {
    mirror_pad_view(size as usize, border as usize).map_err(js)
}

#[wasm_bindgen]
pub fn composite_demo(dates: u32, cloud_cover: f64, seed: u32) -> std::result::Result<View, JsValue> {
    composite_view(dates as usize, cloud_cover, seed as u64).map_err(js)
}
