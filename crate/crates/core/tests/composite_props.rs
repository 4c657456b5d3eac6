use chrono::{Days, NaiveDate};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use canopy_core::composite::{
    temporal_mean, tile_stats, tile_stats_batch, weighted_mean_eq1, weighted_percentile, ObservationStack,
    PixelEventMap, TileInput, TileRule, PERCENTILES,
};
use canopy_core::inference::HEIGHT_NODATA;
use canopy_core::raster::{retile, GeoTransform, Raster, RasterData};

fn geo() -> GeoTransform {
    GeoTransform::new(0.0, 100.0, 4.78, 3857).unwrap()
}

#[derive(Debug)]
struct Scene {
    stack: ObservationStack,
    events: PixelEventMap,
    w: usize,
    h: usize,
    layers: Vec<Vec<f32>>,
    masks: Vec<Vec<u8>>,
}

fn scene(w: usize, h: usize, t: usize, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = NaiveDate::from_ymd_opt(2018, 6, 1).unwrap();
    let dates: Vec<NaiveDate> = (0..t).map(|k| start + Days::new(60 * k as u64 + 1)).collect();
    let layers: Vec<Vec<f32>> = (0..t)
        .map(|_| {
            (0..w * h)
                .map(|_| {
                    if rng.gen_bool(0.05) {
                        HEIGHT_NODATA
                    } else {
                        rng.gen_range(0.0f32..45.0)
                    }
                })
                .collect()
        })
        .collect();
    let masks: Vec<Vec<u8>> = (0..t)
        .map(|_| (0..w * h).map(|_| u8::from(rng.gen_bool(0.3))).collect())
        .collect();
    let mut events = PixelEventMap::empty(w, h);
    for _ in 0..rng.gen_range(0..3) {
        let d = NaiveDate::from_ymd_opt(rng.gen_range(2016..2024), 3, 1).unwrap();
        events
            .set(rng.gen_range(0..w), rng.gen_range(0..h), Some(d), None)
            .unwrap();
    }
    let stack = ObservationStack::new(
        "q",
        dates,
        layers
            .iter()
            .map(|v| Raster::new(w, h, 1, geo(), HEIGHT_NODATA as f64, RasterData::F32(v.clone())).unwrap())
            .collect(),
        masks
            .iter()
            .map(|v| Raster::new(w, h, 1, geo(), 255.0, RasterData::U8(v.clone())).unwrap())
            .collect(),
    )
    .unwrap();
    Scene {
        stack,
        events,
        w,
        h,
        layers,
        masks,
    }
}

fn arb_scene() -> impl Strategy<Value = Scene> {
    (1usize..12, 1usize..12, 1usize..10, any::<u64>()).prop_map(|(w, h, t, s)| scene(w, h, t, s))
}

fn monotone(p: &[f64]) -> bool {
    p.windows(2).all(|w| w[0] <= w[1])
}

proptest! {
    #[test]
    fn count_and_mean_match_brute_force(s in arb_scene()) {
        let (mean, count) = temporal_mean(&s.stack, Some(&s.events), 2020).unwrap();
        for i in 0..s.w * s.h {
            let (c, r) = (i % s.w, i / s.w);
            let vals: Vec<f64> = if s.events.excludes(c, r, 2020) {
                Vec::new()
            } else {
                (0..s.layers.len())
                    .filter(|&t| s.masks[t][i] == 0 && s.layers[t][i] != HEIGHT_NODATA)
                    .map(|t| s.layers[t][i] as f64)
                    .collect()
            };
            prop_assert_eq!(count.get(0, c, r), vals.len() as f64);
            match mean.value(0, c, r) {
                Some(m) => prop_assert!((m - vals.iter().sum::<f64>() / vals.len() as f64).abs() <= 1e-4),
                None => prop_assert!(vals.is_empty()),
            }
        }
    }

    #[test]
    fn tile_stats_are_ordered_and_bounded(s in arb_scene(), tile in 1usize..8, min_count in 0u32..4, min_height in 0.0f64..20.0) {
        let (mean, count) = temporal_mean(&s.stack, None, 2020).unwrap();
        let rule = TileRule { min_count, min_height };
        let inputs: Vec<TileInput> = retile(&mean, tile)
            .unwrap()
            .into_iter()
            .zip(retile(&count, tile).unwrap())
            .map(|((i, m), (_, c))| TileInput { quad_id: format!("t{i:03}"), mean: m, count: c })
            .collect();
        let tiles = tile_stats_batch(&inputs, rule).unwrap();
        for (t, input) in tiles.iter().zip(&inputs) {
            prop_assert_eq!(t, &tile_stats(&t.quad_id, &input.mean, &input.count, rule).unwrap());
            let px: Vec<f64> = input
                .mean
                .band_values(0)
                .into_iter()
                .zip(input.count.band_values(0))
                .filter_map(|(m, c)| match (m, c) {
                    (Some(m), Some(c)) if rule.admits(m, c) => Some(m),
                    _ => None,
                })
                .collect();
            prop_assert_eq!(t.valid_observations, px.len() as u64);
            if let (Some(m), Some(p)) = (t.mean_m, t.percentiles) {
                let lo = px.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(lo <= m && m <= hi);
                prop_assert!(monotone(&p));
                prop_assert!(lo <= p[0] && p[6] <= hi);
            }
        }
        if let Ok(p) = weighted_percentile(&tiles, &PERCENTILES) {
            prop_assert!(monotone(&p));
            let m = weighted_mean_eq1(&tiles).unwrap();
            let lo = tiles.iter().filter_map(|t| t.mean_m).fold(f64::INFINITY, f64::min);
            let hi = tiles.iter().filter_map(|t| t.mean_m).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo - 1e-9 <= m && m <= hi + 1e-9);
        }
    }

    #[test]
    fn masked_values_never_reach_the_composite(s in arb_scene(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers: Vec<Raster> = s
            .layers
            .iter()
            .zip(&s.masks)
            .map(|(v, m)| {
                let v: Vec<f32> = v.iter().zip(m).map(|(&x, &k)| if k != 0 { rng.gen_range(-100.0f32..1000.0) } else { x }).collect();
                Raster::new(s.w, s.h, 1, geo(), HEIGHT_NODATA as f64, RasterData::F32(v)).unwrap()
            })
            .collect();
        let changed = ObservationStack::new("q", s.stack.dates().to_vec(), layers, s.stack.masks().to_vec()).unwrap();
        prop_assert_eq!(temporal_mean(&changed, Some(&s.events), 2020).unwrap(), temporal_mean(&s.stack, Some(&s.events), 2020).unwrap());
    }
}
