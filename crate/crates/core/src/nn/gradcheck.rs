//! Finite-difference verification of the analytic backward pass.
//!
//! Central differences are only meaningful on a smooth piece of the network
//! function. A probe whose ±ε evaluations change any ReLU sign or max-pool
//! choice straddles a kink; it is discarded and another parameter is drawn.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::weighted_mse;
use super::sample::TrainSample;
use super::unet::{BackwardFault, UNet};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Parameters probed per layer (all of them when the layer is smaller).
    pub per_layer: usize,
    pub seed: u64,
    pub fault: Option<BackwardFault>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            per_layer: 10,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(layer name, max relative error)` per convolution.
    pub per_layer: Vec<(String, f64)>,
    pub probes: usize,
    pub skipped_at_kinks: usize,
}

/// Smallest denominator used in the relative error.
const REL_FLOOR: f64 = 1e-7;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn param_mut(m: &mut UNet<f64>, layer: usize, is_weight: bool, j: usize) -> &mut f64 {
    let conv = &mut m.layers_mut()[layer];
    if is_weight {
        &mut conv.weight[j]
    } else {
        &mut conv.bias[j]
    }
}

/// Compare analytic gradients of the weighted MSE against central
/// differences on a random subset of every layer's parameters.
pub fn gradient_check(
    model: &UNet<f64>,
    sample_: &TrainSample<f64>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let cache = model.forward_train(&sample_.image)?;
    let (_, grad_out) = weighted_mse(cache.prediction(), &sample_.target, &sample_.weight)?;
    let grads = model.backward_with_fault(&cache, &grad_out, opts.fault)?;
    let base_pattern = cache.pattern();

    let loss_at = |m: &UNet<f64>| -> Result<(f64, Vec<u64>)> {
        let c = m.forward_train(&sample_.image)?;
        let (l, _) = weighted_mse(c.prediction(), &sample_.target, &sample_.weight)?;
        Ok((l, c.pattern()))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_layer: Vec::new(),
        probes: 0,
        skipped_at_kinks: 0,
    };

    for layer in 0..model.layers().len() {
        let n_w = model.layers()[layer].weight.len();
        let n_b = model.layers()[layer].bias.len();
        let total = n_w + n_b;
        let mut candidates = sample(&mut rng, total, total).into_vec().into_iter();
        let mut layer_max = 0.0f64;
        let mut done = 0;
        while done < opts.per_layer.min(total) {
            let Some(idx) = candidates.next() else { break };
            let (is_w, j) = if idx < n_w { (true, idx) } else { (false, idx - n_w) };
            let orig = *param_mut(&mut probe, layer, is_w, j);
            *param_mut(&mut probe, layer, is_w, j) = orig + opts.eps;
            let (lp, pp) = loss_at(&probe)?;
            *param_mut(&mut probe, layer, is_w, j) = orig - opts.eps;
            let (lm, pm) = loss_at(&probe)?;
            *param_mut(&mut probe, layer, is_w, j) = orig;
            if pp != base_pattern || pm != base_pattern {
                report.skipped_at_kinks += 1;
                continue;
            }
            let numeric = (lp - lm) / (2.0 * opts.eps);
            let analytic = if is_w {
                grads.weight[layer][j]
            } else {
                grads.bias[layer][j]
            };
            layer_max = layer_max.max(relative_error(analytic, numeric));
            report.probes += 1;
            done += 1;
        }
        report.max_rel_error = report.max_rel_error.max(layer_max);
        report.per_layer.push((model.layers()[layer].name.clone(), layer_max));
    }
    Ok(report)
}
