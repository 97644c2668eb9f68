//! Shared oracles and fixtures for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use clickforge::click::gaussian_click_map;
use clickforge::losses::{center_loss, offset_loss, weighted_cross_entropy, HeadWeights};
use clickforge::net::{backward, forward, HeadGradients, NetConfig, Parameters};
use clickforge::{EncodingConfig, LabelRaster, Mask, Raster};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Targets for every head a model may have.
pub struct Targets {
    pub labels: LabelRaster,
    pub weights: BTreeMap<u32, f64>,
    pub offsets: Raster<f64>,
    pub fg: Mask,
    pub heatmap: Raster<f64>,
    pub head_weights: HeadWeights,
}

impl Targets {
    pub fn random<R: Rng>(h: usize, w: usize, classes: usize, rng: &mut R) -> Self {
        let labels = Raster::from_fn(h, w, 1, |_, _, _| rng.random_range(0..classes as u32));
        let weights = (0..classes as u32).map(|c| (c, rng.random_range(0.5..3.0))).collect();
        let offsets = Raster::from_fn(h, w, 2, |_, _, _| rng.random_range(-6.0..6.0));
        let fg = labels.map(|&l| l != 0);
        let clicks = [clickforge::Click::positive(rng.random_range(0..h), rng.random_range(0..w), 1)];
        let enc = EncodingConfig { sigma: 2.0, ..EncodingConfig::default() };
        let heatmap = gaussian_click_map(h, w, &clicks, &enc).unwrap();
        // Keep all heads in the same order of magnitude.
        let head_weights = HeadWeights { semantic: 1.0, offset: 0.3, center: 2.0 };
        Targets { labels, weights, offsets, fg, heatmap, head_weights }
    }
}

/// Weighted sum of the head losses and, optionally, the analytic gradient.
pub fn total_loss(params: &Parameters, x: &Raster<f64>, t: &Targets, with_grad: bool) -> (f64, Option<Parameters>) {
    let (out, cache) = forward(params, x).unwrap();
    let hw = t.head_weights;
    let (ce, g_sem) = weighted_cross_entropy(&out.semantic, &t.labels, &t.weights).unwrap();
    let mut loss = hw.semantic * ce;
    let mut grads = HeadGradients { semantic: Some(g_sem.map(|g| g * hw.semantic)), ..Default::default() };
    if let Some(off) = &out.offsets {
        let (l, g) = offset_loss(off, &t.offsets, &t.fg).unwrap();
        loss += hw.offset * l;
        grads.offsets = Some(g.map(|v| v * hw.offset));
    }
    if let Some(c) = &out.centers {
        let (l, g) = center_loss(c, &t.heatmap).unwrap();
        loss += hw.center * l;
        grads.centers = Some(g.map(|v| v * hw.center));
    }
    let grad = with_grad.then(|| backward(params, &cache, &grads).unwrap());
    (loss, grad)
}

/// Central difference of `f` in coordinate `i`.
pub fn central_difference(params: &Parameters, i: usize, eps: f64, mut f: impl FnMut(&Parameters) -> f64) -> f64 {
    let mut p = params.clone();
    let x0 = p.as_flat()[i];
    p.flat_mut()[i] = x0 + eps;
    let up = f(&p);
    p.flat_mut()[i] = x0 - eps;
    let down = f(&p);
    (up - down) / (2.0 * eps)
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub struct GradCheck {
    pub config: NetConfig,
    pub size: usize,
    pub checked: usize,
    pub max_rel_err: f64,
}

/// End-to-end check of `samples` random coordinates plus the first and last
/// parameter of every layer, for a seeded random config.
pub fn gradcheck(seed: u64, samples: usize) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(0..=2);
    let size = (1 << depth) * rng.random_range(2..=3);
    let panoptic = rng.random_bool(0.5);
    let config = NetConfig {
        in_channels: if panoptic { 4 } else { rng.random_range(4..=5) },
        base_width: rng.random_range(1..=3),
        depth,
        semantic_classes: rng.random_range(2..=3),
        offset_head: panoptic,
        center_head: panoptic && rng.random_bool(0.5),
    };
    let mut params = Parameters::init(config.clone(), &mut rng).unwrap();
    // Zero biases put dead regions exactly on the ReLU kink.
    let biases: Vec<(usize, usize)> = params.layers().iter().map(|l| (l.bias_offset, l.cout)).collect();
    for (off, n) in biases {
        for b in &mut params.flat_mut()[off..off + n] {
            *b = rng.random_range(-0.2..0.2);
        }
    }
    let x = Raster::from_fn(size, size, config.in_channels, |_, _, _| rng.random_range(-1.0..1.0));
    let targets = Targets::random(size, size, config.semantic_classes, &mut rng);
    let (_, grad) = total_loss(&params, &x, &targets, true);
    let grad = grad.unwrap();

    let mut coords: Vec<usize> = (0..samples).map(|_| rng.random_range(0..params.len())).collect();
    for l in params.layers() {
        coords.push(l.weight_offset);
        coords.push(l.bias_offset);
    }
    let mut max_rel_err: f64 = 0.0;
    for &i in &coords {
        let numeric = central_difference(&params, i, 1e-5, |p| total_loss(p, &x, &targets, false).0);
        max_rel_err = max_rel_err.max(relative_error(grad.as_flat()[i], numeric, 1e-5));
    }
    GradCheck { config, size, checked: coords.len(), max_rel_err }
}
