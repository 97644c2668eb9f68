//! A micro UNet with hand-written backward passes.
//!
//! Per level: two 3×3 conv + ReLU. Down: 2×2 max-pool. Up: nearest-neighbour
//! 2× upsampling, concatenated with the encoder skip, then two 3×3 conv +
//! ReLU. Each head is a 1×1 conv on the full-resolution decoder output.

pub mod checkpoint;
pub mod layers;
pub mod optim;

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::PanopticPrediction;
use crate::raster::Raster;
use layers::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub depth: usize,
    pub semantic_classes: usize,
    pub offset_head: bool,
    pub center_head: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { in_channels: 4, base_width: 8, depth: 2, semantic_classes: 2, offset_head: false, center_head: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerRole {
    Encoder { level: usize },
    Decoder { level: usize },
    SemanticHead,
    OffsetHead,
    CenterHead,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub role: LayerRole,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerSpec {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.kernel * self.kernel
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.in_channels == 4 || self.in_channels == 5) {
            return Err(Error::config(format!("in_channels must be 4 or 5, got {}", self.in_channels)));
        }
        if self.base_width == 0 {
            return Err(Error::config("base_width must be positive"));
        }
        if self.semantic_classes < 2 {
            return Err(Error::config("semantic head needs at least 2 classes"));
        }
        if self.depth > 8 {
            return Err(Error::config("depth above 8 is not supported"));
        }
        Ok(())
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    /// Layers in declaration (and parameter-payload) order.
    pub fn layers(&self) -> Vec<LayerSpec> {
        let mut out = Vec::new();
        let mut offset = 0;
        let mut push = |role, cin, cout, kernel| {
            let w = cout * cin * kernel * kernel;
            out.push(LayerSpec { role, cin, cout, kernel, weight_offset: offset, bias_offset: offset + w });
            offset += w + cout;
        };
        for level in 0..=self.depth {
            let cin = if level == 0 { self.in_channels } else { self.width(level - 1) };
            push(LayerRole::Encoder { level }, cin, self.width(level), 3);
            push(LayerRole::Encoder { level }, self.width(level), self.width(level), 3);
        }
        for level in (0..self.depth).rev() {
            push(LayerRole::Decoder { level }, self.width(level + 1) + self.width(level), self.width(level), 3);
            push(LayerRole::Decoder { level }, self.width(level), self.width(level), 3);
        }
        push(LayerRole::SemanticHead, self.base_width, self.semantic_classes, 1);
        if self.offset_head {
            push(LayerRole::OffsetHead, self.base_width, 2, 1);
        }
        if self.center_head {
            push(LayerRole::CenterHead, self.base_width, 1, 1);
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().last().map_or(0, |l| l.bias_offset + l.cout)
    }
}

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

/// All weights and biases as one flat vector in layer declaration order.
/// Each layer stores `[cout][cin][k][k]` weights followed by `cout` biases.
#[derive(Debug, Clone)]
pub struct Parameters {
    config: NetConfig,
    layers: Vec<LayerSpec>,
    data: Vec<f64>,
    /// Changes whenever `data` may have changed; ties caches to values.
    stamp: u64,
}

impl PartialEq for Parameters {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.data == other.data
    }
}

impl Parameters {
    pub fn zeros(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let layers = config.layers();
        let n = config.parameter_count();
        Ok(Parameters { config, layers, data: vec![0.0; n], stamp: fresh_stamp() })
    }

    /// He-normal weights (std = √(2 / fan_in)), zero biases.
    pub fn init<R: Rng + ?Sized>(config: NetConfig, rng: &mut R) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        for l in p.layers.clone() {
            let fan_in = (l.cin * l.kernel * l.kernel) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
            for v in &mut p.data[l.weight_offset..l.bias_offset] {
                *v = normal.sample(rng);
            }
        }
        Ok(p)
    }

    pub fn from_flat(config: NetConfig, data: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        if data.len() != p.data.len() {
            return Err(Error::validation(format!(
                "parameter vector has {} values, config needs {}",
                data.len(),
                p.data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("parameters must be finite"));
        }
        p.data = data;
        Ok(p)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        self.stamp = fresh_stamp();
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn weight(&self, l: &LayerSpec) -> &[f64] {
        &self.data[l.weight_offset..l.bias_offset]
    }

    fn bias(&self, l: &LayerSpec) -> &[f64] {
        &self.data[l.bias_offset..l.bias_offset + l.cout]
    }

    /// Same-shaped zeros, e.g. a gradient accumulator.
    pub fn zeros_like(&self) -> Parameters {
        Parameters { config: self.config.clone(), layers: self.layers.clone(), data: vec![0.0; self.data.len()], stamp: fresh_stamp() }
    }

    pub fn add_assign(&mut self, other: &Parameters) {
        assert_eq!(self.data.len(), other.data.len());
        self.stamp = fresh_stamp();
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    pub fn scale(&mut self, k: f64) {
        self.stamp = fresh_stamp();
        self.data.iter_mut().for_each(|v| *v *= k);
    }

    /// SHA-256 over config and payload, hex-encoded; used as a checkpoint id.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for v in &self.data {
            hasher.update(v.to_le_bytes());
        }
        hasher.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Raw head outputs, channel-last, at input resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct NetOutput {
    pub semantic: Raster<f64>,
    pub offsets: Option<Raster<f64>>,
    pub centers: Option<Raster<f64>>,
}

impl NetOutput {
    /// Panoptic view: missing offsets become zeros, the center heatmap is
    /// clamped to [0, 1].
    pub fn to_prediction(&self) -> PanopticPrediction {
        let (h, w) = (self.semantic.height(), self.semantic.width());
        PanopticPrediction {
            semantic: self.semantic.clone(),
            offsets: self.offsets.clone().unwrap_or_else(|| Raster::zeros(h, w, 2)),
            center_heatmap: self.centers.as_ref().map(|c| c.map(|v| v.clamp(0.0, 1.0))),
        }
    }
}

/// Upstream gradients per head, channel-last. Heads absent here receive zero
/// gradient.
#[derive(Debug, Clone, Default)]
pub struct HeadGradients {
    pub semantic: Option<Raster<f64>>,
    pub offsets: Option<Raster<f64>>,
    pub centers: Option<Raster<f64>>,
}

struct ConvRecord {
    input: Tensor,
    /// Post-ReLU output.
    output: Tensor,
}

/// Activations saved by [`forward`] for [`backward`].
pub struct Cache {
    stamp: u64,
    encoder: Vec<[ConvRecord; 2]>,
    pool_idx: Vec<Vec<usize>>,
    decoder: Vec<[ConvRecord; 2]>,
    head_input: Tensor,
}

fn to_chw(r: &Raster<f64>) -> Tensor {
    let (h, w, c) = (r.height(), r.width(), r.channels());
    let mut t = Tensor::zeros(c, h, w);
    for (p, px) in r.values().chunks_exact(c).enumerate() {
        for (ch, v) in px.iter().enumerate() {
            t.data[ch * h * w + p] = *v;
        }
    }
    t
}

fn to_hwc(t: &Tensor) -> Raster<f64> {
    let hw = t.hw();
    Raster::from_fn(t.h, t.w, t.c, |r, c, ch| t.data[ch * hw + r * t.w + c])
}

fn conv_relu(params: &Parameters, spec: &LayerSpec, input: Tensor) -> ConvRecord {
    let mut output = layers::conv_forward(&input, params.weight(spec), params.bias(spec), spec.cout, spec.kernel);
    layers::relu_inplace(&mut output);
    ConvRecord { input, output }
}

/// Runs the network on a channel-last input of `in_channels` channels whose
/// height and width are divisible by `2^depth`.
pub fn forward(params: &Parameters, input: &Raster<f64>) -> Result<(NetOutput, Cache)> {
    let cfg = &params.config;
    if input.channels() != cfg.in_channels {
        return Err(Error::validation(format!(
            "network expects {} input channels, got {}",
            cfg.in_channels,
            input.channels()
        )));
    }
    let m = 1usize << cfg.depth;
    if !input.height().is_multiple_of(m) || !input.width().is_multiple_of(m) {
        return Err(Error::validation(format!(
            "input {}x{} not divisible by {m}",
            input.height(),
            input.width()
        )));
    }
    let specs = &params.layers;
    let mut li = 0;
    let mut x = to_chw(input);
    let mut encoder = Vec::with_capacity(cfg.depth + 1);
    let mut pool_idx = Vec::with_capacity(cfg.depth);
    for level in 0..=cfg.depth {
        let a = conv_relu(params, &specs[li], x);
        let b = conv_relu(params, &specs[li + 1], a.output.clone());
        li += 2;
        x = if level < cfg.depth {
            let (pooled, idx) = layers::maxpool_forward(&b.output);
            pool_idx.push(idx);
            pooled
        } else {
            b.output.clone()
        };
        encoder.push([a, b]);
    }
    let mut y = x;
    let mut decoder = Vec::with_capacity(cfg.depth);
    for level in (0..cfg.depth).rev() {
        let up = layers::upsample_forward(&y);
        let cat = layers::concat(&up, &encoder[level][1].output);
        let a = conv_relu(params, &specs[li], cat);
        let b = conv_relu(params, &specs[li + 1], a.output.clone());
        li += 2;
        y = b.output.clone();
        decoder.push([a, b]);
    }
    let mut semantic = None;
    let mut offsets = None;
    let mut centers = None;
    for spec in &specs[li..] {
        let out = to_hwc(&layers::conv_forward(&y, params.weight(spec), params.bias(spec), spec.cout, 1));
        match spec.role {
            LayerRole::SemanticHead => semantic = Some(out),
            LayerRole::OffsetHead => offsets = Some(out),
            LayerRole::CenterHead => centers = Some(out),
            _ => unreachable!("heads come last"),
        }
    }
    let output = NetOutput { semantic: semantic.expect("semantic head always present"), offsets, centers };
    let cache = Cache { stamp: params.stamp, encoder, pool_idx, decoder, head_input: y };
    Ok((output, cache))
}

fn conv_relu_backward(params: &Parameters, spec: &LayerSpec, rec: &ConvRecord, mut grad: Tensor, grads: &mut [f64]) -> Tensor {
    layers::relu_backward_inplace(&rec.output, &mut grad);
    let (dw, db) = grads[spec.weight_offset..spec.bias_offset + spec.cout].split_at_mut(spec.weight_len());
    layers::conv_backward(&rec.input, params.weight(spec), &grad, spec.kernel, dw, db, true).expect("input grad requested")
}

/// Exact gradient of `Σ head_output ⊙ head_gradient` with respect to every
/// parameter. `cache` must come from `forward` with these same parameters.
pub fn backward(params: &Parameters, cache: &Cache, head_gradients: &HeadGradients) -> Result<Parameters> {
    if cache.stamp != params.stamp {
        return Err(Error::validation("cache was produced by different or since-modified parameters"));
    }
    let cfg = &params.config;
    let specs = &params.layers;
    let mut grads = params.zeros_like();
    let g = &mut grads.data;
    let y = &cache.head_input;
    let n_body = 4 * cfg.depth + 2;
    let mut dy = Tensor::zeros(y.c, y.h, y.w);
    for spec in &specs[n_body..] {
        let upstream = match spec.role {
            LayerRole::SemanticHead => head_gradients.semantic.as_ref(),
            LayerRole::OffsetHead => head_gradients.offsets.as_ref(),
            LayerRole::CenterHead => head_gradients.centers.as_ref(),
            _ => unreachable!(),
        };
        let Some(upstream) = upstream else { continue };
        if upstream.channels() != spec.cout || upstream.height() != y.h || upstream.width() != y.w {
            return Err(Error::validation("head gradient shape does not match head output"));
        }
        let d = to_chw(upstream);
        let (dw, db) = g[spec.weight_offset..spec.bias_offset + spec.cout].split_at_mut(spec.weight_len());
        let dx = layers::conv_backward(y, params.weight(spec), &d, 1, dw, db, true).expect("input grad requested");
        dy.data.iter_mut().zip(&dx.data).for_each(|(a, b)| *a += b);
    }

    // Decoder, in reverse execution order (level 0 first).
    let mut skip_grads: Vec<Option<Tensor>> = (0..cfg.depth).map(|_| None).collect();
    let dec_base = 2 * (cfg.depth + 1);
    for (step, rec) in cache.decoder.iter().enumerate().rev() {
        let level = cfg.depth - 1 - step;
        let (sa, sb) = (&specs[dec_base + 2 * step], &specs[dec_base + 2 * step + 1]);
        let da = conv_relu_backward(params, sb, &rec[1], dy, g);
        let dcat = conv_relu_backward(params, sa, &rec[0], da, g);
        let (dup, dskip) = layers::split(&dcat, cfg.width(level + 1));
        skip_grads[level] = Some(dskip);
        dy = layers::upsample_backward(&dup);
    }

    // Encoder from the bottleneck up.
    let mut dout = dy;
    for level in (0..=cfg.depth).rev() {
        let rec = &cache.encoder[level];
        let (sa, sb) = (&specs[2 * level], &specs[2 * level + 1]);
        let da = conv_relu_backward(params, sb, &rec[1], dout, g);
        let dx = conv_relu_backward(params, sa, &rec[0], da, g);
        if level == 0 {
            break;
        }
        let prev = &cache.encoder[level - 1][1].output;
        let mut d = layers::maxpool_backward(&dx, &cache.pool_idx[level - 1], prev.c, prev.h, prev.w);
        if let Some(s) = skip_grads[level - 1].take() {
            d.data.iter_mut().zip(&s.data).for_each(|(a, b)| *a += b);
        }
        dout = d;
    }
    Ok(grads)
}
