//! Training objectives. Every loss returns its value together with the
//! gradient w.r.t. the prediction it was given.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{LabelRaster, Mask, Raster};

/// Pixel areas aggregated over a training split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassAreaStats {
    /// Thing classes only.
    pub areas: BTreeMap<u32, u64>,
    pub background: u64,
}

impl ClassAreaStats {
    /// Accumulates a label raster; label 0 counts as background.
    pub fn add_labels(&mut self, labels: &LabelRaster) {
        for &l in labels.values() {
            if l == 0 {
                self.background += 1;
            } else {
                *self.areas.entry(l).or_insert(0) += 1;
            }
        }
    }
}

pub const BACKGROUND_CLASS: u32 = 0;

/// `w_c = 1 / ln(a_c / a_bg + 1.02)` for every thing class; the background
/// class (id 0) gets the same formula with `a_c = a_bg`.
pub fn class_weights(stats: &ClassAreaStats) -> Result<BTreeMap<u32, f64>> {
    if stats.background == 0 {
        return Err(Error::validation("background area is zero; class weights are undefined"));
    }
    let bg = stats.background as f64;
    let weight = |area: f64| 1.0 / (area / bg + 1.02).ln();
    let mut out = BTreeMap::new();
    out.insert(BACKGROUND_CLASS, weight(bg));
    for (&class, &area) in &stats.areas {
        if class != BACKGROUND_CLASS {
            out.insert(class, weight(area as f64));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadWeights {
    pub semantic: f64,
    pub offset: f64,
    pub center: f64,
}

impl Default for HeadWeights {
    fn default() -> Self {
        HeadWeights { semantic: 1.0, offset: 0.01, center: 200.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub semantic: f64,
    pub offset: Option<f64>,
    pub center: Option<f64>,
    pub total: f64,
    pub head_weights: HeadWeights,
}

impl LossBreakdown {
    pub fn new(semantic: f64, offset: Option<f64>, center: Option<f64>, head_weights: HeadWeights) -> Self {
        let total = head_weights.semantic * semantic
            + offset.map_or(0.0, |o| head_weights.offset * o)
            + center.map_or(0.0, |c| head_weights.center * c);
        LossBreakdown { semantic, offset, center, total, head_weights }
    }
}

/// Mean over pixels of `w[t] · −log softmax(s)[t]`.
pub fn weighted_cross_entropy(
    class_scores: &Raster<f64>,
    target: &LabelRaster,
    weights: &BTreeMap<u32, f64>,
) -> Result<(f64, Raster<f64>)> {
    let k = class_scores.channels();
    if !class_scores.same_size(target) || target.channels() != 1 {
        return Err(Error::validation("scores and target must share height and width"));
    }
    let n = target.pixels() as f64;
    let mut grad = Raster::zeros(class_scores.height(), class_scores.width(), k);
    let mut loss = 0.0;
    let mut probs = vec![0.0; k];
    for (p, (scores, &t)) in class_scores.values().chunks_exact(k).zip(target.values()).enumerate() {
        let t_idx = t as usize;
        if t_idx >= k {
            return Err(Error::validation(format!("target label {t} has no score channel (C = {k})")));
        }
        let w = *weights
            .get(&t)
            .ok_or_else(|| Error::validation(format!("no class weight for label {t}")))?;
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for (q, &s) in probs.iter_mut().zip(scores) {
            *q = (s - max).exp();
            sum += *q;
        }
        let log_sum = sum.ln();
        loss += w * (log_sum - (scores[t_idx] - max));
        let g = &mut grad.values_mut()[p * k..(p + 1) * k];
        for (j, gj) in g.iter_mut().enumerate() {
            let softmax = probs[j] / sum;
            let indicator = if j == t_idx { 1.0 } else { 0.0 };
            *gj = w * (softmax - indicator) / n;
        }
    }
    Ok((loss / n, grad))
}

/// Mean absolute error over foreground pixels and both offset channels.
pub fn offset_loss(pred: &Raster<f64>, target: &Raster<f64>, fg_mask: &Mask) -> Result<(f64, Raster<f64>)> {
    if pred.channels() != 2 || target.channels() != 2 || !pred.same_size(target) || !pred.same_size(fg_mask) {
        return Err(Error::validation("offset loss needs matching 2-channel rasters and mask"));
    }
    let mut grad = Raster::zeros(pred.height(), pred.width(), 2);
    let n_fg = fg_mask.count();
    if n_fg == 0 {
        return Ok((0.0, grad));
    }
    let denom = 2.0 * n_fg as f64;
    let mut loss = 0.0;
    let (pv, tv) = (pred.values(), target.values());
    for (p, &fg) in fg_mask.values().iter().enumerate() {
        if !fg {
            continue;
        }
        for ch in 0..2 {
            let d = pv[2 * p + ch] - tv[2 * p + ch];
            loss += d.abs();
            grad.values_mut()[2 * p + ch] = d.signum() * f64::from(u8::from(d != 0.0)) / denom;
        }
    }
    Ok((loss / denom, grad))
}

/// Mean squared error over all pixels.
pub fn center_loss(pred: &Raster<f64>, target: &Raster<f64>) -> Result<(f64, Raster<f64>)> {
    if pred.channels() != target.channels() || !pred.same_size(target) {
        return Err(Error::validation("center loss needs matching rasters"));
    }
    let n = pred.values().len() as f64;
    let mut loss = 0.0;
    let grad_values = pred
        .values()
        .iter()
        .zip(target.values())
        .map(|(p, t)| {
            let d = p - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    let grad = Raster::new(pred.height(), pred.width(), pred.channels(), grad_values)?;
    Ok((loss / n, grad))
}
