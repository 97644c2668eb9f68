//! Panoptic fusion: group thing pixels into instances by moving each pixel
//! along its predicted offset and taking the nearest center.

use serde::{Deserialize, Serialize};

use crate::click::{Click, Polarity};
use crate::error::{Error, Result};
use crate::raster::{InstanceLabelMap, LabelRaster, Raster};

/// Network outputs for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct PanopticPrediction {
    /// C ≥ 2 class scores; channel 0 is background/stuff.
    pub semantic: Raster<f64>,
    /// Δrow, Δcol in pixels.
    pub offsets: Raster<f64>,
    pub center_heatmap: Option<Raster<f64>>,
}

impl PanopticPrediction {
    pub fn validate(&self) -> Result<()> {
        if self.semantic.channels() < 2 {
            return Err(Error::validation("semantic scores need at least 2 classes"));
        }
        if self.offsets.channels() != 2 || !self.offsets.same_size(&self.semantic) {
            return Err(Error::validation("offsets must be a 2-channel raster matching the semantic map"));
        }
        if let Some(h) = &self.center_heatmap {
            if h.channels() != 1 || !h.same_size(&self.semantic) {
                return Err(Error::validation("center heatmap must be 1-channel and match the semantic map"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterSource {
    UserClicks,
    Predicted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Center {
    pub row: usize,
    pub col: usize,
    pub instance_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenterSet {
    pub centers: Vec<Center>,
    pub source: CenterSource,
}

impl CenterSet {
    /// Positive clicks become centers carrying their instance ids.
    pub fn from_clicks(clicks: &[Click]) -> Self {
        let centers = clicks
            .iter()
            .filter(|c| c.polarity == Polarity::Positive)
            .map(|c| Center { row: c.row, col: c.col, instance_id: c.instance_id })
            .collect();
        CenterSet { centers, source: CenterSource::UserClicks }
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        let mut ids: Vec<u32> = self.centers.iter().map(|c| c.instance_id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::validation("center instance ids must be unique"));
        }
        if ids.first() == Some(&0) {
            return Err(Error::validation("center instance id 0 is reserved for background"));
        }
        if let Some(c) = self.centers.iter().find(|c| c.row >= height || c.col >= width) {
            return Err(Error::validation(format!(
                "center ({},{}) outside {height}x{width} map",
                c.row, c.col
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub nms_window: usize,
    pub threshold: f64,
    pub top_k: usize,
    /// Id given to all thing pixels when there are no centers at all.
    /// `None` leaves them as background.
    pub empty_center_fallback: Option<u32>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { nms_window: 7, threshold: 0.1, top_k: 200, empty_center_fallback: Some(1) }
    }
}

/// Labels every thing pixel (`semantic_argmax > 0`) with the id of the center
/// nearest to `p + offset(p)`. Equidistant centers resolve to the smaller id.
pub fn assign_instances(
    semantic_argmax: &LabelRaster,
    offsets: &Raster<f64>,
    centers: &CenterSet,
    fallback_id: Option<u32>,
) -> Result<InstanceLabelMap> {
    let (h, w) = (semantic_argmax.height(), semantic_argmax.width());
    if semantic_argmax.channels() != 1 {
        return Err(Error::validation("semantic label raster must be single-channel"));
    }
    if offsets.channels() != 2 || !offsets.same_size(semantic_argmax) {
        return Err(Error::validation(format!(
            "offsets {}x{}x{} do not match labels {h}x{w}",
            offsets.height(),
            offsets.width(),
            offsets.channels()
        )));
    }
    centers.validate(h, w)?;
    let mut map = InstanceLabelMap::zeros(h, w);
    if centers.is_empty() {
        if let Some(id) = fallback_id {
            for (i, &label) in semantic_argmax.values().iter().enumerate() {
                if label != 0 {
                    map.ids_mut()[i] = id;
                }
            }
        }
        return Ok(map);
    }
    let pts: Vec<(f64, f64, u32)> =
        centers.centers.iter().map(|c| (c.row as f64, c.col as f64, c.instance_id)).collect();
    let off = offsets.values();
    for (i, &label) in semantic_argmax.values().iter().enumerate() {
        if label == 0 {
            continue;
        }
        let (r, c) = ((i / w) as f64, (i % w) as f64);
        let tr = r + off[2 * i];
        let tc = c + off[2 * i + 1];
        let mut best = (f64::INFINITY, u32::MAX);
        for &(cr, cc, id) in &pts {
            let d = (tr - cr) * (tr - cr) + (tc - cc) * (tc - cc);
            if d < best.0 || (d == best.0 && id < best.1) {
                best = (d, id);
            }
        }
        map.ids_mut()[i] = best.1;
    }
    Ok(map)
}

/// Peak picking on a center heatmap: local maxima of an odd `nms_window`
/// neighbourhood that exceed `threshold`, best `top_k` kept. Among equal
/// values in a window the earliest pixel in scan order is the peak. Ids are
/// assigned 1.. in descending score order.
pub fn extract_centers(heatmap: &Raster<f64>, threshold: f64, nms_window: usize, top_k: usize) -> Result<CenterSet> {
    if nms_window.is_multiple_of(2) {
        return Err(Error::config(format!("nms_window must be odd, got {nms_window}")));
    }
    if heatmap.channels() != 1 {
        return Err(Error::validation("center heatmap must be single-channel"));
    }
    let (h, w) = (heatmap.height(), heatmap.width());
    let half = (nms_window / 2) as i64;
    let v = heatmap.values();
    let mut peaks: Vec<(f64, usize)> = Vec::new();
    for i in 0..h * w {
        let score = v[i];
        if score.is_nan() || score <= threshold {
            continue;
        }
        let (r, c) = ((i / w) as i64, (i % w) as i64);
        let mut is_peak = true;
        'scan: for rr in (r - half).max(0)..=(r + half).min(h as i64 - 1) {
            for cc in (c - half).max(0)..=(c + half).min(w as i64 - 1) {
                let j = rr as usize * w + cc as usize;
                if v[j] > score || (v[j] == score && j < i) {
                    is_peak = false;
                    break 'scan;
                }
            }
        }
        if is_peak {
            peaks.push((score, i));
        }
    }
    peaks.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    peaks.truncate(top_k);
    let centers = peaks
        .iter()
        .enumerate()
        .map(|(k, &(_, i))| Center { row: i / w, col: i % w, instance_id: k as u32 + 1 })
        .collect();
    Ok(CenterSet { centers, source: CenterSource::Predicted })
}

/// Full post-processing. With `user_centers` the clicks are the centers
/// (click mode); otherwise centers come from the predicted heatmap
/// (recovery mode).
pub fn fuse(prediction: &PanopticPrediction, user_centers: Option<&CenterSet>, cfg: &FusionConfig) -> Result<InstanceLabelMap> {
    prediction.validate()?;
    let labels = prediction.semantic.argmax();
    let extracted;
    let centers = match (user_centers, &prediction.center_heatmap) {
        (Some(c), _) => c,
        (None, Some(heatmap)) => {
            extracted = extract_centers(heatmap, cfg.threshold, cfg.nms_window, cfg.top_k)?;
            &extracted
        }
        (None, None) => {
            return Err(Error::config("fusion needs user centers or a predicted center heatmap"));
        }
    };
    assign_instances(&labels, &prediction.offsets, centers, cfg.empty_center_fallback)
}
