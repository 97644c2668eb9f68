//! Inference with a trained toy network: input assembly for both click
//! schemes, N-pass and single-pass prediction, and overlap resolution.

use serde::{Deserialize, Serialize};

use crate::click::{full_click_map, gaussian_click_map, relative_clicks, Click, EncodingConfig, Polarity};
use crate::error::{Error, Result};
use crate::fusion::{fuse, CenterSet, FusionConfig, PanopticPrediction};
use crate::net::{forward, Parameters};
use crate::raster::{Image, InstanceLabelMap, Mask, Raster};

/// How a model consumes clicks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClickMode {
    /// One pass per click; RGB + positive map.
    Standard,
    /// One pass per click; RGB + positive map + map of all clicks.
    Negative,
    /// One pass per image; RGB + map of all clicks.
    Panoptic,
}

impl ClickMode {
    pub fn in_channels(self) -> usize {
        match self {
            ClickMode::Negative => 5,
            _ => 4,
        }
    }

    pub fn check_model(self, params: &Parameters) -> Result<()> {
        let cfg = params.config();
        let ok = match self {
            ClickMode::Standard => cfg.in_channels == 4 && cfg.semantic_classes == 2,
            ClickMode::Negative => cfg.in_channels == 5 && cfg.semantic_classes == 2,
            ClickMode::Panoptic => cfg.in_channels == 4 && cfg.offset_head,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!(
                "model (in_channels {}, classes {}, offset head {}) does not fit {self:?} mode",
                cfg.in_channels, cfg.semantic_classes, cfg.offset_head
            )))
        }
    }
}

/// RGB in [0,1] plus the positive map, plus the all-clicks map if `use_negatives`.
pub fn standard_input(
    rgb: &Raster<f64>,
    target: &Click,
    clicks: &[Click],
    use_negatives: bool,
    enc: &EncodingConfig,
) -> Result<Raster<f64>> {
    let (h, w) = (rgb.height(), rgb.width());
    let positive = gaussian_click_map(h, w, std::slice::from_ref(target), enc)?;
    if use_negatives {
        let full = full_click_map(target, clicks, h, w, enc)?;
        Raster::stack(&[rgb, &positive, &full])
    } else {
        Raster::stack(&[rgb, &positive])
    }
}

/// RGB in [0,1] plus one map of all clicks.
pub fn panoptic_input(rgb: &Raster<f64>, clicks: &[Click], enc: &EncodingConfig) -> Result<Raster<f64>> {
    let map = gaussian_click_map(rgb.height(), rgb.width(), clicks, enc)?;
    Raster::stack(&[rgb, &map])
}

/// Per-pixel softmax probability of channel `ch`.
pub fn class_probability(scores: &Raster<f64>, ch: usize) -> Raster<f64> {
    let k = scores.channels();
    let values = scores
        .values()
        .chunks_exact(k)
        .map(|px| {
            let max = px.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = px.iter().map(|s| (s - max).exp()).sum();
            (px[ch] - max).exp() / sum
        })
        .collect();
    Raster::new(scores.height(), scores.width(), 1, values).expect("shape preserved")
}

#[derive(Debug, Clone)]
pub struct ObjectPrediction {
    pub instance_id: u32,
    pub mask: Mask,
    pub fg_prob: Raster<f64>,
}

impl ObjectPrediction {
    /// Mean foreground probability over the predicted mask (0 if empty).
    pub fn confidence(&self) -> f64 {
        let (mut s, mut n) = (0.0, 0usize);
        for (p, &m) in self.fg_prob.values().iter().zip(self.mask.values()) {
            if m {
                s += p;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }
}

fn check_clicks(image: &Image, clicks: &[Click]) -> Result<()> {
    for c in clicks {
        if c.row >= image.height() || c.col >= image.width() {
            return Err(Error::validation(format!(
                "click ({},{}) of instance {} outside {}x{} image",
                c.row,
                c.col,
                c.instance_id,
                image.height(),
                image.width()
            )));
        }
    }
    Ok(())
}

/// One forward pass per click. Each pass treats its click as positive and,
/// with `use_negatives`, all others as negatives.
pub fn predict_standard(
    params: &Parameters,
    image: &Image,
    clicks: &[Click],
    use_negatives: bool,
    enc: &EncodingConfig,
) -> Result<Vec<ObjectPrediction>> {
    let mode = if use_negatives { ClickMode::Negative } else { ClickMode::Standard };
    mode.check_model(params)?;
    check_clicks(image, clicks)?;
    let rgb = image.to_unit();
    let mut out = Vec::with_capacity(clicks.len());
    for click in clicks {
        let rel = relative_clicks(click.instance_id, clicks);
        let target = click.with_polarity(Polarity::Positive);
        let input = standard_input(&rgb, &target, &rel, use_negatives, enc)?;
        let (pred, _) = forward(params, &input)?;
        let mask = pred.semantic.argmax().map(|&l| l == 1);
        let fg_prob = class_probability(&pred.semantic, 1);
        out.push(ObjectPrediction { instance_id: click.instance_id, mask, fg_prob });
    }
    Ok(out)
}

/// Flattens possibly overlapping per-click masks into one instance map: a
/// contested pixel goes to the mask with the highest foreground probability
/// there (ties to the smaller id).
pub fn resolve_overlaps(preds: &[ObjectPrediction], height: usize, width: usize) -> InstanceLabelMap {
    let mut map = InstanceLabelMap::zeros(height, width);
    let mut best = vec![f64::NEG_INFINITY; height * width];
    for p in preds {
        for (i, (&m, &prob)) in p.mask.values().iter().zip(p.fg_prob.values()).enumerate() {
            if !m {
                continue;
            }
            let cur = map.ids()[i];
            if prob > best[i] || (prob == best[i] && p.instance_id < cur) {
                best[i] = prob;
                map.ids_mut()[i] = p.instance_id;
            }
        }
    }
    map
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CenterMode {
    /// The input clicks are the centers.
    Clicks,
    /// Centers come from the center head; clicks only feed the input channel.
    Predicted,
}

/// Single forward pass plus fusion.
pub fn predict_panoptic(
    params: &Parameters,
    image: &Image,
    clicks: &[Click],
    centers: CenterMode,
    enc: &EncodingConfig,
    fusion: &FusionConfig,
) -> Result<(InstanceLabelMap, PanopticPrediction)> {
    ClickMode::Panoptic.check_model(params)?;
    check_clicks(image, clicks)?;
    if centers == CenterMode::Predicted && !params.config().center_head {
        return Err(Error::config("predicted centers need a model with a center head"));
    }
    let input = panoptic_input(&image.to_unit(), clicks, enc)?;
    let (out, _) = forward(params, &input)?;
    let prediction = out.to_prediction();
    let map = match centers {
        CenterMode::Clicks => fuse(&prediction, Some(&CenterSet::from_clicks(clicks)), fusion)?,
        CenterMode::Predicted => fuse(&prediction, None, fusion)?,
    };
    Ok((map, prediction))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(id: u32, mask: &[bool], prob: &[f64]) -> ObjectPrediction {
        ObjectPrediction {
            instance_id: id,
            mask: Raster::new(1, mask.len(), 1, mask.to_vec()).unwrap(),
            fg_prob: Raster::new(1, prob.len(), 1, prob.to_vec()).unwrap(),
        }
    }

    #[test]
    fn overlap_goes_to_highest_probability() {
        let a = pred(1, &[true, true, false], &[0.9, 0.6, 0.1]);
        let b = pred(2, &[false, true, true], &[0.2, 0.7, 0.8]);
        let m = resolve_overlaps(&[a, b], 1, 3);
        assert_eq!(m.ids(), &[1, 2, 2]);
    }

    #[test]
    fn overlap_tie_goes_to_smaller_id() {
        let a = pred(5, &[true], &[0.7]);
        let b = pred(3, &[true], &[0.7]);
        assert_eq!(resolve_overlaps(&[a.clone(), b.clone()], 1, 1).ids(), &[3]);
        assert_eq!(resolve_overlaps(&[b, a], 1, 1).ids(), &[3]);
    }

    #[test]
    fn input_channel_counts() {
        let rgb = Raster::zeros(8, 8, 3);
        let clicks = [Click::positive(1, 1, 1), Click::positive(6, 6, 2).with_polarity(Polarity::Negative)];
        let enc = EncodingConfig::default();
        assert_eq!(standard_input(&rgb, &clicks[0], &clicks, false, &enc).unwrap().channels(), 4);
        let five = standard_input(&rgb, &clicks[0], &clicks, true, &enc).unwrap();
        assert_eq!(five.channels(), 5);
        assert_eq!(five.get(6, 6, 4), 1.0);
        assert!(five.get(6, 6, 3) < 1.0);
        assert_eq!(panoptic_input(&rgb, &clicks, &enc).unwrap().channels(), 4);
    }

    #[test]
    fn probability_of_equal_scores() {
        let s = Raster::new(1, 1, 2, vec![0.3, 0.3]).unwrap();
        assert!((class_probability(&s, 1).values()[0] - 0.5).abs() < 1e-15);
    }
}
