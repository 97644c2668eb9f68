//! Evaluation: per-object IoU, thresholded foreground IoU, and panoptic
//! quality (PQ = SQ · RQ).

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{InstanceLabelMap, Mask};

/// `|pred ∩ gt| / |pred ∪ gt|`; 1.0 when both are empty.
pub fn object_iou(pred: &Mask, gt: &Mask) -> f64 {
    assert!(pred.same_size(gt), "masks must share a shape");
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// One ground-truth object and the prediction produced from its click.
#[derive(Debug, Clone)]
pub struct ObjectPair<'a> {
    pub scene_id: &'a str,
    pub instance_id: u32,
    pub pred: &'a Mask,
    pub gt: &'a Mask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiouAveraging {
    /// Mean over all objects in the set.
    #[default]
    PerObject,
    /// Mean per image first, then over images.
    PerImage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectIouReport {
    pub per_object: BTreeMap<(String, u32), f64>,
    /// In [0, 1].
    pub mean: f64,
}

impl ObjectIouReport {
    pub fn from_ious(per_object: BTreeMap<(String, u32), f64>, averaging: MiouAveraging) -> Result<Self> {
        if per_object.is_empty() {
            return Err(Error::validation("mean object IoU over an empty set"));
        }
        let mean = match averaging {
            MiouAveraging::PerObject => per_object.values().sum::<f64>() / per_object.len() as f64,
            MiouAveraging::PerImage => {
                let mut per_scene: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
                for ((scene, _), iou) in &per_object {
                    let e = per_scene.entry(scene.as_str()).or_default();
                    e.0 += iou;
                    e.1 += 1;
                }
                per_scene.values().map(|(s, n)| s / *n as f64).sum::<f64>() / per_scene.len() as f64
            }
        };
        Ok(ObjectIouReport { per_object, mean })
    }

    pub fn mean_percent(&self) -> f64 {
        100.0 * self.mean
    }
}

pub fn mean_object_iou(pairs: &[ObjectPair<'_>], averaging: MiouAveraging) -> Result<ObjectIouReport> {
    let per_object = pairs
        .iter()
        .map(|p| ((p.scene_id.to_string(), p.instance_id), object_iou(p.pred, p.gt)))
        .collect();
    ObjectIouReport::from_ious(per_object, averaging)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanopticScores {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub matched_iou_sum: f64,
}

impl PanopticScores {
    /// SQ is 0 without true positives, and RQ is 0 when both sides are empty,
    /// so PQ = SQ·RQ/100 holds for every count triple.
    pub fn from_counts(tp: usize, fp: usize, fn_: usize, matched_iou_sum: f64) -> Self {
        let sq = if tp == 0 { 0.0 } else { 100.0 * matched_iou_sum / tp as f64 };
        let denom = tp as f64 + 0.5 * fp as f64 + 0.5 * fn_ as f64;
        let rq = if denom == 0.0 { 0.0 } else { 100.0 * tp as f64 / denom };
        PanopticScores { pq: sq * rq / 100.0, sq, rq, tp, fp, fn_, matched_iou_sum }
    }

    /// Dataset-level scores from summed counts.
    pub fn merge(scores: &[PanopticScores]) -> Self {
        let (mut tp, mut fp, mut fn_, mut iou) = (0, 0, 0, 0.0);
        for s in scores {
            tp += s.tp;
            fp += s.fp;
            fn_ += s.fn_;
            iou += s.matched_iou_sum;
        }
        Self::from_counts(tp, fp, fn_, iou)
    }
}

/// Segments and their pairwise intersections for two label maps.
struct Overlaps {
    pred_area: HashMap<u32, usize>,
    gt_area: HashMap<u32, usize>,
    inter: HashMap<(u32, u32), usize>,
}

fn overlaps(pred: &InstanceLabelMap, gt: &InstanceLabelMap, include_stuff: bool) -> Overlaps {
    let mut o = Overlaps { pred_area: HashMap::new(), gt_area: HashMap::new(), inter: HashMap::new() };
    for (&p, &g) in pred.ids().iter().zip(gt.ids()) {
        let p_in = p != 0 || include_stuff;
        let g_in = g != 0 || include_stuff;
        if p_in {
            *o.pred_area.entry(p).or_insert(0) += 1;
        }
        if g_in {
            *o.gt_area.entry(g).or_insert(0) += 1;
        }
        // Things match things, stuff matches stuff.
        if p_in && g_in && ((p == 0) == (g == 0)) {
            *o.inter.entry((p, g)).or_insert(0) += 1;
        }
    }
    o
}

/// PQ/SQ/RQ over thing instances (id 0 excluded) with IoU > 0.5 matching.
pub fn panoptic_quality(pred: &InstanceLabelMap, gt: &InstanceLabelMap) -> PanopticScores {
    panoptic_quality_with(pred, gt, false)
}

/// As [`panoptic_quality`]; with `include_stuff` the background of each side
/// is scored as one additional stuff segment.
pub fn panoptic_quality_with(pred: &InstanceLabelMap, gt: &InstanceLabelMap, include_stuff: bool) -> PanopticScores {
    assert!(
        pred.height() == gt.height() && pred.width() == gt.width(),
        "instance maps must share a shape"
    );
    let o = overlaps(pred, gt, include_stuff);
    let mut matched_pred = std::collections::HashSet::new();
    let mut matched_gt = std::collections::HashSet::new();
    let mut iou_sum = 0.0;
    // Sorted keys keep the floating-point sum order fixed.
    let mut pairs: Vec<_> = o.inter.iter().collect();
    pairs.sort_unstable_by_key(|(k, _)| **k);
    for (&(p, g), &i) in pairs {
        let union = o.pred_area[&p] + o.gt_area[&g] - i;
        let iou = i as f64 / union as f64;
        if iou > 0.5 {
            matched_pred.insert(p);
            matched_gt.insert(g);
            iou_sum += iou;
        }
    }
    let tp = matched_gt.len();
    let fp = o.pred_area.len() - matched_pred.len();
    let fn_ = o.gt_area.len() - matched_gt.len();
    PanopticScores::from_counts(tp, fp, fn_, iou_sum)
}

/// A predicted instance with a confidence used for greedy matching.
#[derive(Debug, Clone)]
pub struct ScoredMask {
    pub mask: Mask,
    pub score: f64,
}

/// Mean foreground IoU over ground-truth objects. Per scene, predictions are
/// visited in descending score; each takes the unmatched ground-truth object
/// of highest IoU if that IoU reaches `match_threshold`. Unmatched ground
/// truth scores 0. Returns a value in [0, 1]; 1.0 when there is no ground truth.
pub fn mean_fg_iou(scenes: &[(Vec<ScoredMask>, Vec<Mask>)], match_threshold: f64) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (preds, gts) in scenes {
        let mut order: Vec<usize> = (0..preds.len()).collect();
        order.sort_by(|&a, &b| preds[b].score.total_cmp(&preds[a].score).then(a.cmp(&b)));
        let mut best = vec![0.0f64; gts.len()];
        let mut taken = vec![false; gts.len()];
        for pi in order {
            let mut choice: Option<(usize, f64)> = None;
            for (gi, gt) in gts.iter().enumerate() {
                if taken[gi] {
                    continue;
                }
                let iou = object_iou(&preds[pi].mask, gt);
                if choice.is_none_or(|(_, b)| iou > b) {
                    choice = Some((gi, iou));
                }
            }
            if let Some((gi, iou)) = choice {
                if iou >= match_threshold {
                    taken[gi] = true;
                    best[gi] = iou;
                }
            }
        }
        total += best.iter().sum::<f64>();
        count += gts.len();
    }
    if count == 0 {
        1.0
    } else {
        total / count as f64
    }
}
