//! Training regimes, evaluation, the pass-cost benchmark and the
//! missing-click ablation.
//!
//! * standard / negative: one forward/backward per object per epoch,
//! * panoptic: one forward/backward per image per epoch.
//!
//! Every regime is single-threaded and bit-reproducible for a given seed.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::click::{gaussian_click_map, jitter_click, relative_clicks, Click, EncodingConfig, Polarity};
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::losses::{center_loss, class_weights, offset_loss, weighted_cross_entropy, ClassAreaStats, HeadWeights, LossBreakdown};
use crate::metrics::{mean_fg_iou, object_iou, panoptic_quality_with, MiouAveraging, ObjectIouReport, PanopticScores, ScoredMask};
use crate::net::optim::{Optimizer, OptimizerConfig};
use crate::net::{backward, forward, HeadGradients, NetConfig, Parameters};
use crate::predict::{
    class_probability, panoptic_input, predict_panoptic, predict_standard, resolve_overlaps, standard_input, CenterMode,
    ClickMode,
};
use crate::raster::{LabelRaster, Mask, Raster};
use crate::scene::ClickedScene;

/// Epoch counts the reference models were trained for; toy defaults are lower.
pub const REFERENCE_EPOCHS_STANDARD: usize = 1500;
pub const REFERENCE_EPOCHS_PANOPTIC: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Standard,
    Negative,
    Panoptic,
    PanopticCenterHead,
}

impl Regime {
    pub fn click_mode(self) -> ClickMode {
        match self {
            Regime::Standard => ClickMode::Standard,
            Regime::Negative => ClickMode::Negative,
            Regime::Panoptic | Regime::PanopticCenterHead => ClickMode::Panoptic,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::Standard => "standard",
            Regime::Negative => "negative",
            Regime::Panoptic => "panoptic",
            Regime::PanopticCenterHead => "panoptic_center_head",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub base_width: usize,
    pub depth: usize,
    pub encoding: EncodingConfig,
    /// Jitter clicks inside their masks each time a sample is drawn.
    pub jitter: bool,
    pub head_weights: HeadWeights,
    /// Fraction of clicks withheld from the panoptic input channel during
    /// training (retrain-per-fraction ablation). Targets still use all clicks.
    pub input_drop_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::standard()
    }
}

impl TrainConfig {
    /// Baseline defaults: batch 3, lr 1e-4.
    pub fn standard() -> Self {
        TrainConfig {
            epochs: 300,
            batch_size: 3,
            optimizer: OptimizerConfig::adam(1e-4),
            seed: 0,
            base_width: 8,
            depth: 2,
            encoding: EncodingConfig::default(),
            jitter: true,
            head_weights: HeadWeights::default(),
            input_drop_fraction: 0.0,
        }
    }

    /// Panoptic defaults: batch 1, lr 1e-3.
    pub fn panoptic() -> Self {
        TrainConfig { batch_size: 1, optimizer: OptimizerConfig::adam(1e-3), ..Self::standard() }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.input_drop_fraction) {
            return Err(Error::config("input_drop_fraction must lie in [0, 1]"));
        }
        self.encoding.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub regime: Regime,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub epoch_seconds: Vec<f64>,
    pub loss_trace: Vec<f64>,
    /// Forward passes performed in each epoch.
    pub forward_passes: Vec<u64>,
}

fn check_dataset(dataset: &[ClickedScene]) -> Result<()> {
    if dataset.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    dataset.iter().try_for_each(ClickedScene::validate)
}

/// Re-draws every click within its own mask.
fn jittered_clicks<R: rand::Rng>(item: &ClickedScene, enc: &EncodingConfig, rng: &mut R) -> Result<Vec<Click>> {
    item.clicks
        .iter()
        .map(|c| match item.scene.annotation(c.instance_id) {
            Some(a) => jitter_click(c, &a.mask, enc, rng),
            None => Ok(*c),
        })
        .collect()
}

/// Accumulates gradients and steps the optimizer every `batch` samples.
struct Stepper {
    opt: Optimizer,
    accum: Parameters,
    pending: usize,
    batch: usize,
}

impl Stepper {
    fn new(params: &Parameters, cfg: &TrainConfig) -> Self {
        Stepper { opt: Optimizer::new(cfg.optimizer, params.len()), accum: params.zeros_like(), pending: 0, batch: cfg.batch_size }
    }

    fn push(&mut self, params: &mut Parameters, grads: &Parameters) {
        self.accum.add_assign(grads);
        self.pending += 1;
        if self.pending == self.batch {
            self.flush(params);
        }
    }

    fn flush(&mut self, params: &mut Parameters) {
        if self.pending == 0 {
            return;
        }
        self.accum.scale(1.0 / self.pending as f64);
        self.opt.step(params, &self.accum);
        self.accum = params.zeros_like();
        self.pending = 0;
    }
}

fn rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let init = ChaCha8Rng::seed_from_u64(seed);
    let mut data = ChaCha8Rng::seed_from_u64(seed);
    data.set_stream(1);
    (init, data)
}

/// Class weights for the per-object binary task: the clicked object against
/// everything else, aggregated over all objects.
pub fn standard_class_weights(dataset: &[ClickedScene]) -> Result<BTreeMap<u32, f64>> {
    let mut stats = ClassAreaStats::default();
    for item in dataset {
        let px = item.scene.image.pixels() as u64;
        for a in &item.scene.annotations {
            let area = a.mask.count() as u64;
            *stats.areas.entry(1).or_insert(0) += area;
            stats.background += px - area;
        }
    }
    class_weights(&stats)
}

/// Class weights over the per-pixel semantic classes of the whole split.
pub fn semantic_class_weights(dataset: &[ClickedScene]) -> Result<BTreeMap<u32, f64>> {
    let mut stats = ClassAreaStats::default();
    for item in dataset {
        stats.add_labels(&item.scene.class_map());
    }
    class_weights(&stats)
}

/// N-pass training: each object is a separate sample whose input is RGB plus
/// its own click map (plus the all-clicks map with `use_negatives`).
pub fn train_standard(dataset: &[ClickedScene], cfg: &TrainConfig, use_negatives: bool) -> Result<(TrainRun, Parameters)> {
    cfg.validate()?;
    check_dataset(dataset)?;
    let weights = standard_class_weights(dataset)?;
    let regime = if use_negatives { Regime::Negative } else { Regime::Standard };
    let net = NetConfig {
        in_channels: regime.click_mode().in_channels(),
        base_width: cfg.base_width,
        depth: cfg.depth,
        semantic_classes: 2,
        offset_head: false,
        center_head: false,
    };
    let (mut init_rng, mut rng) = rngs(cfg.seed);
    let mut params = Parameters::init(net, &mut init_rng)?;
    let mut stepper = Stepper::new(&params, cfg);
    let rgb: Vec<Raster<f64>> = dataset.iter().map(|d| d.scene.image.to_unit()).collect();
    let targets: Vec<Vec<LabelRaster>> = dataset
        .iter()
        .map(|d| d.scene.annotations.iter().map(|a| a.mask.map(|&m| u32::from(m))).collect())
        .collect();
    let mut items: Vec<(usize, usize)> = dataset
        .iter()
        .enumerate()
        .flat_map(|(i, d)| (0..d.scene.annotations.len()).map(move |j| (i, j)))
        .collect();

    let mut run = new_run(regime, cfg);
    for _ in 0..cfg.epochs {
        let start = Instant::now();
        items.shuffle(&mut rng);
        let (mut loss_sum, mut passes) = (0.0, 0u64);
        for &(i, j) in &items {
            let item = &dataset[i];
            let clicks = if cfg.jitter { jittered_clicks(item, &cfg.encoding, &mut rng)? } else { item.clicks.clone() };
            let id = item.scene.annotations[j].instance_id;
            let rel = relative_clicks(id, &clicks);
            let target_click = rel.iter().find(|c| c.instance_id == id).copied().expect("validated click");
            let input = standard_input(&rgb[i], &target_click, &rel, use_negatives, &cfg.encoding)?;
            let (out, cache) = forward(&params, &input)?;
            passes += 1;
            let (loss, grad) = weighted_cross_entropy(&out.semantic, &targets[i][j], &weights)?;
            let grads = backward(&params, &cache, &HeadGradients { semantic: Some(grad), ..Default::default() })?;
            stepper.push(&mut params, &grads);
            loss_sum += loss;
        }
        stepper.flush(&mut params);
        finish_epoch(&mut run, start, loss_sum / items.len().max(1) as f64, passes);
    }
    Ok((run, params))
}

fn new_run(regime: Regime, cfg: &TrainConfig) -> TrainRun {
    TrainRun {
        regime,
        epochs: cfg.epochs,
        lr: cfg.optimizer.lr(),
        seed: cfg.seed,
        epoch_seconds: Vec::with_capacity(cfg.epochs),
        loss_trace: Vec::with_capacity(cfg.epochs),
        forward_passes: Vec::with_capacity(cfg.epochs),
    }
}

fn finish_epoch(run: &mut TrainRun, start: Instant, loss: f64, passes: u64) {
    // Guard against a zero reading from a coarse clock.
    run.epoch_seconds.push(start.elapsed().as_secs_f64().max(1e-9));
    run.loss_trace.push(loss);
    run.forward_passes.push(passes);
}

/// Per-pixel offsets from every object pixel to its own click, and the
/// foreground mask they are defined on.
pub fn offset_targets(item: &ClickedScene, clicks: &[Click]) -> Result<(Raster<f64>, Mask)> {
    let (h, w) = (item.scene.height(), item.scene.width());
    let mut offsets = Raster::zeros(h, w, 2);
    let mut fg = Mask::empty(h, w);
    for a in &item.scene.annotations {
        let c = clicks
            .iter()
            .find(|c| c.instance_id == a.instance_id)
            .ok_or_else(|| Error::validation(format!("object {} has no click", a.instance_id)))?;
        for (r, col) in a.mask.foreground() {
            offsets.set(r, col, 0, c.row as f64 - r as f64);
            offsets.set(r, col, 1, c.col as f64 - col as f64);
            fg.set(r, col, 0, true);
        }
    }
    Ok((offsets, fg))
}

/// Removes `round(fraction · N)` clicks chosen uniformly; order is kept.
/// For one rng state the removed sets are nested: a larger fraction removes
/// a superset of the clicks a smaller one removes.
pub fn drop_clicks<R: rand::Rng + ?Sized>(clicks: &[Click], fraction: f64, rng: &mut R) -> Vec<Click> {
    let n = clicks.len();
    let k = ((fraction.clamp(0.0, 1.0) * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut keep = vec![true; n];
    for &i in &order[..k] {
        keep[i] = false;
    }
    clicks.iter().zip(keep).filter(|(_, k)| *k).map(|(c, _)| *c).collect()
}

/// Single-pass training: input is RGB plus one map of all clicks; targets
/// are the semantic map, offsets to each object's click and, with
/// `center_head`, a Gaussian heatmap of the ground-truth clicks.
pub fn train_panoptic(dataset: &[ClickedScene], cfg: &TrainConfig, center_head: bool) -> Result<(TrainRun, Parameters)> {
    cfg.validate()?;
    check_dataset(dataset)?;
    let weights = semantic_class_weights(dataset)?;
    let classes = dataset
        .iter()
        .flat_map(|d| d.scene.annotations.iter().map(|a| a.class_id))
        .max()
        .unwrap_or(1) as usize
        + 1;
    let regime = if center_head { Regime::PanopticCenterHead } else { Regime::Panoptic };
    let net = NetConfig {
        in_channels: 4,
        base_width: cfg.base_width,
        depth: cfg.depth,
        semantic_classes: classes.max(2),
        offset_head: true,
        center_head,
    };
    let (mut init_rng, mut rng) = rngs(cfg.seed);
    let mut params = Parameters::init(net, &mut init_rng)?;
    let mut stepper = Stepper::new(&params, cfg);
    let rgb: Vec<Raster<f64>> = dataset.iter().map(|d| d.scene.image.to_unit()).collect();
    let semantic: Vec<LabelRaster> = dataset.iter().map(|d| d.scene.class_map()).collect();
    let heatmaps: Vec<Option<Raster<f64>>> = dataset
        .iter()
        .map(|d| {
            center_head
                .then(|| gaussian_click_map(d.scene.height(), d.scene.width(), &d.clicks, &cfg.encoding))
                .transpose()
        })
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    let mut run = new_run(regime, cfg);
    for _ in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut passes) = (0.0, 0u64);
        for &i in &order {
            let item = &dataset[i];
            let clicks = if cfg.jitter { jittered_clicks(item, &cfg.encoding, &mut rng)? } else { item.clicks.clone() };
            let shown = if cfg.input_drop_fraction > 0.0 {
                drop_clicks(&clicks, cfg.input_drop_fraction, &mut rng)
            } else {
                clicks.clone()
            };
            let input = panoptic_input(&rgb[i], &shown, &cfg.encoding)?;
            let (out, cache) = forward(&params, &input)?;
            passes += 1;
            let (sem_loss, sem_grad) = weighted_cross_entropy(&out.semantic, &semantic[i], &weights)?;
            let (off_target, fg) = offset_targets(item, &clicks)?;
            let pred_off = out.offsets.as_ref().expect("offset head");
            let (off_loss, off_grad) = offset_loss(pred_off, &off_target, &fg)?;
            let center = match (&out.centers, &heatmaps[i]) {
                (Some(pred), Some(target)) => Some(center_loss(pred, target)?),
                _ => None,
            };
            let hw = cfg.head_weights;
            let breakdown = LossBreakdown::new(sem_loss, Some(off_loss), center.as_ref().map(|c| c.0), hw);
            let head_grads = HeadGradients {
                semantic: Some(sem_grad.map(|g| g * hw.semantic)),
                offsets: Some(off_grad.map(|g| g * hw.offset)),
                centers: center.map(|(_, g)| g.map(|v| v * hw.center)),
            };
            let grads = backward(&params, &cache, &head_grads)?;
            stepper.push(&mut params, &grads);
            loss_sum += breakdown.total;
        }
        stepper.flush(&mut params);
        finish_epoch(&mut run, start, loss_sum / order.len() as f64, passes);
    }
    Ok((run, params))
}

pub fn train(regime: Regime, dataset: &[ClickedScene], cfg: &TrainConfig) -> Result<(TrainRun, Parameters)> {
    match regime {
        Regime::Standard => train_standard(dataset, cfg, false),
        Regime::Negative => train_standard(dataset, cfg, true),
        Regime::Panoptic => train_panoptic(dataset, cfg, false),
        Regime::PanopticCenterHead => train_panoptic(dataset, cfg, true),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalOptions {
    pub encoding: EncodingConfig,
    pub fusion: FusionConfig,
    pub averaging: MiouAveraging,
    pub include_stuff: bool,
    pub fg_iou_threshold: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            encoding: EncodingConfig::default(),
            fusion: FusionConfig::default(),
            averaging: MiouAveraging::PerObject,
            include_stuff: false,
            fg_iou_threshold: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEval {
    /// Object IoU per instance id, in [0, 1].
    pub object_iou: BTreeMap<u32, f64>,
    pub panoptic: PanopticScores,
    /// Percent.
    pub fg_iou: f64,
}

/// All scalar metrics are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub miou: f64,
    pub fg_iou: f64,
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub per_scene: BTreeMap<String, SceneEval>,
}

/// Scores a model on scenes with ground truth, using the scene's own clicks
/// (no jitter).
pub fn evaluate(params: &Parameters, mode: ClickMode, dataset: &[ClickedScene], opts: &EvalOptions) -> Result<EvalReport> {
    mode.check_model(params)?;
    let mut per_object = BTreeMap::new();
    let mut per_scene = BTreeMap::new();
    let mut pq_parts = Vec::with_capacity(dataset.len());
    let mut fg_inputs = Vec::with_capacity(dataset.len());
    for item in dataset {
        item.validate()?;
        let scene = &item.scene;
        let (h, w) = (scene.height(), scene.width());
        let gt = scene.instance_map();
        let (pred_map, pred_masks, scored): (_, BTreeMap<u32, Mask>, Vec<ScoredMask>) = match mode {
            ClickMode::Standard | ClickMode::Negative => {
                let preds = predict_standard(params, &scene.image, &item.clicks, mode == ClickMode::Negative, &opts.encoding)?;
                let scored = preds.iter().map(|p| ScoredMask { mask: p.mask.clone(), score: p.confidence() }).collect();
                let map = resolve_overlaps(&preds, h, w);
                let masks = preds.into_iter().map(|p| (p.instance_id, p.mask)).collect();
                (map, masks, scored)
            }
            ClickMode::Panoptic => {
                let (map, pred) = predict_panoptic(params, &scene.image, &item.clicks, CenterMode::Clicks, &opts.encoding, &opts.fusion)?;
                let bg = class_probability(&pred.semantic, 0);
                let ids = map.instance_ids();
                let scored = ids
                    .iter()
                    .map(|&id| {
                        let mask = map.mask_of(id);
                        let fg: f64 = mask.foreground().map(|(r, c)| 1.0 - bg.get(r, c, 0)).sum();
                        ScoredMask { score: fg / mask.count() as f64, mask }
                    })
                    .collect();
                let masks = item.clicks.iter().map(|c| (c.instance_id, map.mask_of(c.instance_id))).collect();
                (map, masks, scored)
            }
        };
        let mut ious = BTreeMap::new();
        for a in &scene.annotations {
            let empty = Mask::empty(h, w);
            let pred = pred_masks.get(&a.instance_id).unwrap_or(&empty);
            let iou = object_iou(pred, &a.mask);
            ious.insert(a.instance_id, iou);
            per_object.insert((scene.id.clone(), a.instance_id), iou);
        }
        let pq = panoptic_quality_with(&pred_map, &gt, opts.include_stuff);
        pq_parts.push(pq);
        let gts: Vec<Mask> = scene.annotations.iter().map(|a| a.mask.clone()).collect();
        let scene_fg = 100.0 * mean_fg_iou(&[(scored.clone(), gts.clone())], opts.fg_iou_threshold);
        fg_inputs.push((scored, gts));
        per_scene.insert(scene.id.clone(), SceneEval { object_iou: ious, panoptic: pq, fg_iou: scene_fg });
    }
    let miou = ObjectIouReport::from_ious(per_object, opts.averaging)?.mean_percent();
    let pq = PanopticScores::merge(&pq_parts);
    Ok(EvalReport {
        miou,
        fg_iou: 100.0 * mean_fg_iou(&fg_inputs, opts.fg_iou_threshold),
        pq: pq.pq,
        sq: pq.sq,
        rq: pq.rq,
        per_scene,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationStrategy {
    /// One center-head model trained on complete clicks; clicks are dropped
    /// only from the evaluation input.
    #[default]
    TrainOnce,
    /// A separate model per fraction, trained with that fraction dropped
    /// from its input channel.
    RetrainPerFraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub missing_fraction: f64,
    pub centers: CenterMode,
    pub scores: PanopticScores,
}

/// Independent of the fraction, so each scene loses nested click sets as the
/// fraction grows.
fn ablation_rng(seed: u64, scene: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(scene as u64);
    rng
}

/// Panoptic scores of one center-head model with the input clicks thinned.
pub fn evaluate_missing_clicks(
    params: &Parameters,
    dataset: &[ClickedScene],
    fraction: f64,
    seed: u64,
    opts: &EvalOptions,
) -> Result<PanopticScores> {
    let mut parts = Vec::with_capacity(dataset.len());
    for (i, item) in dataset.iter().enumerate() {
        let shown = drop_clicks(&item.clicks, fraction, &mut ablation_rng(seed, i));
        let (map, _) = predict_panoptic(params, &item.scene.image, &shown, CenterMode::Predicted, &opts.encoding, &opts.fusion)?;
        parts.push(panoptic_quality_with(&map, &item.scene.instance_map(), opts.include_stuff));
    }
    Ok(PanopticScores::merge(&parts))
}

/// Panoptic scores with the user clicks as centers (the reference row).
pub fn evaluate_user_centers(params: &Parameters, dataset: &[ClickedScene], opts: &EvalOptions) -> Result<PanopticScores> {
    let mut parts = Vec::with_capacity(dataset.len());
    for item in dataset {
        let (map, _) = predict_panoptic(params, &item.scene.image, &item.clicks, CenterMode::Clicks, &opts.encoding, &opts.fusion)?;
        parts.push(panoptic_quality_with(&map, &item.scene.instance_map(), opts.include_stuff));
    }
    Ok(PanopticScores::merge(&parts))
}

/// The first row uses user clicks as centers; the rest use predicted centers
/// with `fractions` of the clicks missing from the input.
pub fn missing_click_ablation(
    train_set: &[ClickedScene],
    eval_set: &[ClickedScene],
    cfg: &TrainConfig,
    fractions: &[f64],
    strategy: AblationStrategy,
    opts: &EvalOptions,
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(fractions.len() + 1);
    match strategy {
        AblationStrategy::TrainOnce => {
            let (_, params) = train_panoptic(train_set, cfg, true)?;
            rows.push(AblationRow {
                missing_fraction: 0.0,
                centers: CenterMode::Clicks,
                scores: evaluate_user_centers(&params, eval_set, opts)?,
            });
            for &f in fractions {
                let scores = evaluate_missing_clicks(&params, eval_set, f, cfg.seed, opts)?;
                rows.push(AblationRow { missing_fraction: f, centers: CenterMode::Predicted, scores });
            }
        }
        AblationStrategy::RetrainPerFraction => {
            for (k, &f) in fractions.iter().enumerate() {
                let cfg_f = TrainConfig { input_drop_fraction: f, ..cfg.clone() };
                let (_, params) = train_panoptic(train_set, &cfg_f, true)?;
                if k == 0 {
                    rows.push(AblationRow {
                        missing_fraction: 0.0,
                        centers: CenterMode::Clicks,
                        scores: evaluate_user_centers(&params, eval_set, opts)?,
                    });
                }
                let scores = evaluate_missing_clicks(&params, eval_set, f, cfg.seed, opts)?;
                rows.push(AblationRow { missing_fraction: f, centers: CenterMode::Predicted, scores });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    /// Median standard epoch time over median panoptic epoch time.
    pub ratio: f64,
    pub mean_objects: f64,
    pub standard: TrainRun,
    pub panoptic: TrainRun,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times `warmup + epochs` epochs of the standard and panoptic regimes on the
/// same data and network size; warm-up epochs are discarded.
pub fn benchmark_pass_ratio(dataset: &[ClickedScene], cfg: &TrainConfig, epochs: usize, warmup: usize) -> Result<BenchReport> {
    if epochs == 0 {
        return Err(Error::config("benchmark needs at least one timed epoch"));
    }
    let total = TrainConfig { epochs: epochs + warmup, ..cfg.clone() };
    let (standard, _) = train_standard(dataset, &total, false)?;
    let (panoptic, _) = train_panoptic(dataset, &total, false)?;
    let ratio = median(&standard.epoch_seconds[warmup..]) / median(&panoptic.epoch_seconds[warmup..]);
    let objects: usize = dataset.iter().map(|d| d.scene.annotations.len()).sum();
    Ok(BenchReport { ratio, mean_objects: objects as f64 / dataset.len() as f64, standard, panoptic })
}

/// Positive clicks carry their object's id; used to sanity-check inputs.
pub fn positive_ids(clicks: &[Click]) -> Vec<u32> {
    clicks.iter().filter(|c| c.polarity == Polarity::Positive).map(|c| c.instance_id).collect()
}
