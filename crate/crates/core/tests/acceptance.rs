//! Acceptance suite. Every criterion prints exactly one `PASS`/`FAIL` line
//! and then asserts. A shared lock runs the criteria one at a time so the
//! timing measurements are not disturbed by concurrent training.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::sync::Mutex;
use std::time::Instant;

use clickforge::click::{derive_click, gaussian_click_map, jitter_click, EncodingConfig};
use clickforge::fusion::{fuse, CenterSet, FusionConfig, PanopticPrediction};
use clickforge::losses::{class_weights, ClassAreaStats};
use clickforge::metrics::panoptic_quality;
use clickforge::net::{NetConfig, Parameters};
use clickforge::pipeline::{
    check_ids_from_clicks, export_dataset, generate_pseudo_labels, read_dataset, split_counts, ClickedImage,
    PseudoLabelOptions,
};
use clickforge::predict::ClickMode;
use clickforge::synth::{gen_dataset, SynthConfig};
use clickforge::train::{
    benchmark_pass_ratio, evaluate, evaluate_missing_clicks, evaluate_user_centers, train, train_panoptic, EvalOptions,
    Regime, TrainConfig,
};
use clickforge::{Click, ClickedScene, InstanceAnnotation, InstanceLabelMap, LabelRaster, Mask, Raster, Scene};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(name: &str, ok: bool, detail: String) {
    let line = format!("{} {name}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(ok, "{name}: {detail}");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Union of 1-3 random rectangles and ellipses, or scattered pixels.
fn random_mask<R: Rng>(h: usize, w: usize, rng: &mut R) -> Mask {
    let mut m = Mask::empty(h, w);
    if rng.random_bool(0.15) {
        for _ in 0..rng.random_range(1..20) {
            m.set(rng.random_range(0..h), rng.random_range(0..w), 0, true);
        }
        return m;
    }
    for _ in 0..rng.random_range(1..=3) {
        let (r0, c0) = (rng.random_range(0..h) as f64, rng.random_range(0..w) as f64);
        let (a, b) = (rng.random_range(0.5..h as f64 / 3.0), rng.random_range(0.5..w as f64 / 3.0));
        let ellipse = rng.random_bool(0.5);
        for r in 0..h {
            for c in 0..w {
                let (dr, dc) = ((r as f64 - r0) / a, (c as f64 - c0) / b);
                let inside = if ellipse { dr * dr + dc * dc <= 1.0 } else { dr.abs() <= 1.0 && dc.abs() <= 1.0 };
                if inside {
                    m.set(r, c, 0, true);
                }
            }
        }
    }
    if m.is_empty() {
        m.set(h / 2, w / 2, 0, true);
    }
    m
}

#[test]
fn encoding_suite() {
    let _g = serial();
    let start = Instant::now();
    let enc = EncodingConfig::default();
    let mut r = rng(1);
    let mut worst_peak: f64 = 0.0;
    let mut worst_sigma: f64 = 0.0;
    for _ in 0..100 {
        let (row, col) = (r.random_range(10..54), r.random_range(10..54));
        let map = gaussian_click_map(64, 64, &[Click::positive(row, col, 1)], &enc).unwrap();
        worst_peak = worst_peak.max((map.get(row, col, 0) - 1.0).abs());
        worst_sigma = worst_sigma.max((map.get(row + 8, col, 0) - (-0.5f64).exp()).abs());
        worst_sigma = worst_sigma.max((map.get(row, col - 8, 0) - (-0.5f64).exp()).abs());
    }

    let mut derive_failures = 0;
    let mut jitter_failures = 0;
    for i in 0..1000 {
        let (h, w) = (r.random_range(4..48), r.random_range(4..48));
        let mask = random_mask(h, w, &mut r);
        let keypoint = r.random_bool(0.5).then(|| (r.random_range(0..h), r.random_range(0..w)));
        let ann = InstanceAnnotation { instance_id: 1 + i as u32, class_id: 1, mask: mask.clone(), keypoint };
        let click = derive_click(&ann, &mut r).unwrap();
        if !mask.at(click.row, click.col) {
            derive_failures += 1;
        }
        for _ in 0..20 {
            let j = jitter_click(&click, &mask, &enc, &mut r).unwrap();
            let chebyshev = j.row.abs_diff(click.row).max(j.col.abs_diff(click.col));
            if !mask.at(j.row, j.col) || chebyshev > enc.jitter_radius {
                jitter_failures += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst_peak <= 1e-9 && worst_sigma <= 1e-9 && derive_failures == 0 && jitter_failures == 0 && secs < 60.0;
    verdict(
        "encoding",
        ok,
        format!(
            "peak err {worst_peak:.1e}, sigma err {worst_sigma:.1e}, derive failures {derive_failures}/1000, \
             jitter failures {jitter_failures}/20000, {secs:.1}s"
        ),
    );
}

/// Nearest center by squared distance, ties to the smaller id.
fn brute_force_labels(labels: &LabelRaster, centers: &[(usize, usize, u32)]) -> InstanceLabelMap {
    let (h, w) = (labels.height(), labels.width());
    let mut map = InstanceLabelMap::zeros(h, w);
    for r in 0..h {
        for c in 0..w {
            if labels.get(r, c, 0) == 0 {
                continue;
            }
            let best = centers
                .iter()
                .map(|&(cr, cc, id)| {
                    let d = (r as i64 - cr as i64).pow(2) + (c as i64 - cc as i64).pow(2);
                    (d, id)
                })
                .min()
                .unwrap();
            map.set(r, c, best.1);
        }
    }
    map
}

fn random_prediction<R: Rng>(h: usize, w: usize, max_offset: f64, rng: &mut R) -> PanopticPrediction {
    let classes = rng.random_range(2..=3);
    let fg_rate = rng.random_range(0.1..0.9);
    let semantic = Raster::from_fn(h, w, classes, |_, _, _| rng.random_range(0.0..1.0));
    let semantic = Raster::new(
        h,
        w,
        classes,
        semantic
            .values()
            .chunks_exact(classes)
            .flat_map(|px| {
                let mut px = px.to_vec();
                // Bias toward background at a per-scene rate.
                px[0] += if rng.random_bool(fg_rate) { -1.0 } else { 1.0 };
                px
            })
            .collect(),
    )
    .unwrap();
    let offsets = Raster::from_fn(h, w, 2, |_, _, _| if max_offset > 0.0 { rng.random_range(-max_offset..max_offset) } else { 0.0 });
    PanopticPrediction { semantic, offsets, center_heatmap: None }
}

fn random_centers<R: Rng>(h: usize, w: usize, n: usize, rng: &mut R) -> Vec<(usize, usize, u32)> {
    let mut used = BTreeSet::new();
    let mut ids = BTreeSet::new();
    let mut out = Vec::new();
    while out.len() < n {
        let (r, c) = (rng.random_range(0..h), rng.random_range(0..w));
        let id = rng.random_range(1..1000);
        if used.insert((r, c)) && ids.insert(id) {
            out.push((r, c, id));
        }
    }
    out
}

#[test]
fn fusion_oracle() {
    let _g = serial();
    let start = Instant::now();
    let mut r = rng(2);
    let no_fallback = FusionConfig { empty_center_fallback: None, ..FusionConfig::default() };
    let mut oracle_mismatches = 0;
    for _ in 0..100 {
        let pred = random_prediction(64, 64, 0.0, &mut r);
        let n = r.random_range(1..=12);
        let centers = random_centers(64, 64, n, &mut r);
        let clicks: Vec<Click> = centers.iter().map(|&(row, col, id)| Click::positive(row, col, id)).collect();
        let got = fuse(&pred, Some(&CenterSet::from_clicks(&clicks)), &no_fallback).unwrap();
        if got != brute_force_labels(&pred.semantic.argmax(), &centers) {
            oracle_mismatches += 1;
        }
    }
    let mut partition_violations = 0;
    for i in 0..100 {
        let pred = random_prediction(64, 64, 20.0, &mut r);
        let n = if i % 10 == 0 { 0 } else { r.random_range(1..=12) };
        let centers = random_centers(64, 64, n, &mut r);
        let clicks: Vec<Click> = centers.iter().map(|&(row, col, id)| Click::positive(row, col, id)).collect();
        let ids: BTreeSet<u32> = centers.iter().map(|c| c.2).collect();
        let map = fuse(&pred, Some(&CenterSet::from_clicks(&clicks)), &no_fallback).unwrap();
        let labels = pred.semantic.argmax();
        let ok = labels.values().iter().zip(map.ids()).all(|(&l, &id)| match (l, n) {
            (0, _) | (_, 0) => id == 0,
            _ => ids.contains(&id),
        });
        if !ok {
            partition_violations += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = oracle_mismatches == 0 && partition_violations == 0 && secs < 120.0;
    verdict(
        "fusion oracle",
        ok,
        format!("oracle mismatches {oracle_mismatches}/100, partition violations {partition_violations}/100, {secs:.1}s"),
    );
}

fn random_instance_map<R: Rng>(h: usize, w: usize, rng: &mut R) -> InstanceLabelMap {
    let mut map = InstanceLabelMap::zeros(h, w);
    for id in 1..=rng.random_range(0..6u32) {
        let (r0, c0) = (rng.random_range(0..h), rng.random_range(0..w));
        let (r1, c1) = ((r0 + rng.random_range(1..12)).min(h), (c0 + rng.random_range(1..12)).min(w));
        for r in r0..r1 {
            for c in c0..c1 {
                map.set(r, c, id);
            }
        }
    }
    map
}

#[test]
fn metrics_suite() {
    let _g = serial();
    let mut r = rng(3);
    let mut worst_identity: f64 = 0.0;
    for _ in 0..200 {
        let (a, b) = (random_instance_map(32, 32, &mut r), random_instance_map(32, 32, &mut r));
        let s = panoptic_quality(&a, &b);
        worst_identity = worst_identity.max((s.pq - s.sq * s.rq / 100.0).abs());
    }

    // One object matched at IoU 0.6 plus one spurious prediction.
    let mut gt = InstanceLabelMap::zeros(10, 10);
    let mut pred = InstanceLabelMap::zeros(10, 10);
    for c in 0..5 {
        gt.set(0, c, 1);
        gt.set(1, c, 1);
    }
    for c in 0..3 {
        pred.set(0, c, 1);
        pred.set(1, c, 1);
    }
    pred.set(9, 9, 2);
    let hand = panoptic_quality(&pred, &gt);
    let hand_ok = (hand.pq - 40.0).abs() <= 0.01 && (hand.sq - 60.0).abs() <= 0.01 && (hand.rq - 66.67).abs() <= 0.01;
    let perfect = panoptic_quality(&gt, &gt);
    let perfect_ok = perfect.pq == 100.0 && perfect.sq == 100.0 && perfect.rq == 100.0;

    let bg = 1e12_f64;
    let e = std::f64::consts::E;
    let areas: BTreeMap<u32, u64> =
        [(1, 1u64), (2, 1_000), (3, 5e9 as u64), (4, (bg * (e - 1.02)).round() as u64)].into_iter().collect();
    let stats = ClassAreaStats { areas: areas.clone(), background: bg as u64 };
    let w = class_weights(&stats).unwrap();
    let mut worst_weight: f64 = 0.0;
    for (c, a) in &areas {
        let direct = 1.0 / ((*a as f64 / bg) + 1.02).ln();
        worst_weight = worst_weight.max((w[c] - direct).abs());
    }
    worst_weight = worst_weight.max((w[&0] - 1.0 / (2.02f64).ln()).abs());
    let unit_ok = (w[&4] - 1.0).abs() <= 1e-9;

    let ok = worst_identity <= 1e-9 && hand_ok && perfect_ok && worst_weight <= 1e-9 && unit_ok;
    verdict(
        "metrics",
        ok,
        format!(
            "PQ-SQ*RQ/100 max err {worst_identity:.1e} over 200 pairs; hand case {:.2}/{:.2}/{:.2}; perfect {}/{}/{}; \
             weight max err {worst_weight:.1e}, w at a_bg(e-1.02) = {:.12}",
            hand.pq, hand.sq, hand.rq, perfect.pq, perfect.sq, perfect.rq, w[&4]
        ),
    );
}

#[test]
fn gradient_check() {
    let _g = serial();
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 0..20 {
        let r = common::gradcheck(seed, 40);
        worst = worst.max(r.max_rel_err);
        checked += r.checked;
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "gradient check",
        worst < 1e-4 && secs < 300.0,
        format!("20 configs, {checked} coordinates, max rel err {worst:.2e}, {secs:.1}s"),
    );
}

/// Scenes that kept exactly `n` objects after occlusion.
fn scenes_with(n: usize, count: usize, seed: u64) -> Vec<ClickedScene> {
    let cfg = SynthConfig { seed, min_radius: 4.0, max_radius: 6.0, separation: 1.1, ..SynthConfig::default().with_objects(n, n) };
    let mut out = Vec::new();
    let mut i = 0;
    while out.len() < count {
        let s = clickforge::synth::gen_scene(&cfg, i).unwrap();
        if s.scene.annotations.len() == n {
            out.push(s);
        }
        i += 1;
    }
    out
}

#[test]
fn pass_count_and_cost_scaling() {
    let _g = serial();
    let start = Instant::now();
    let cfg = TrainConfig::panoptic();
    let mut counts_ok = true;
    let mut ratios = Vec::new();
    for n in [2, 4, 8] {
        let data = scenes_with(n, 6, 5);
        let report = benchmark_pass_ratio(&data, &cfg, 5, 1).unwrap();
        counts_ok &= report.standard.forward_passes.iter().all(|&p| p == (n * data.len()) as u64);
        counts_ok &= report.panoptic.forward_passes.iter().all(|&p| p == data.len() as u64);
        ratios.push((n, report.ratio));
    }
    let secs = start.elapsed().as_secs_f64();
    let at8 = ratios[2].1;
    let monotone = ratios.windows(2).all(|w| w[1].1 > w[0].1);
    let ok = counts_ok && at8 >= 4.0 && monotone && secs < 900.0;
    let listed: Vec<String> = ratios.iter().map(|(n, r)| format!("N={n}: {r:.2}")).collect();
    verdict(
        "pass count and cost scaling",
        ok,
        format!("counters exact: {counts_ok}; epoch-time ratios {}; {secs:.1}s", listed.join(", ")),
    );
}

/// Shared benchmark: 64x64 scenes with 6 objects, 40 train / 20 eval.
fn table_data() -> (Vec<ClickedScene>, Vec<ClickedScene>) {
    let cfg = SynthConfig { seed: 1, ..SynthConfig::default().with_objects(6, 6) };
    (gen_dataset(&cfg, 0, 40).unwrap(), gen_dataset(&cfg, 1000, 20).unwrap())
}

/// Toy training budgets for the benchmark.
fn table_config(regime: Regime) -> TrainConfig {
    match regime {
        Regime::Standard | Regime::Negative => TrainConfig { epochs: 40, batch_size: 1, ..TrainConfig::panoptic() },
        Regime::Panoptic => TrainConfig { epochs: 40, ..TrainConfig::panoptic() },
        Regime::PanopticCenterHead => TrainConfig { epochs: 80, ..TrainConfig::panoptic() },
    }
}

#[test]
fn table_one_analogue() {
    let _g = serial();
    let start = Instant::now();
    let (train_set, eval_set) = table_data();
    let mut miou = BTreeMap::new();
    for regime in [Regime::Standard, Regime::Negative, Regime::Panoptic] {
        let (_, params) = train(regime, &train_set, &table_config(regime)).unwrap();
        let report = evaluate(&params, regime.click_mode(), &eval_set, &EvalOptions::default()).unwrap();
        miou.insert(regime.name(), report.miou);
    }
    let secs = start.elapsed().as_secs_f64();
    let gap = (miou["panoptic"] - miou["standard"]).abs();
    let ok = miou.values().all(|&m| m >= 70.0) && gap <= 5.0 && secs < 1800.0;
    verdict(
        "table I analogue",
        ok,
        format!(
            "mIoU standard {:.1}, negative {:.1}, panoptic {:.1}; |panoptic - standard| = {gap:.1}; {secs:.0}s",
            miou["standard"], miou["negative"], miou["panoptic"]
        ),
    );
}

#[test]
fn table_three_analogue() {
    let _g = serial();
    let start = Instant::now();
    let (train_set, _) = table_data();
    let cfg = SynthConfig { seed: 1, ..SynthConfig::default().with_objects(6, 6) };
    let eval_set = gen_dataset(&cfg, 2000, 50).unwrap();
    let (_, params) = train_panoptic(&train_set, &table_config(Regime::PanopticCenterHead), true).unwrap();
    let opts = EvalOptions::default();
    let user = evaluate_user_centers(&params, &eval_set, &opts).unwrap().rq;
    let fractions = [0.0, 0.25, 0.5, 0.75, 1.0];
    let rq: Vec<f64> =
        fractions.iter().map(|&f| evaluate_missing_clicks(&params, &eval_set, f, 7, &opts).unwrap().rq).collect();
    let secs = start.elapsed().as_secs_f64();
    let close = (rq[0] - user).abs() <= 5.0;
    let non_increasing = rq.windows(2).all(|w| w[1] <= w[0] + 2.0);
    let ok = close && non_increasing && rq[4] > 0.0 && secs < 1200.0;
    let listed: Vec<String> = fractions.iter().zip(&rq).map(|(f, r)| format!("{:.0}%: {r:.1}", 100.0 * f)).collect();
    verdict(
        "table III analogue",
        ok,
        format!("RQ user clicks {user:.1}; predicted centers with missing clicks {}; {secs:.0}s", listed.join(", ")),
    );
}

#[test]
fn pipeline() {
    let _g = serial();
    let mut r = rng(8);
    let mut split_violations = 0;
    for seed in 0..50 {
        let n = r.random_range(10..60);
        let counts: Vec<(String, usize)> = (0..n).map(|i| (format!("s{i}"), r.random_range(1..30))).collect();
        let total: usize = counts.iter().map(|c| c.1).sum();
        let max_share = counts.iter().map(|c| c.1).max().unwrap() as f64 / total as f64;
        let m = split_counts(&counts, 0.1, seed).unwrap();
        if m.achieved_fraction < 0.1 || m.achieved_fraction > 0.1 + max_share + 1e-12 {
            split_violations += 1;
        }
    }

    let cfg = SynthConfig { height: 32, width: 32, min_radius: 3.0, max_radius: 6.0, seed: 8, ..Default::default() };
    let data = gen_dataset(&cfg, 0, 30).unwrap();
    let scenes: Vec<Scene> = data.iter().map(|d| d.scene.clone()).collect();
    let counts: Vec<(String, usize)> = scenes.iter().map(|s| (s.id.clone(), s.annotations.len())).collect();
    let manifest = split_counts(&counts, 0.1, 0).unwrap();
    let manual: Vec<Scene> = scenes.iter().filter(|s| manifest.labelled.contains(&s.id)).cloned().collect();
    let unlabelled: Vec<ClickedImage> =
        data.iter().filter(|d| manifest.unlabelled.contains(&d.scene.id)).map(ClickedImage::from).collect();

    let mut partition_failures = 0;
    let mut roundtrip_failures = 0;
    let mut exported = 0;
    for mode in [ClickMode::Standard, ClickMode::Negative, ClickMode::Panoptic] {
        let net = NetConfig {
            in_channels: mode.in_channels(),
            base_width: 2,
            depth: 1,
            semantic_classes: if mode == ClickMode::Panoptic { 3 } else { 2 },
            offset_head: mode == ClickMode::Panoptic,
            center_head: false,
        };
        let params = Parameters::init(net, &mut r).unwrap();
        let set = generate_pseudo_labels(&params, &unlabelled, mode, &PseudoLabelOptions::default()).unwrap();
        for (label, src) in set.labels.iter().zip(&unlabelled) {
            let valid = check_ids_from_clicks(&label.instance_map, &src.clicks).is_ok()
                && label.instance_map.instance_ids() == label.classes.keys().copied().collect::<Vec<_>>();
            if !valid {
                partition_failures += 1;
            }
        }
        let dir = tempfile::tempdir().unwrap();
        export_dataset(&manifest, &manual, &set, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        exported += back.len();
        let mut expected: BTreeMap<&str, (InstanceLabelMap, &clickforge::Image)> = manual
            .iter()
            .map(|s| (s.id.as_str(), (s.instance_map(), &s.image)))
            .collect();
        for l in &set.labels {
            expected.insert(l.scene_id.as_str(), (l.instance_map.clone(), &l.image));
        }
        for e in &back {
            let (map, img) = &expected[e.scene.id.as_str()];
            if e.scene.instance_map() != *map || e.scene.image != **img {
                roundtrip_failures += 1;
            }
        }
        if back.len() != scenes.len() {
            roundtrip_failures += 1;
        }
        // Manual scenes keep their masks and classes exactly.
        for s in &manual {
            let e = back.iter().find(|e| e.scene.id == s.id).unwrap();
            if e.scene != *s {
                roundtrip_failures += 1;
            }
        }
    }
    let ok = split_violations == 0 && partition_failures == 0 && roundtrip_failures == 0;
    verdict(
        "pipeline",
        ok,
        format!(
            "split bound violations {split_violations}/50; partition failures {partition_failures}; \
             round-trip failures {roundtrip_failures} over {exported} exported scenes"
        ),
    );
}
