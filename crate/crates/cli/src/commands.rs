use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clickforge::click::{derive_click, gaussian_click_map};
use clickforge::fusion::{fuse, CenterSet};
use clickforge::io::{read_rgb_png, read_scene, write_gray_png, write_instance_map};
use clickforge::net::checkpoint;
use clickforge::pipeline::{
    export_dataset, generate_pseudo_labels, read_dataset, split_by_object_fraction, ClickedImage, PseudoLabelOptions,
};
use clickforge::predict::{predict_panoptic, CenterMode, ClickMode};
use clickforge::service::{classical_predict, PredictionJson, DEFAULT_EXG_THRESHOLD};
use clickforge::synth::{gen_dataset, SynthConfig};
use clickforge::train::{benchmark_pass_ratio, evaluate, train, EvalOptions, Regime, TrainConfig};
use clickforge::{Click, ClickedScene, EncodingConfig, FusionConfig, Scene};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Everything `--config` may set; missing sections keep their defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub synth: SynthConfig,
    pub train: Option<TrainConfig>,
    pub eval: EvalOptions,
    pub pseudo: PseudoLabelOptions,
    pub split_target: Option<f64>,
    pub train_scenes: Option<usize>,
    pub eval_scenes: Option<usize>,
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Config::default()),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn train_config(&self, regime: Regime, seed: Option<u64>) -> TrainConfig {
        let mut cfg = self.train.clone().unwrap_or_else(|| match regime {
            Regime::Standard | Regime::Negative => TrainConfig::standard(),
            _ => TrainConfig::panoptic(),
        });
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_clicks(path: &Path) -> Result<Vec<Click>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading clicks {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing clicks {}", path.display()))
}

/// Scenes from an export (`manifest.json`) or from matching
/// `images/<id>.png` + `annotations/<id>.json` pairs.
pub fn load_scenes(dir: &Path) -> Result<Vec<Scene>> {
    if dir.join("manifest.json").exists() {
        return Ok(read_dataset(dir)?.into_iter().map(|e| e.scene).collect());
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir.join("annotations"))
        .with_context(|| format!("listing {}/annotations", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    paths.retain(|p| p.extension().is_some_and(|e| e == "json"));
    paths.sort();
    paths
        .iter()
        .map(|ann| {
            let stem = ann.file_stem().context("annotation without a name")?;
            let img = dir.join("images").join(stem).with_extension("png");
            read_scene(&img, ann).with_context(|| format!("loading {}", ann.display()))
        })
        .collect()
}

/// Attaches one derived click per object.
pub fn click_scenes(scenes: Vec<Scene>, seed: u64) -> Result<Vec<ClickedScene>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    scenes
        .into_iter()
        .map(|scene| {
            let clicks = scene.annotations.iter().map(|a| derive_click(a, &mut rng)).collect::<clickforge::Result<_>>()?;
            Ok(ClickedScene { scene, clicks })
        })
        .collect()
}

/// Real data when `data` is given, else synthetic scenes `start..start+count`.
pub fn dataset(data: Option<&Path>, cfg: &Config, seed: u64, start: u64, count: usize) -> Result<Vec<ClickedScene>> {
    match data {
        Some(dir) => click_scenes(load_scenes(dir)?, seed),
        None => {
            let synth = SynthConfig { seed, ..cfg.synth.clone() };
            Ok(gen_dataset(&synth, start, count)?)
        }
    }
}

pub fn encode(image: &Path, clicks: &Path, enc: &EncodingConfig, out: &Path) -> Result<PathBuf> {
    let img = read_rgb_png(image)?;
    let clicks = read_clicks(clicks)?;
    let map = gaussian_click_map(img.height(), img.width(), &clicks, enc)?;
    fs::create_dir_all(out)?;
    let path = out.join("click_map.png");
    write_gray_png(&map, &path)?;
    Ok(path)
}

pub struct FuseArgs<'a> {
    pub image: &'a Path,
    pub clicks: &'a Path,
    pub checkpoint: Option<&'a Path>,
    /// Use predicted centers (needs a center-head checkpoint).
    pub recover: bool,
    pub threshold: f64,
}

pub fn fuse_cmd(args: &FuseArgs, cfg: &Config, out: &Path) -> Result<PredictionJson> {
    let image = read_rgb_png(args.image)?;
    let clicks = read_clicks(args.clicks)?;
    let fusion = FusionConfig { empty_center_fallback: None, ..cfg.eval.fusion };
    let map = match args.checkpoint {
        Some(ckpt) => {
            let params = checkpoint::load(ckpt)?;
            let mode = if args.recover { CenterMode::Predicted } else { CenterMode::Clicks };
            predict_panoptic(&params, &image, &clicks, mode, &cfg.eval.encoding, &fusion)?.0
        }
        None => {
            if args.recover {
                bail!("--recover needs a checkpoint with a center head");
            }
            let pred = classical_predict(&image, args.threshold)?;
            fuse(&pred, Some(&CenterSet::from_clicks(&clicks)), &fusion)?
        }
    };
    fs::create_dir_all(out)?;
    write_instance_map(&map, out.join("instance_map.png"))?;
    let json = PredictionJson::from_map(&map);
    write_json(&out.join("prediction.json"), &json)?;
    Ok(json)
}

pub fn default_threshold() -> f64 {
    DEFAULT_EXG_THRESHOLD
}

pub fn train_cmd(regime: Regime, data: Option<&Path>, cfg: &Config, seed: u64, out: &Path) -> Result<PathBuf> {
    let set = dataset(data, cfg, seed, 0, cfg.train_scenes.unwrap_or(40))?;
    let tcfg = cfg.train_config(regime, Some(seed));
    let (run, params) = train(regime, &set, &tcfg)?;
    fs::create_dir_all(out)?;
    let path = out.join("model.ckpt");
    checkpoint::save(&params, &path)?;
    write_json(&out.join("train_run.json"), &run)?;
    Ok(path)
}

fn mode_of(params: &clickforge::Parameters) -> ClickMode {
    let c = params.config();
    if c.offset_head {
        ClickMode::Panoptic
    } else if c.in_channels == 5 {
        ClickMode::Negative
    } else {
        ClickMode::Standard
    }
}

pub fn eval_cmd(ckpt: &Path, data: Option<&Path>, cfg: &Config, seed: u64, out: &Path) -> Result<clickforge::train::EvalReport> {
    let params = checkpoint::load(ckpt)?;
    // Synthetic evaluation scenes are disjoint from the training indices.
    let set = dataset(data, cfg, seed, 1_000_000, cfg.eval_scenes.unwrap_or(20))?;
    let report = evaluate(&params, mode_of(&params), &set, &cfg.eval)?;
    fs::create_dir_all(out)?;
    write_json(&out.join("eval.json"), &report)?;
    Ok(report)
}

pub fn pseudolabel_cmd(ckpt: &Path, data: Option<&Path>, cfg: &Config, seed: u64, out: &Path) -> Result<usize> {
    let params = checkpoint::load(ckpt)?;
    let set = dataset(data, cfg, seed, 0, cfg.train_scenes.unwrap_or(40))?;
    let scenes: Vec<Scene> = set.iter().map(|s| s.scene.clone()).collect();
    let manifest = split_by_object_fraction(&scenes, cfg.split_target.unwrap_or(0.1), seed)?;
    let manual: Vec<Scene> = scenes.iter().filter(|s| manifest.labelled.contains(&s.id)).cloned().collect();
    let unlabelled: Vec<ClickedImage> =
        set.iter().filter(|s| manifest.unlabelled.contains(&s.scene.id)).map(ClickedImage::from).collect();
    let pseudo = generate_pseudo_labels(&params, &unlabelled, mode_of(&params), &cfg.pseudo)?;
    let written = export_dataset(&manifest, &manual, &pseudo, out)?;
    Ok(written.scenes.len())
}

/// Writes `bench_n<N>.csv` (`regime,epoch,seconds,loss`) per object count
/// and a `bench.json` summary with ratios and pass counts.
pub fn bench_cmd(objects: &[usize], epochs: usize, warmup: usize, cfg: &Config, seed: u64, out: &Path) -> Result<Vec<(usize, f64)>> {
    let tcfg = cfg.train_config(Regime::Standard, Some(seed));
    fs::create_dir_all(out)?;
    let mut ratios = Vec::new();
    let mut summary = Vec::new();
    for &n in objects {
        let synth = SynthConfig { seed, ..cfg.synth.clone().with_objects(n, n) };
        let set = gen_dataset(&synth, 0, cfg.train_scenes.unwrap_or(8))?;
        let report = benchmark_pass_ratio(&set, &tcfg, epochs, warmup)?;
        let mut csv = String::from("regime,epoch,seconds,loss\n");
        for run in [&report.standard, &report.panoptic] {
            for e in 0..run.epoch_seconds.len() {
                csv.push_str(&format!("{},{e},{:.6},{:.6}\n", run.regime.name(), run.epoch_seconds[e], run.loss_trace[e]));
            }
        }
        fs::write(out.join(format!("bench_n{n}.csv")), csv)?;
        summary.push(serde_json::json!({
            "objects": n,
            "ratio": report.ratio,
            "mean_objects": report.mean_objects,
            "standard_passes_per_epoch": report.standard.forward_passes.first(),
            "panoptic_passes_per_epoch": report.panoptic.forward_passes.first(),
        }));
        ratios.push((n, report.ratio));
    }
    write_json(&out.join("bench.json"), &summary)?;
    Ok(ratios)
}
