//! Semi-supervised data protocol: pick ~10% of objects (whole scenes) for
//! manual labels, pseudo-label the rest from clicks and export the merged set.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::click::{Click, EncodingConfig};
use crate::error::{Error, Result};
use crate::fusion::FusionConfig;
use crate::io::{read_scene, write_annotation, write_rgb_png, AnnotationFile, InstanceRecord, Rle};
use crate::net::Parameters;
use crate::predict::{predict_panoptic, predict_standard, resolve_overlaps, CenterMode, ClickMode};
use crate::raster::{Image, InstanceLabelMap, Mask};
use crate::scene::Scene;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub labelled: Vec<String>,
    pub unlabelled: Vec<String>,
    pub labelled_objects: usize,
    pub unlabelled_objects: usize,
    pub target: f64,
    pub achieved_fraction: f64,
    pub seed: u64,
}

impl SplitManifest {
    /// Everything on the unlabelled side; used for pseudo-label-only exports.
    pub fn unlabelled_only(ids: Vec<String>, objects: usize) -> Self {
        SplitManifest {
            labelled: Vec::new(),
            unlabelled: ids,
            labelled_objects: 0,
            unlabelled_objects: objects,
            target: 0.0,
            achieved_fraction: 0.0,
            seed: 0,
        }
    }
}

/// Visits scenes in a seeded random order and labels them until the labelled
/// side first holds at least `target · total` objects. Both id lists keep the
/// input order.
pub fn split_counts(scenes: &[(String, usize)], target: f64, seed: u64) -> Result<SplitManifest> {
    if scenes.is_empty() {
        return Err(Error::validation("cannot split an empty dataset"));
    }
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::config(format!("split target {target} must lie in (0, 1]")));
    }
    let mut seen = BTreeSet::new();
    if let Some((id, _)) = scenes.iter().find(|(id, _)| !seen.insert(id.as_str())) {
        return Err(Error::validation(format!("duplicate scene id `{id}`")));
    }
    let total: usize = scenes.iter().map(|s| s.1).sum();
    if (total as f64) < 1.0 / target {
        return Err(Error::validation(format!(
            "{total} objects are too few for a {:.0}% split",
            100.0 * target
        )));
    }
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let goal = target * total as f64;
    let mut picked = vec![false; scenes.len()];
    let mut labelled_objects = 0;
    for i in order {
        if labelled_objects as f64 >= goal {
            break;
        }
        picked[i] = true;
        labelled_objects += scenes[i].1;
    }
    let (mut labelled, mut unlabelled) = (Vec::new(), Vec::new());
    for ((id, _), p) in scenes.iter().zip(&picked) {
        if *p { labelled.push(id.clone()) } else { unlabelled.push(id.clone()) }
    }
    Ok(SplitManifest {
        labelled,
        unlabelled,
        labelled_objects,
        unlabelled_objects: total - labelled_objects,
        target,
        achieved_fraction: labelled_objects as f64 / total as f64,
        seed,
    })
}

pub fn split_by_object_fraction(scenes: &[Scene], target: f64, seed: u64) -> Result<SplitManifest> {
    let counts: Vec<(String, usize)> = scenes.iter().map(|s| (s.id.clone(), s.annotations.len())).collect();
    split_counts(&counts, target, seed)
}

/// An unlabelled scene with its clicks.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickedImage {
    pub id: String,
    pub image: Image,
    pub clicks: Vec<Click>,
}

impl From<&crate::scene::ClickedScene> for ClickedImage {
    fn from(s: &crate::scene::ClickedScene) -> Self {
        ClickedImage { id: s.scene.id.clone(), image: s.scene.image.clone(), clicks: s.clicks.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabel {
    pub scene_id: String,
    pub image: Image,
    pub instance_map: InstanceLabelMap,
    /// Class id per instance id present in `instance_map`.
    pub classes: BTreeMap<u32, u32>,
    /// Per-click masks before overlap resolution (N-pass modes, on request).
    pub raw_masks: Option<BTreeMap<u32, Mask>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    /// Fingerprint of the model that produced the labels.
    pub checkpoint: String,
    pub click_source: String,
    pub labels: Vec<PseudoLabel>,
}

impl PseudoLabelSet {
    pub fn validate(&self) -> Result<()> {
        if self.checkpoint.is_empty() || self.click_source.is_empty() {
            return Err(Error::validation("pseudo-label provenance must be non-empty"));
        }
        for l in &self.labels {
            let ids: Vec<u32> = l.instance_map.instance_ids();
            let keys: Vec<u32> = l.classes.keys().copied().collect();
            if ids != keys {
                return Err(Error::validation(format!(
                    "scene `{}`: instances {ids:?} do not match class table {keys:?}",
                    l.scene_id
                )));
            }
            if l.instance_map.height() != l.image.height() || l.instance_map.width() != l.image.width() {
                return Err(Error::validation(format!("scene `{}`: label map and image differ in size", l.scene_id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PseudoLabelOptions {
    pub encoding: EncodingConfig,
    pub fusion: FusionConfig,
    pub click_source: String,
    pub keep_raw_masks: bool,
}

impl Default for PseudoLabelOptions {
    fn default() -> Self {
        PseudoLabelOptions {
            encoding: EncodingConfig::default(),
            fusion: FusionConfig::default(),
            click_source: "clicks".into(),
            keep_raw_masks: false,
        }
    }
}

/// Every label id is the instance id of one of `clicks`.
pub fn check_ids_from_clicks(map: &InstanceLabelMap, clicks: &[Click]) -> Result<()> {
    let allowed: BTreeSet<u32> = clicks.iter().map(|c| c.instance_id).collect();
    match map.instance_ids().into_iter().find(|id| !allowed.contains(id)) {
        Some(id) => Err(Error::validation(format!("label id {id} has no click"))),
        None => Ok(()),
    }
}

fn majority_class(map: &InstanceLabelMap, semantic: &crate::raster::LabelRaster) -> BTreeMap<u32, u32> {
    let mut votes: BTreeMap<u32, BTreeMap<u32, usize>> = BTreeMap::new();
    for (&id, &class) in map.ids().iter().zip(semantic.values()) {
        if id != 0 && class != 0 {
            *votes.entry(id).or_default().entry(class).or_insert(0) += 1;
        }
    }
    map.instance_ids()
        .into_iter()
        .map(|id| {
            // Ties go to the smaller class id.
            let class = votes
                .get(&id)
                .and_then(|v| v.iter().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0))).map(|(c, _)| *c))
                .unwrap_or(1);
            (id, class)
        })
        .collect()
}

/// Pseudo-labels `scenes` with one model. N-pass modes resolve overlaps by
/// foreground probability and tag every object as class 1; panoptic mode
/// takes each instance's majority semantic class. The fusion fallback is
/// disabled, so a scene without clicks yields an empty map.
pub fn generate_pseudo_labels(
    params: &Parameters,
    scenes: &[ClickedImage],
    mode: ClickMode,
    opts: &PseudoLabelOptions,
) -> Result<PseudoLabelSet> {
    mode.check_model(params)?;
    let fusion = FusionConfig { empty_center_fallback: None, ..opts.fusion };
    let mut labels = Vec::with_capacity(scenes.len());
    for s in scenes {
        let (h, w) = (s.image.height(), s.image.width());
        let label = match mode {
            ClickMode::Standard | ClickMode::Negative => {
                let preds = predict_standard(params, &s.image, &s.clicks, mode == ClickMode::Negative, &opts.encoding)?;
                let map = resolve_overlaps(&preds, h, w);
                let classes = map.instance_ids().into_iter().map(|id| (id, 1)).collect();
                let raw_masks = opts.keep_raw_masks.then(|| preds.into_iter().map(|p| (p.instance_id, p.mask)).collect());
                PseudoLabel { scene_id: s.id.clone(), image: s.image.clone(), instance_map: map, classes, raw_masks }
            }
            ClickMode::Panoptic => {
                let (map, pred) = predict_panoptic(params, &s.image, &s.clicks, CenterMode::Clicks, &opts.encoding, &fusion)?;
                let classes = majority_class(&map, &pred.semantic.argmax());
                PseudoLabel { scene_id: s.id.clone(), image: s.image.clone(), instance_map: map, classes, raw_masks: None }
            }
        };
        check_ids_from_clicks(&label.instance_map, &s.clicks)?;
        labels.push(label);
    }
    let set = PseudoLabelSet { checkpoint: params.fingerprint(), click_source: opts.click_source.clone(), labels };
    set.validate()?;
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Manual,
    Pseudo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportEntry {
    pub id: String,
    pub source: Source,
    pub image: String,
    pub annotation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportManifest {
    pub split: SplitManifest,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub click_source: Option<String>,
    pub scenes: Vec<ExportEntry>,
}

fn check_file_id(id: &str) -> Result<()> {
    let bad = id.is_empty() || id == "." || id == ".." || id.contains(['/', '\\', '\0']);
    if bad {
        Err(Error::validation(format!("scene id `{id}` cannot be used as a file name")))
    } else {
        Ok(())
    }
}

fn pseudo_annotation(label: &PseudoLabel, checkpoint: &str) -> AnnotationFile {
    let map = &label.instance_map;
    AnnotationFile {
        id: label.scene_id.clone(),
        height: map.height(),
        width: map.width(),
        instances: label
            .classes
            .iter()
            .map(|(&id, &class)| InstanceRecord {
                instance_id: id,
                class_id: class,
                keypoint: None,
                rle: Rle::encode(&map.mask_of(id)),
            })
            .collect(),
        source: Some("pseudo".into()),
        checkpoint: Some(checkpoint.into()),
    }
}

/// Writes `images/<id>.png`, `annotations/<id>.json` and `manifest.json`.
/// Returns the manifest.
pub fn export_dataset(
    manifest: &SplitManifest,
    manual: &[Scene],
    pseudo: &PseudoLabelSet,
    out_dir: impl AsRef<Path>,
) -> Result<ExportManifest> {
    pseudo.validate()?;
    let labelled: BTreeSet<&str> = manifest.labelled.iter().map(String::as_str).collect();
    let unlabelled: BTreeSet<&str> = manifest.unlabelled.iter().map(String::as_str).collect();
    let mut ids = BTreeSet::new();
    for s in manual {
        check_file_id(&s.id)?;
        if !ids.insert(s.id.as_str()) {
            return Err(Error::validation(format!("scene id `{}` exported twice", s.id)));
        }
        if !labelled.contains(s.id.as_str()) {
            return Err(Error::validation(format!("manual scene `{}` is not on the labelled side of the split", s.id)));
        }
    }
    for l in &pseudo.labels {
        check_file_id(&l.scene_id)?;
        if !ids.insert(l.scene_id.as_str()) {
            return Err(Error::validation(format!("scene id `{}` collides across sources", l.scene_id)));
        }
        if !unlabelled.contains(l.scene_id.as_str()) {
            return Err(Error::validation(format!(
                "pseudo-labelled scene `{}` is not on the unlabelled side of the split",
                l.scene_id
            )));
        }
    }

    let out = out_dir.as_ref();
    fs::create_dir_all(out.join("images"))?;
    fs::create_dir_all(out.join("annotations"))?;
    let paths = |id: &str| (format!("images/{id}.png"), format!("annotations/{id}.json"));
    let mut entries = Vec::with_capacity(ids.len());
    for s in manual {
        let (img, ann) = paths(&s.id);
        write_rgb_png(&s.image, out.join(&img))?;
        let mut file = AnnotationFile::from_scene(s);
        file.source = Some("manual".into());
        write_annotation(&file, out.join(&ann))?;
        entries.push(ExportEntry { id: s.id.clone(), source: Source::Manual, image: img, annotation: ann });
    }
    for l in &pseudo.labels {
        let (img, ann) = paths(&l.scene_id);
        write_rgb_png(&l.image, out.join(&img))?;
        write_annotation(&pseudo_annotation(l, &pseudo.checkpoint), out.join(&ann))?;
        entries.push(ExportEntry { id: l.scene_id.clone(), source: Source::Pseudo, image: img, annotation: ann });
    }
    let has_pseudo = !pseudo.labels.is_empty();
    let export = ExportManifest {
        split: manifest.clone(),
        checkpoint: has_pseudo.then(|| pseudo.checkpoint.clone()),
        click_source: has_pseudo.then(|| pseudo.click_source.clone()),
        scenes: entries,
    };
    let mut text = serde_json::to_string_pretty(&export)?;
    text.push('\n');
    fs::write(out.join("manifest.json"), text)?;
    Ok(export)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportedScene {
    pub scene: Scene,
    pub source: Source,
    pub checkpoint: Option<String>,
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<ExportManifest> {
    let text = fs::read_to_string(dir.as_ref().join("manifest.json"))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| Error::Schema { path: e.path().to_string(), message: e.into_inner().to_string() })
}

/// Re-reads an export, checking each annotation against the manifest.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Vec<ExportedScene>> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let mut out = Vec::with_capacity(manifest.scenes.len());
    for e in &manifest.scenes {
        let ann_path: PathBuf = dir.join(&e.annotation);
        let file = AnnotationFile::parse(&fs::read_to_string(&ann_path)?)?;
        let scene = read_scene(dir.join(&e.image), &ann_path)?;
        if scene.id != e.id {
            return Err(Error::validation(format!("annotation `{}` holds scene `{}`", e.annotation, scene.id)));
        }
        let expected = match e.source {
            Source::Manual => "manual",
            Source::Pseudo => "pseudo",
        };
        if file.source.as_deref() != Some(expected) {
            return Err(Error::validation(format!("scene `{}`: source tag does not match manifest", e.id)));
        }
        if e.source == Source::Pseudo && file.checkpoint.as_deref().is_none_or(str::is_empty) {
            return Err(Error::validation(format!("pseudo scene `{}` has no checkpoint id", e.id)));
        }
        out.push(ExportedScene { scene, source: e.source, checkpoint: file.checkpoint });
    }
    Ok(out)
}
