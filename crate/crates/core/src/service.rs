//! Session logic behind the annotation service: a predictor fixed at
//! startup, per-session click lists and cached predictions, and export
//! through the pseudo-label layout. Transport lives in the binary.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::click::{Click, EncodingConfig};
use crate::error::{Error, Result};
use crate::fusion::{fuse, CenterSet, FusionConfig, PanopticPrediction};
use crate::io::Rle;
use crate::net::{checkpoint, Parameters};
use crate::pipeline::{export_dataset, ExportManifest, PseudoLabel, PseudoLabelSet, SplitManifest};
use crate::predict::{predict_panoptic, predict_standard, resolve_overlaps, CenterMode, ClickMode};
use crate::raster::{Image, InstanceLabelMap, Raster};

pub const DEFAULT_EXG_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictorConfig {
    Classical { threshold: f64 },
    ToyModel { checkpoint: PathBuf },
}

impl Default for PredictorConfig {
    fn default() -> Self {
        PredictorConfig::Classical { threshold: DEFAULT_EXG_THRESHOLD }
    }
}

impl PredictorConfig {
    /// Parses `classical` or `toy:<checkpoint>`.
    pub fn parse(spec: &str) -> Result<Self> {
        match spec.split_once(':') {
            None if spec == "classical" => Ok(PredictorConfig::default()),
            Some(("toy", path)) if !path.is_empty() => Ok(PredictorConfig::ToyModel { checkpoint: path.into() }),
            _ => Err(Error::config(format!("unknown predictor `{spec}`; expected classical or toy:<checkpoint>"))),
        }
    }
}

/// Excess-green index `2g − r − b` on chromatic coordinates; 0 for black.
pub fn excess_green(rgb: [u8; 3]) -> f64 {
    let [r, g, b] = rgb.map(f64::from);
    let sum = r + g + b;
    if sum == 0.0 {
        return 0.0;
    }
    (2.0 * g - r - b) / sum
}

/// Foreground where ExG exceeds `threshold`; zero offsets, no heatmap.
pub fn classical_predict(image: &Image, threshold: f64) -> Result<PanopticPrediction> {
    if image.channels() != 3 {
        return Err(Error::validation("classical predictor needs an RGB image"));
    }
    let (h, w) = (image.height(), image.width());
    let semantic = image
        .values()
        .chunks_exact(3)
        .flat_map(|px| if excess_green([px[0], px[1], px[2]]) > threshold { [0.0, 1.0] } else { [1.0, 0.0] })
        .collect();
    Ok(PanopticPrediction {
        semantic: Raster::new(h, w, 2, semantic)?,
        offsets: Raster::zeros(h, w, 2),
        center_heatmap: None,
    })
}

pub enum Predictor {
    Classical { threshold: f64 },
    Toy { params: Parameters, mode: ClickMode },
}

impl Predictor {
    pub fn load(cfg: &PredictorConfig) -> Result<Self> {
        match cfg {
            PredictorConfig::Classical { threshold } => Ok(Predictor::Classical { threshold: *threshold }),
            PredictorConfig::ToyModel { checkpoint: path } => Self::from_params(checkpoint::load(path)?),
        }
    }

    pub fn from_params(params: Parameters) -> Result<Self> {
        let c = params.config();
        let mode = if c.offset_head {
            ClickMode::Panoptic
        } else if c.in_channels == 5 {
            ClickMode::Negative
        } else {
            ClickMode::Standard
        };
        mode.check_model(&params)?;
        Ok(Predictor::Toy { params, mode })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Predictor::Classical { .. } => "classical",
            Predictor::Toy { .. } => "toy_model",
        }
    }

    /// Provenance tag written into exports.
    pub fn checkpoint_id(&self) -> String {
        match self {
            Predictor::Classical { threshold } => format!("classical-exg-{threshold}"),
            Predictor::Toy { params, .. } => params.fingerprint(),
        }
    }

    /// One prediction with the positive clicks as centers and no fallback,
    /// so zero clicks give an all-zero map.
    pub fn predict(&self, image: &Image, clicks: &[Click]) -> Result<InstanceLabelMap> {
        let fusion = FusionConfig { empty_center_fallback: None, ..FusionConfig::default() };
        let enc = EncodingConfig::default();
        for c in clicks {
            if c.row >= image.height() || c.col >= image.width() {
                return Err(Error::validation(format!("click ({},{}) outside image", c.row, c.col)));
            }
        }
        match self {
            Predictor::Classical { threshold } => {
                let pred = classical_predict(image, *threshold)?;
                fuse(&pred, Some(&CenterSet::from_clicks(clicks)), &fusion)
            }
            Predictor::Toy { params, mode: ClickMode::Panoptic } => {
                Ok(predict_panoptic(params, image, clicks, CenterMode::Clicks, &enc, &fusion)?.0)
            }
            Predictor::Toy { params, mode } => {
                let positives: Vec<Click> = clicks.iter().filter(|c| c.polarity == crate::click::Polarity::Positive).copied().collect();
                let preds = predict_standard(params, image, &positives, *mode == ClickMode::Negative, &enc)?;
                Ok(resolve_overlaps(&preds, image.height(), image.width()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceJson {
    pub instance_id: u32,
    pub rle: Rle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionJson {
    pub instances: Vec<InstanceJson>,
    pub height: usize,
    pub width: usize,
}

impl PredictionJson {
    pub fn from_map(map: &InstanceLabelMap) -> Self {
        PredictionJson {
            instances: map
                .instance_ids()
                .into_iter()
                .map(|id| InstanceJson { instance_id: id, rle: Rle::encode(&map.mask_of(id)) })
                .collect(),
            height: map.height(),
            width: map.width(),
        }
    }

    pub fn to_map(&self) -> Result<InstanceLabelMap> {
        let mut map = InstanceLabelMap::zeros(self.height, self.width);
        for inst in &self.instances {
            for (r, c) in inst.rle.decode(self.height, self.width)?.foreground() {
                if map.get(r, c) != 0 {
                    return Err(Error::validation(format!("instances overlap at ({r},{c})")));
                }
                map.set(r, c, inst.instance_id);
            }
        }
        Ok(map)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionState {
    pub session_id: String,
    pub height: usize,
    pub width: usize,
    pub predictor: String,
    pub clicks: Vec<Click>,
    pub prediction: Option<PredictionJson>,
}

pub struct Session {
    pub id: String,
    pub image: Image,
    pub clicks: Vec<Click>,
    /// Always derived from `clicks` when present.
    pub prediction: Option<InstanceLabelMap>,
}

impl Session {
    pub fn state(&self, predictor: &str) -> SessionState {
        SessionState {
            session_id: self.id.clone(),
            height: self.image.height(),
            width: self.image.width(),
            predictor: predictor.into(),
            clicks: self.clicks.clone(),
            prediction: self.prediction.as_ref().map(PredictionJson::from_map),
        }
    }
}

/// Runs the predictor unless the cached map already matches the clicks.
pub fn predict_session(session: &mut Session, predictor: &Predictor) -> Result<InstanceLabelMap> {
    if let Some(map) = &session.prediction {
        return Ok(map.clone());
    }
    let map = predictor.predict(&session.image, &session.clicks)?;
    session.prediction = Some(map.clone());
    Ok(map)
}

/// Sessions keyed by opaque id; each session has its own lock so work on
/// different sessions runs in parallel.
pub struct SessionStore {
    predictor: Arc<Predictor>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    export_root: PathBuf,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl SessionStore {
    pub fn new(predictor: Predictor, export_root: impl Into<PathBuf>) -> Self {
        SessionStore { predictor: Arc::new(predictor), sessions: RwLock::default(), export_root: export_root.into() }
    }

    pub fn predictor(&self) -> &Predictor {
        &self.predictor
    }

    pub fn export_root(&self) -> &Path {
        &self.export_root
    }

    pub fn create(&self, image: Image) -> Result<String> {
        if image.channels() != 3 || image.pixels() == 0 {
            return Err(Error::validation("session image must be a non-empty RGB image"));
        }
        let mut sessions = self.sessions.write().unwrap_or_else(|e| e.into_inner());
        let id = loop {
            let id = format!("{:032x}", rand::random::<u128>());
            if !sessions.contains_key(&id) {
                break id;
            }
        };
        let session = Session { id: id.clone(), image, clicks: Vec::new(), prediction: None };
        sessions.insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("session `{id}`")))
    }

    /// Replaces the click list and returns the fused map for it.
    pub fn set_clicks(&self, id: &str, clicks: Vec<Click>) -> Result<InstanceLabelMap> {
        let handle = self.session(id)?;
        let mut s = lock(&handle);
        for c in &clicks {
            if c.row >= s.image.height() || c.col >= s.image.width() {
                return Err(Error::validation(format!("click ({},{}) outside image", c.row, c.col)));
            }
        }
        if s.clicks != clicks {
            s.clicks = clicks;
            s.prediction = None;
        }
        predict_session(&mut s, &self.predictor)
    }

    pub fn state(&self, id: &str) -> Result<SessionState> {
        let handle = self.session(id)?;
        let s = lock(&handle);
        Ok(s.state(self.predictor.kind()))
    }

    /// Writes the session's image and current labels under
    /// `<export_root>/<session id>/` in the dataset layout.
    pub fn export(&self, id: &str) -> Result<(PathBuf, ExportManifest)> {
        let handle = self.session(id)?;
        let mut s = lock(&handle);
        let map = predict_session(&mut s, &self.predictor)?;
        let classes = map.instance_ids().into_iter().map(|i| (i, 1)).collect();
        let set = PseudoLabelSet {
            checkpoint: self.predictor.checkpoint_id(),
            click_source: "user".into(),
            labels: vec![PseudoLabel {
                scene_id: s.id.clone(),
                image: s.image.clone(),
                instance_map: map.clone(),
                classes,
                raw_masks: None,
            }],
        };
        let dir = self.export_root.join(&s.id);
        let manifest = SplitManifest::unlabelled_only(vec![s.id.clone()], map.instance_ids().len());
        let written = export_dataset(&manifest, &[], &set, &dir)?;
        Ok((dir, written))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::read_dataset;

    #[test]
    fn exg_examples() {
        assert_eq!(excess_green([0, 255, 0]), 2.0);
        assert_eq!(excess_green([77, 77, 77]), 0.0);
        assert_eq!(excess_green([0, 0, 0]), 0.0);
        let img = Raster::new(1, 3, 3, vec![0, 255, 0, 77, 77, 77, 0, 0, 0]).unwrap();
        let pred = classical_predict(&img, DEFAULT_EXG_THRESHOLD).unwrap();
        assert_eq!(pred.semantic.argmax().values(), &[1, 0, 0]);
        assert!(pred.offsets.values().iter().all(|&v| v == 0.0));
        assert!(pred.center_heatmap.is_none());
    }

    #[test]
    fn predictor_spec_parsing() {
        assert_eq!(PredictorConfig::parse("classical").unwrap(), PredictorConfig::default());
        assert_eq!(
            PredictorConfig::parse("toy:m.ckpt").unwrap(),
            PredictorConfig::ToyModel { checkpoint: "m.ckpt".into() }
        );
        assert!(PredictorConfig::parse("toy:").is_err());
        assert!(PredictorConfig::parse("deeplab").is_err());
    }

    /// Two green squares on grey.
    fn fixture() -> Image {
        Raster::from_fn(16, 16, 3, |r, c, ch| {
            let green = (2..6).contains(&r) && ((2..6).contains(&c) || (10..14).contains(&c));
            match (green, ch) {
                (true, 1) => 200,
                (true, _) => 40,
                (false, _) => 120,
            }
        })
    }

    #[test]
    fn session_lifecycle() {
        let dir = tempfile::tempdir().unwrap();
        let store = SessionStore::new(Predictor::Classical { threshold: 0.1 }, dir.path());
        let id = store.create(fixture()).unwrap();
        let empty = store.set_clicks(&id, vec![]).unwrap();
        assert!(empty.ids().iter().all(|&i| i == 0));

        let clicks = vec![Click::positive(3, 3, 1), Click::positive(3, 12, 2)];
        let map = store.set_clicks(&id, clicks.clone()).unwrap();
        assert_eq!(map.instance_ids(), vec![1, 2]);
        assert_eq!(map.get(3, 3), 1);
        assert_eq!(map.get(3, 12), 2);
        assert_eq!(store.set_clicks(&id, clicks.clone()).unwrap(), map);

        let state = store.state(&id).unwrap();
        assert_eq!(state.clicks, clicks);
        assert_eq!(state.prediction.unwrap().to_map().unwrap(), map);

        let (out, manifest) = store.export(&id).unwrap();
        assert_eq!(manifest.scenes.len(), 1);
        let back = read_dataset(&out).unwrap();
        assert_eq!(back[0].scene.instance_map(), map);
        assert_eq!(back[0].checkpoint.as_deref(), Some("classical-exg-0.1"));
    }

    #[test]
    fn unknown_session_and_bad_clicks() {
        let store = SessionStore::new(Predictor::Classical { threshold: 0.1 }, "unused");
        assert!(matches!(store.state("nope"), Err(Error::NotFound(_))));
        let id = store.create(fixture()).unwrap();
        assert!(matches!(store.set_clicks(&id, vec![Click::positive(16, 0, 1)]), Err(Error::Validation(_))));
    }

    #[test]
    fn sessions_are_isolated() {
        let store = SessionStore::new(Predictor::Classical { threshold: 0.1 }, "unused");
        let a = store.create(fixture()).unwrap();
        let b = store.create(fixture()).unwrap();
        assert_ne!(a, b);
        store.set_clicks(&a, vec![Click::positive(3, 3, 1)]).unwrap();
        store.set_clicks(&b, vec![Click::positive(3, 12, 7)]).unwrap();
        assert_eq!(store.state(&a).unwrap().clicks, vec![Click::positive(3, 3, 1)]);
        assert_eq!(store.state(&b).unwrap().prediction.unwrap().instances[0].instance_id, 7);
    }
}
