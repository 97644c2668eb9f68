//! One-click instance pseudo-labelling.
//!
//! Two ways of turning one click per object into instance masks are
//! implemented on the same toy encoder-decoder:
//!
//! * the N-pass baseline, which segments each clicked object separately from
//!   RGB + a Gaussian map of its click (optionally + a map of all clicks), and
//! * the single-pass panoptic variant, which predicts a semantic map and
//!   per-pixel offsets once and groups pixels around the clicks
//!   ([`fusion::fuse`]).
//!
//! Around them sit the click encoders, losses, metrics, a synthetic scene
//! generator with training harness, the pseudo-label export pipeline and the
//! session logic behind the annotation service.

pub mod click;
pub mod error;
pub mod fusion;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod pipeline;
pub mod predict;
pub mod raster;
pub mod scene;
pub mod service;
pub mod synth;
pub mod train;

pub use click::{Click, EncodingConfig, Polarity};
pub use error::{Error, Result};
pub use fusion::{CenterSet, FusionConfig, PanopticPrediction};
pub use net::{NetConfig, Parameters};
pub use raster::{Image, InstanceLabelMap, LabelRaster, Mask, Raster};
pub use scene::{ClickedScene, InstanceAnnotation, Scene};
