//! Shared fixtures for the criterion benches.

use clickforge::synth::{gen_dataset, SynthConfig};
use clickforge::ClickedScene;

/// `count` 64x64 synthetic scenes with exactly `objects` objects each (before occlusion).
pub fn scenes(objects: usize, count: usize) -> Vec<ClickedScene> {
    let cfg = SynthConfig { seed: 11, ..SynthConfig::default().with_objects(objects, objects) };
    gen_dataset(&cfg, 0, count).expect("synthetic config is valid")
}
