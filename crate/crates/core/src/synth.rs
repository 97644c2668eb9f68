//! Synthetic plant scenes: textured soil with elliptical crop and weed
//! instances. Later objects occlude earlier ones, so masks never overlap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::click::derive_click;
use crate::error::{Error, Result};
use crate::raster::{Image, Raster};
use crate::scene::{ClickedScene, InstanceAnnotation, Scene};

pub const CROP: u32 = 1;
pub const WEED: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Semi-axis range in pixels.
    pub min_radius: f64,
    pub max_radius: f64,
    pub weed_fraction: f64,
    /// Probability that an object carries a stem keypoint.
    pub keypoint_fraction: f64,
    /// Std of per-pixel colour noise (0..255 scale).
    pub noise: f64,
    /// Placement retries aim for center distance ≥ `separation · (R₁ + R₂)`.
    pub separation: f64,
    /// Objects whose visible area falls below this are dropped.
    pub min_visible_area: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            height: 64,
            width: 64,
            min_objects: 4,
            max_objects: 8,
            min_radius: 4.0,
            max_radius: 8.0,
            weed_fraction: 0.5,
            keypoint_fraction: 0.9,
            noise: 10.0,
            separation: 0.9,
            min_visible_area: 8,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn with_objects(mut self, min: usize, max: usize) -> Self {
        self.min_objects = min;
        self.max_objects = max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_objects > self.max_objects {
            return Err(Error::config("min_objects exceeds max_objects"));
        }
        if !(self.min_radius > 0.0 && self.min_radius <= self.max_radius) {
            return Err(Error::config("radius range must satisfy 0 < min ≤ max"));
        }
        if 2.0 * self.max_radius + 2.0 > self.height.min(self.width) as f64 {
            return Err(Error::config("objects do not fit in the frame"));
        }
        Ok(())
    }
}

struct Ellipse {
    row: f64,
    col: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    /// Normalised radius; ≤ 1 inside.
    fn radius(&self, r: f64, c: f64) -> f64 {
        let (dr, dc) = (r - self.row, c - self.col);
        let u = dr * self.cos + dc * self.sin;
        let v = -dr * self.sin + dc * self.cos;
        ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt()
    }
}

fn scene_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Scene `index` of the corpus defined by `cfg`. Deterministic in
/// `(cfg.seed, index)`; every object gets a click from [`derive_click`].
pub fn gen_scene(cfg: &SynthConfig, index: u64) -> Result<ClickedScene> {
    cfg.validate()?;
    let mut rng = scene_rng(cfg.seed, index);
    let (h, w) = (cfg.height, cfg.width);
    let noise = Normal::new(0.0, cfg.noise.max(1e-9)).expect("positive std");

    // Soil: smooth brown gradient plus per-pixel noise.
    let tint = [rng.random_range(95.0..125.0), rng.random_range(70.0..95.0), rng.random_range(45.0..70.0)];
    let (fr, fc) = (rng.random_range(0.05..0.2), rng.random_range(0.05..0.2));
    let mut rgb: Vec<[f64; 3]> = (0..h * w)
        .map(|i| {
            let (r, c) = ((i / w) as f64, (i % w) as f64);
            let shade = 1.0 + 0.08 * (fr * r).sin() * (fc * c).cos();
            [tint[0] * shade, tint[1] * shade, tint[2] * shade]
        })
        .collect();

    let n = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let mut ellipses: Vec<(Ellipse, u32, bool)> = Vec::with_capacity(n);
    let mut owner = vec![0usize; h * w];
    for k in 0..n {
        let a = rng.random_range(cfg.min_radius..=cfg.max_radius);
        let b = rng.random_range(cfg.min_radius..=cfg.max_radius);
        let reach = a.max(b);
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let (mut row, mut col) = (0.0, 0.0);
        for _ in 0..60 {
            row = rng.random_range(reach..h as f64 - 1.0 - reach);
            col = rng.random_range(reach..w as f64 - 1.0 - reach);
            let clear = ellipses.iter().all(|(e, _, _)| {
                let d = ((e.row - row).powi(2) + (e.col - col).powi(2)).sqrt();
                d >= cfg.separation * (reach + e.a.max(e.b))
            });
            if clear {
                break;
            }
        }
        let class = if rng.random_bool(cfg.weed_fraction.clamp(0.0, 1.0)) { WEED } else { CROP };
        let has_keypoint = rng.random_bool(cfg.keypoint_fraction.clamp(0.0, 1.0));
        let base: [f64; 3] = if class == CROP {
            [rng.random_range(35.0..70.0), rng.random_range(140.0..185.0), rng.random_range(35.0..70.0)]
        } else {
            [rng.random_range(150.0..190.0), rng.random_range(175.0..215.0), rng.random_range(20.0..50.0)]
        };
        let e = Ellipse { row, col, a, b, cos: theta.cos(), sin: theta.sin() };
        for (i, px) in rgb.iter_mut().enumerate() {
            let rad = e.radius((i / w) as f64, (i % w) as f64);
            if rad <= 1.0 {
                // Leaves darken toward their rim.
                let shade = 1.0 - 0.25 * rad;
                *px = [base[0] * shade, base[1] * shade, base[2] * shade];
                owner[i] = k + 1;
            }
        }
        ellipses.push((e, class, has_keypoint));
    }

    let image: Image = Raster::new(
        h,
        w,
        3,
        rgb.iter().flat_map(|px| px.map(|v| (v + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)).collect(),
    )?;

    let mut annotations = Vec::new();
    for (k, (e, class, has_keypoint)) in ellipses.iter().enumerate() {
        let mask = Raster::new(h, w, 1, owner.iter().map(|&o| o == k + 1).collect())?;
        if mask.count() < cfg.min_visible_area.max(1) {
            continue;
        }
        let keypoint = has_keypoint.then(|| (e.row.round() as usize, e.col.round() as usize));
        annotations.push(InstanceAnnotation { instance_id: k as u32 + 1, class_id: *class, mask, keypoint });
    }
    let scene = Scene::new(format!("synth-{}-{index:05}", cfg.seed), image, annotations)?;
    let clicks = scene
        .annotations
        .iter()
        .map(|a| derive_click(a, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    Ok(ClickedScene { scene, clicks })
}

/// Scenes `start..start + count`.
pub fn gen_dataset(cfg: &SynthConfig, start: u64, count: usize) -> Result<Vec<ClickedScene>> {
    (start..start + count as u64).map(|i| gen_scene(cfg, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed_and_index() {
        let cfg = SynthConfig::default();
        assert_eq!(gen_scene(&cfg, 3).unwrap(), gen_scene(&cfg, 3).unwrap());
        assert_ne!(gen_scene(&cfg, 3).unwrap().scene.image, gen_scene(&cfg, 4).unwrap().scene.image);
    }

    #[test]
    fn single_object_config() {
        let cfg = SynthConfig::default().with_objects(1, 1);
        for i in 0..20 {
            let s = gen_scene(&cfg, i).unwrap();
            assert_eq!(s.scene.annotations.len(), 1);
            assert_eq!(s.clicks.len(), 1);
        }
    }

    #[test]
    fn masks_are_disjoint_and_clicks_inside() {
        let cfg = SynthConfig { seed: 9, ..Default::default() };
        for i in 0..50 {
            let s = gen_scene(&cfg, i).unwrap();
            s.validate().unwrap();
            let mut cover = vec![0u32; 64 * 64];
            for a in &s.scene.annotations {
                for (j, &m) in a.mask.values().iter().enumerate() {
                    if m {
                        assert_eq!(cover[j], 0, "overlap in scene {i}");
                        cover[j] = a.instance_id;
                    }
                }
                let c = s.click_for(a.instance_id).unwrap();
                assert!(a.mask.at(c.row, c.col));
            }
        }
    }

    #[test]
    fn rejects_impossible_configs() {
        assert!(SynthConfig { min_objects: 5, max_objects: 2, ..Default::default() }.validate().is_err());
        assert!(SynthConfig { max_radius: 40.0, ..Default::default() }.validate().is_err());
    }
}
