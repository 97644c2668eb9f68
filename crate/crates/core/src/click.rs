//! Click handling: Gaussian click maps (the extra input channels), click
//! derivation from masks, and annotator jitter.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Mask, Raster};
use crate::scene::InstanceAnnotation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Polarity {
    #[serde(rename = "pos")]
    Positive,
    #[serde(rename = "neg")]
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Click {
    pub row: usize,
    pub col: usize,
    pub instance_id: u32,
    pub polarity: Polarity,
}

impl Click {
    pub fn positive(row: usize, col: usize, instance_id: u32) -> Self {
        Click { row, col, instance_id, polarity: Polarity::Positive }
    }

    pub fn with_polarity(self, polarity: Polarity) -> Self {
        Click { polarity, ..self }
    }

    fn same_location(&self, other: &Click) -> bool {
        self.row == other.row && self.col == other.col && self.instance_id == other.instance_id
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineRule {
    #[default]
    Max,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncodingConfig {
    pub sigma: f64,
    pub jitter_radius: usize,
    pub combine_rule: CombineRule,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        EncodingConfig { sigma: 8.0, jitter_radius: 10, combine_rule: CombineRule::Max }
    }
}

impl EncodingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config(format!("sigma must be positive, got {}", self.sigma)));
        }
        Ok(())
    }
}

fn check_bounds(height: usize, width: usize, clicks: &[Click]) -> Result<()> {
    for c in clicks {
        if c.row >= height || c.col >= width {
            return Err(Error::validation(format!(
                "click ({},{}) of instance {} outside {height}x{width} image",
                c.row, c.col, c.instance_id
            )));
        }
    }
    Ok(())
}

/// Unit-peak Gaussian `exp(-d²/2σ²)` around each click, combined per pixel.
pub fn gaussian_click_map(height: usize, width: usize, clicks: &[Click], cfg: &EncodingConfig) -> Result<Raster<f64>> {
    cfg.validate()?;
    check_bounds(height, width, clicks)?;
    let mut map = Raster::zeros(height, width, 1);
    let inv = 1.0 / (2.0 * cfg.sigma * cfg.sigma);
    // Beyond ~9σ every term underflows to below 1e-17; skip it.
    let reach = (9.0 * cfg.sigma).ceil() as i64;
    for click in clicks {
        let (cr, cc) = (click.row as i64, click.col as i64);
        let r0 = (cr - reach).max(0) as usize;
        let r1 = ((cr + reach) as usize).min(height - 1);
        let c0 = (cc - reach).max(0) as usize;
        let c1 = ((cc + reach) as usize).min(width - 1);
        for r in r0..=r1 {
            let dr = r as f64 - click.row as f64;
            for c in c0..=c1 {
                let dc = c as f64 - click.col as f64;
                let g = (-(dr * dr + dc * dc) * inv).exp();
                let i = r * width + c;
                let v = &mut map.values_mut()[i];
                *v = match cfg.combine_rule {
                    CombineRule::Max => v.max(g),
                    CombineRule::Sum => *v + g,
                };
            }
        }
    }
    Ok(map)
}

/// Map of all N clicks (the positive and its N−1 negatives); the fifth input
/// channel of the negative-click variant.
pub fn full_click_map(positive: &Click, all_clicks: &[Click], height: usize, width: usize, cfg: &EncodingConfig) -> Result<Raster<f64>> {
    if !all_clicks.iter().any(|c| c.same_location(positive)) {
        return Err(Error::validation(format!(
            "positive click of instance {} is not among the {} clicks",
            positive.instance_id,
            all_clicks.len()
        )));
    }
    gaussian_click_map(height, width, all_clicks, cfg)
}

/// Clicks of a scene relabelled relative to `target`: the target click is
/// positive, every other click negative.
pub fn relative_clicks(target: u32, clicks: &[Click]) -> Vec<Click> {
    clicks
        .iter()
        .map(|c| {
            let p = if c.instance_id == target { Polarity::Positive } else { Polarity::Negative };
            c.with_polarity(p)
        })
        .collect()
}

/// Uniform integer displacement in `[-r, r]` per axis, re-drawn until it lands
/// inside `mask`.
pub fn jitter_click<R: Rng + ?Sized>(click: &Click, mask: &Mask, cfg: &EncodingConfig, rng: &mut R) -> Result<Click> {
    if click.row >= mask.height() || click.col >= mask.width() || !mask.at(click.row, click.col) {
        return Err(Error::validation(format!(
            "click ({},{}) of instance {} is not inside its mask",
            click.row, click.col, click.instance_id
        )));
    }
    let r = cfg.jitter_radius as i64;
    if r == 0 {
        return Ok(*click);
    }
    loop {
        let row = click.row as i64 + rng.random_range(-r..=r);
        let col = click.col as i64 + rng.random_range(-r..=r);
        if mask.contains(row, col) && mask.at(row as usize, col as usize) {
            return Ok(Click { row: row as usize, col: col as usize, ..*click });
        }
    }
}

/// 3×3 erosion; out-of-image pixels count as background.
pub fn binary_erode(mask: &Mask) -> Mask {
    let (h, w) = (mask.height(), mask.width());
    Raster::from_fn(h, w, 1, |r, c, _| {
        if r == 0 || c == 0 || r + 1 == h || c + 1 == w {
            return false;
        }
        (r - 1..=r + 1).all(|rr| (c - 1..=c + 1).all(|cc| mask.at(rr, cc)))
    })
}

/// Picks a click location for an annotation: its keypoint if that lies in the
/// mask, else the rounded centre of mass if inside, else a random pixel of the
/// last non-empty erosion iterate.
pub fn derive_click<R: Rng + ?Sized>(annotation: &InstanceAnnotation, rng: &mut R) -> Result<Click> {
    let mask = &annotation.mask;
    let id = annotation.instance_id;
    if mask.is_empty() {
        return Err(Error::validation(format!("instance {id} has an empty mask")));
    }
    if let Some((r, c)) = annotation.keypoint {
        if r < mask.height() && c < mask.width() && mask.at(r, c) {
            return Ok(Click::positive(r, c, id));
        }
    }
    let (mut sr, mut sc, mut n) = (0.0, 0.0, 0.0);
    for (r, c) in mask.foreground() {
        sr += r as f64;
        sc += c as f64;
        n += 1.0;
    }
    let (cr, cc) = ((sr / n).round() as usize, (sc / n).round() as usize);
    if mask.at(cr, cc) {
        return Ok(Click::positive(cr, cc, id));
    }
    let core = deepest_erosion(mask);
    let pixels: Vec<_> = core.foreground().collect();
    let (r, c) = pixels[rng.random_range(0..pixels.len())];
    Ok(Click::positive(r, c, id))
}

/// Last non-empty iterate of repeated erosion. `mask` must be non-empty.
pub fn deepest_erosion(mask: &Mask) -> Mask {
    let mut current = mask.clone();
    loop {
        let next = binary_erode(&current);
        if next.is_empty() {
            return current;
        }
        current = next;
    }
}
