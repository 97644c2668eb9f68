//! Dense H×W×C grids stored row-major, channel-last.
//!
//! Index of `(row, col, ch)` is `(row * width + col) * channels + ch`. Every
//! image, heatmap, offset field and label map in the crate uses this layout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster<T = f64> {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<T>,
}

/// Binary mask; `true` is foreground.
pub type Mask = Raster<bool>;

/// 8-bit RGB image.
pub type Image = Raster<u8>;

/// Single-channel per-pixel class labels.
pub type LabelRaster = Raster<u32>;

impl<T: Clone> Raster<T> {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::validation(format!(
                "raster dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        let expected = height * width * channels;
        if values.len() != expected {
            return Err(Error::validation(format!(
                "raster {height}x{width}x{channels} needs {expected} values, got {}",
                values.len()
            )));
        }
        Ok(Self { height, width, channels, values })
    }

    /// # Panics
    /// If any dimension is zero.
    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "raster dimensions must be positive");
        Self { height, width, channels, values: vec![value; height * width * channels] }
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "raster dimensions must be positive");
        let mut values = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    values.push(f(r, c, ch));
                }
            }
        }
        Self { height, width, channels, values }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn values(&self) -> &[T] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        debug_assert!(row < self.height && col < self.width && ch < self.channels);
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> T {
        self.values[self.index(row, col, ch)].clone()
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: T) {
        let i = self.index(row, col, ch);
        self.values[i] = value;
    }

    /// All channels of one pixel.
    #[inline]
    pub fn pixel(&self, row: usize, col: usize) -> &[T] {
        let start = (row * self.width + col) * self.channels;
        &self.values[start..start + self.channels]
    }

    pub fn contains(&self, row: i64, col: i64) -> bool {
        row >= 0 && col >= 0 && (row as usize) < self.height && (col as usize) < self.width
    }

    pub fn same_size<U>(&self, other: &Raster<U>) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Raster<U> {
        Raster {
            height: self.height,
            width: self.width,
            channels: self.channels,
            values: self.values.iter().map(f).collect(),
        }
    }

    /// Copy of a single channel.
    pub fn channel(&self, ch: usize) -> Raster<T> {
        assert!(ch < self.channels);
        Raster {
            height: self.height,
            width: self.width,
            channels: 1,
            values: self.values.iter().skip(ch).step_by(self.channels).cloned().collect(),
        }
    }
}

impl Raster<f64> {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    /// Channel-wise concatenation of rasters with identical H×W.
    pub fn stack(parts: &[&Raster<f64>]) -> Result<Raster<f64>> {
        let first = parts.first().ok_or_else(|| Error::validation("nothing to stack"))?;
        if parts.iter().any(|p| !p.same_size(first)) {
            return Err(Error::validation("stacked rasters must share height and width"));
        }
        let channels: usize = parts.iter().map(|p| p.channels).sum();
        let mut values = Vec::with_capacity(first.pixels() * channels);
        for px in 0..first.pixels() {
            for p in parts {
                values.extend_from_slice(&p.values[px * p.channels..(px + 1) * p.channels]);
            }
        }
        Raster::new(first.height, first.width, channels, values)
    }

    /// Per-pixel index of the largest channel; ties go to the lowest channel.
    pub fn argmax(&self) -> LabelRaster {
        let values = self
            .values
            .chunks_exact(self.channels)
            .map(|px| {
                let mut best = 0;
                for (k, v) in px.iter().enumerate().skip(1) {
                    if *v > px[best] {
                        best = k;
                    }
                }
                best as u32
            })
            .collect();
        Raster { height: self.height, width: self.width, channels: 1, values }
    }
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Self::filled(height, width, 1, false)
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|v| **v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.values.iter().any(|v| *v)
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> bool {
        self.values[row * self.width + col]
    }

    /// Foreground coordinates in scan order.
    pub fn foreground(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v)
            .map(move |(i, _)| (i / w, i % w))
    }
}

impl Image {
    /// RGB scaled to [0, 1] as f64.
    pub fn to_unit(&self) -> Raster<f64> {
        self.map(|v| f64::from(*v) / 255.0)
    }
}

/// H×W grid of instance ids; 0 is background/stuff.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceLabelMap {
    height: usize,
    width: usize,
    ids: Vec<u32>,
}

impl InstanceLabelMap {
    pub fn new(height: usize, width: usize, ids: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::validation("instance map dimensions must be positive"));
        }
        if ids.len() != height * width {
            return Err(Error::validation(format!(
                "instance map {height}x{width} needs {} ids, got {}",
                height * width,
                ids.len()
            )));
        }
        Ok(Self { height, width, ids })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0);
        Self { height, width, ids: vec![0; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn ids_mut(&mut self) -> &mut [u32] {
        &mut self.ids
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.ids[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, id: u32) {
        self.ids[row * self.width + col] = id;
    }

    /// Distinct nonzero ids, ascending.
    pub fn instance_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.ids.iter().copied().filter(|&i| i != 0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn mask_of(&self, id: u32) -> Mask {
        Raster {
            height: self.height,
            width: self.width,
            channels: 1,
            values: self.ids.iter().map(|&v| v == id).collect(),
        }
    }

    /// Pixel area per nonzero id.
    pub fn areas(&self) -> std::collections::BTreeMap<u32, usize> {
        let mut out = std::collections::BTreeMap::new();
        for &id in &self.ids {
            if id != 0 {
                *out.entry(id).or_insert(0) += 1;
            }
        }
        out
    }

    pub fn foreground(&self) -> Mask {
        Raster {
            height: self.height,
            width: self.width,
            channels: 1,
            values: self.ids.iter().map(|&v| v != 0).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Raster::new(2, 2, 3, vec![0u8; 11]).is_err());
        assert!(Raster::new(0, 2, 1, Vec::<u8>::new()).is_err());
        assert!(Raster::new(2, 2, 3, vec![0u8; 12]).is_ok());
    }

    #[test]
    fn channel_last_layout() {
        let r = Raster::from_fn(2, 3, 2, |r, c, ch| (r * 100 + c * 10 + ch) as f64);
        assert_eq!(r.get(1, 2, 1), 121.0);
        assert_eq!(r.values()[r.index(1, 2, 1)], 121.0);
        assert_eq!(r.pixel(0, 1), &[10.0, 11.0]);
        assert_eq!(r.channel(1).values(), &[1.0, 11.0, 21.0, 101.0, 111.0, 121.0]);
    }

    #[test]
    fn argmax_ties_pick_lowest_channel() {
        let r = Raster::new(1, 2, 3, vec![1.0, 1.0, 0.0, 0.0, 2.0, 2.0]).unwrap();
        assert_eq!(r.argmax().values(), &[0, 1]);
    }

    #[test]
    fn stack_interleaves_channels() {
        let a = Raster::new(1, 2, 1, vec![1.0, 2.0]).unwrap();
        let b = Raster::new(1, 2, 2, vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = Raster::stack(&[&a, &b]).unwrap();
        assert_eq!(s.channels(), 3);
        assert_eq!(s.values(), &[1.0, 3.0, 4.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn instance_map_helpers() {
        let m = InstanceLabelMap::new(2, 2, vec![0, 3, 3, 7]).unwrap();
        assert_eq!(m.instance_ids(), vec![3, 7]);
        assert_eq!(m.mask_of(3).count(), 2);
        assert_eq!(m.areas()[&7], 1);
        assert_eq!(m.foreground().count(), 3);
    }
}
