use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::raster::{Image, InstanceLabelMap, Mask};

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceAnnotation {
    pub instance_id: u32,
    pub class_id: u32,
    pub mask: Mask,
    /// Stem location `(row, col)`; may lie outside the mask.
    pub keypoint: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub image: Image,
    pub annotations: Vec<InstanceAnnotation>,
}

impl Scene {
    /// Builds a scene and checks every annotation against the image.
    pub fn new(id: impl Into<String>, image: Image, annotations: Vec<InstanceAnnotation>) -> Result<Self> {
        let scene = Scene { id: id.into(), image, annotations };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image.channels() != 3 {
            return Err(Error::validation(format!(
                "scene `{}`: image must have 3 channels, has {}",
                self.id,
                self.image.channels()
            )));
        }
        let mut seen = HashSet::new();
        for a in &self.annotations {
            if a.instance_id == 0 {
                return Err(Error::validation(format!(
                    "scene `{}`: instance_id 0 is reserved for background",
                    self.id
                )));
            }
            if !seen.insert(a.instance_id) {
                return Err(Error::validation(format!(
                    "scene `{}`: duplicate instance_id {}",
                    self.id, a.instance_id
                )));
            }
            if !a.mask.same_size(&self.image) || a.mask.channels() != 1 {
                return Err(Error::validation(format!(
                    "scene `{}`: mask of instance {} is {}x{}, image is {}x{}",
                    self.id,
                    a.instance_id,
                    a.mask.height(),
                    a.mask.width(),
                    self.image.height(),
                    self.image.width()
                )));
            }
            if a.mask.is_empty() {
                return Err(Error::validation(format!(
                    "scene `{}`: mask of instance {} is empty",
                    self.id, a.instance_id
                )));
            }
            if let Some((r, c)) = a.keypoint {
                if r >= self.image.height() || c >= self.image.width() {
                    return Err(Error::validation(format!(
                        "scene `{}`: keypoint ({r},{c}) of instance {} outside image",
                        self.id, a.instance_id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn annotation(&self, instance_id: u32) -> Option<&InstanceAnnotation> {
        self.annotations.iter().find(|a| a.instance_id == instance_id)
    }

    /// Flattens the annotations into one label map. Annotations are painted in
    /// order, so a later instance covers an earlier one wherever they overlap.
    pub fn instance_map(&self) -> InstanceLabelMap {
        let mut map = InstanceLabelMap::zeros(self.height(), self.width());
        for a in &self.annotations {
            for (r, c) in a.mask.foreground() {
                map.set(r, c, a.instance_id);
            }
        }
        map
    }

    /// Per-pixel semantic class (0 = background), painted in annotation order.
    pub fn class_map(&self) -> crate::raster::LabelRaster {
        let mut labels = crate::raster::Raster::filled(self.height(), self.width(), 1, 0u32);
        for a in &self.annotations {
            for (r, c) in a.mask.foreground() {
                labels.set(r, c, 0, a.class_id);
            }
        }
        labels
    }
}

/// A scene together with one click per annotated object.
#[derive(Debug, Clone, PartialEq)]
pub struct ClickedScene {
    pub scene: Scene,
    pub clicks: Vec<crate::click::Click>,
}

impl ClickedScene {
    /// Every annotation must have exactly one click with its instance id.
    pub fn validate(&self) -> Result<()> {
        for a in &self.scene.annotations {
            let n = self.clicks.iter().filter(|c| c.instance_id == a.instance_id).count();
            if n != 1 {
                return Err(Error::validation(format!(
                    "scene `{}`: object {} has {n} clicks, expected 1",
                    self.scene.id, a.instance_id
                )));
            }
        }
        for c in &self.clicks {
            if c.row >= self.scene.height() || c.col >= self.scene.width() {
                return Err(Error::validation(format!(
                    "scene `{}`: click ({},{}) outside image",
                    self.scene.id, c.row, c.col
                )));
            }
        }
        Ok(())
    }

    pub fn click_for(&self, instance_id: u32) -> Option<&crate::click::Click> {
        self.clicks.iter().find(|c| c.instance_id == instance_id)
    }
}
