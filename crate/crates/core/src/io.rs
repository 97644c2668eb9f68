//! On-disk carriers: PNG images, 16-bit instance maps, and the per-scene
//! annotation JSON with uncompressed row-major RLE masks.

use std::fs;
use std::io::{BufReader, Cursor};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Image, InstanceLabelMap, Mask, Raster};
use crate::scene::{InstanceAnnotation, Scene};

pub const RLE_ORDER: &str = "row-major";

/// Uncompressed run-length encoding: alternating runs starting with a run of
/// `start_value`. Runs cover the image in row-major order and sum to H·W.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub counts: Vec<u64>,
    pub order: String,
    pub start_value: u8,
}

impl Rle {
    pub fn encode(mask: &Mask) -> Rle {
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u64;
        for &v in mask.values() {
            if v != current {
                counts.push(run);
                run = 0;
                current = v;
            }
            run += 1;
        }
        counts.push(run);
        Rle { counts, order: RLE_ORDER.to_string(), start_value: 0 }
    }

    pub fn decode(&self, height: usize, width: usize) -> Result<Mask> {
        if self.order != RLE_ORDER {
            return Err(schema("rle.order", format!("expected \"{RLE_ORDER}\", got {:?}", self.order)));
        }
        if self.start_value > 1 {
            return Err(schema("rle.start_value", format!("must be 0 or 1, got {}", self.start_value)));
        }
        let total: u64 = self.counts.iter().sum();
        let n = (height * width) as u64;
        if total != n {
            return Err(schema("rle.counts", format!("runs sum to {total}, expected {n}")));
        }
        let mut values = Vec::with_capacity(n as usize);
        let mut v = self.start_value == 1;
        for &run in &self.counts {
            values.extend(std::iter::repeat_n(v, run as usize));
            v = !v;
        }
        Raster::new(height, width, 1, values)
    }
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema { path: path.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance_id: u32,
    pub class_id: u32,
    pub keypoint: Option<[usize; 2]>,
    pub rle: Rle,
}

/// One annotation file per scene. `source` and `checkpoint` are only written
/// by dataset export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub id: String,
    pub height: usize,
    pub width: usize,
    pub instances: Vec<InstanceRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

impl AnnotationFile {
    pub fn from_scene(scene: &Scene) -> Self {
        AnnotationFile {
            id: scene.id.clone(),
            height: scene.height(),
            width: scene.width(),
            instances: scene
                .annotations
                .iter()
                .map(|a| InstanceRecord {
                    instance_id: a.instance_id,
                    class_id: a.class_id,
                    keypoint: a.keypoint.map(|(r, c)| [r, c]),
                    rle: Rle::encode(&a.mask),
                })
                .collect(),
            source: None,
            checkpoint: None,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Schema { path, message: e.into_inner().to_string() }
        })
    }

    /// Decodes the masks and validates the result against `image`.
    pub fn to_scene(&self, image: Image) -> Result<Scene> {
        if self.height != image.height() || self.width != image.width() {
            return Err(Error::validation(format!(
                "scene `{}`: annotation is {}x{} but image is {}x{}",
                self.id,
                self.height,
                self.width,
                image.height(),
                image.width()
            )));
        }
        let mut annotations = Vec::with_capacity(self.instances.len());
        for (i, rec) in self.instances.iter().enumerate() {
            let mask = rec.rle.decode(self.height, self.width).map_err(|e| match e {
                Error::Schema { path, message } => {
                    Error::Schema { path: format!("instances[{i}].{path}"), message }
                }
                other => other,
            })?;
            annotations.push(InstanceAnnotation {
                instance_id: rec.instance_id,
                class_id: rec.class_id,
                mask,
                keypoint: rec.keypoint.map(|[r, c]| (r, c)),
            });
        }
        Scene::new(self.id.clone(), image, annotations)
    }
}

pub fn read_scene(image_path: impl AsRef<Path>, annotation_path: impl AsRef<Path>) -> Result<Scene> {
    let image = read_rgb_png(image_path)?;
    let text = fs::read_to_string(annotation_path)?;
    AnnotationFile::parse(&text)?.to_scene(image)
}

pub fn write_scene(scene: &Scene, image_path: impl AsRef<Path>, annotation_path: impl AsRef<Path>) -> Result<()> {
    write_rgb_png(&scene.image, image_path)?;
    write_annotation(&AnnotationFile::from_scene(scene), annotation_path)
}

pub fn write_annotation(file: &AnnotationFile, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(file)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn png_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Png { path: path.to_path_buf(), message: e.to_string() }
}

pub fn read_rgb_png(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_rgb_png(&bytes).map_err(|e| match e {
        Error::Png { message, .. } => png_err(path, message),
        other => other,
    })
}

/// Decodes an 8-bit RGB or RGBA PNG; alpha is dropped.
pub fn decode_rgb_png(bytes: &[u8]) -> Result<Image> {
    let here = Path::new("<memory>");
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| png_err(here, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| png_err(here, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(here, e))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(png_err(here, format!("expected 8-bit channels, got {:?}", info.bit_depth)));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    let data = &buf[..info.buffer_size()];
    let rgb = match info.color_type {
        png::ColorType::Rgb => data.to_vec(),
        png::ColorType::Rgba => data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        other => return Err(png_err(here, format!("expected RGB, got {other:?}"))),
    };
    Raster::new(h, w, 3, rgb)
}

pub fn encode_png(width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Result<Vec<u8>> {
    let here = Path::new("<memory>");
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header().map_err(|e| png_err(here, e))?;
        writer.write_image_data(data).map_err(|e| png_err(here, e))?;
    }
    Ok(out)
}

pub fn encode_rgb_png(image: &Image) -> Result<Vec<u8>> {
    if image.channels() != 3 {
        return Err(Error::validation("RGB PNG needs a 3-channel image"));
    }
    encode_png(image.width(), image.height(), png::ColorType::Rgb, png::BitDepth::Eight, image.values())
}

pub fn write_rgb_png(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_rgb_png(image)?)?;
    Ok(())
}

/// Single-channel 8-bit PNG, e.g. a click map scaled to 0..=255.
pub fn write_gray_png(raster: &Raster<f64>, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = raster.values().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    fs::write(path, encode_png(raster.width(), raster.height(), png::ColorType::Grayscale, png::BitDepth::Eight, &bytes)?)?;
    Ok(())
}

/// Writes a 16-bit grayscale PNG. Ids must be below 65536.
pub fn write_instance_map(map: &InstanceLabelMap, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_instance_map(map)?)?;
    Ok(())
}

pub fn encode_instance_map(map: &InstanceLabelMap) -> Result<Vec<u8>> {
    let mut data = Vec::with_capacity(map.ids().len() * 2);
    for &id in map.ids() {
        let v = u16::try_from(id)
            .map_err(|_| Error::Range(format!("instance id {id} does not fit a 16-bit PNG")))?;
        data.extend_from_slice(&v.to_be_bytes());
    }
    encode_png(map.width(), map.height(), png::ColorType::Grayscale, png::BitDepth::Sixteen, &data)
}

pub fn read_instance_map(path: impl AsRef<Path>) -> Result<InstanceLabelMap> {
    let path = path.as_ref();
    let file = fs::File::open(path)?;
    let decoder = png::Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| png_err(path, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| png_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| png_err(path, e))?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(png_err(path, format!(
            "instance map must be 16-bit grayscale, got {:?} {:?}",
            info.color_type, info.bit_depth
        )));
    }
    let ids = buf[..info.buffer_size()]
        .chunks_exact(2)
        .map(|b| u32::from(u16::from_be_bytes([b[0], b[1]])))
        .collect();
    InstanceLabelMap::new(info.height as usize, info.width as usize, ids)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny_scene_files(dir: &Path, ann: &str) -> (std::path::PathBuf, std::path::PathBuf) {
        let img = Raster::new(2, 2, 3, vec![10u8, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110, 120]).unwrap();
        let ip = dir.join("s.png");
        let ap = dir.join("s.json");
        write_rgb_png(&img, &ip).unwrap();
        fs::write(&ap, ann).unwrap();
        (ip, ap)
    }

    #[test]
    fn reads_single_pixel_instance() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, ap) = tiny_scene_files(
            dir.path(),
            r#"{"id":"s","height":2,"width":2,"instances":[
                {"instance_id":1,"class_id":2,"keypoint":null,
                 "rle":{"counts":[3,1],"order":"row-major","start_value":0}}]}"#,
        );
        let scene = read_scene(ip, ap).unwrap();
        assert_eq!(scene.annotations.len(), 1);
        assert_eq!(scene.annotations[0].mask.count(), 1);
        assert!(scene.annotations[0].mask.at(1, 1));
        assert_eq!(scene.image.get(0, 1, 2), 60);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let img = Raster::filled(416, 704, 3, 0u8);
        let ip = dir.path().join("big.png");
        write_rgb_png(&img, &ip).unwrap();
        let ann = format!(
            r#"{{"id":"b","height":480,"width":640,"instances":[{{"instance_id":1,"class_id":1,"keypoint":null,
            "rle":{{"counts":[0,{}],"order":"row-major","start_value":0}}}}]}}"#,
            480 * 640
        );
        let ap = dir.path().join("big.json");
        fs::write(&ap, ann).unwrap();
        assert!(matches!(read_scene(ip, ap), Err(Error::Validation(_))));
    }

    #[test]
    fn duplicate_instance_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let inst = r#"{"instance_id":3,"class_id":1,"keypoint":null,"rle":{"counts":[0,1,3],"order":"row-major","start_value":0}}"#;
        let (ip, ap) = tiny_scene_files(
            dir.path(),
            &format!(r#"{{"id":"s","height":2,"width":2,"instances":[{inst},{inst}]}}"#),
        );
        let err = read_scene(ip, ap).unwrap_err();
        assert!(err.to_string().contains("duplicate instance_id 3"), "{err}");
    }

    #[test]
    fn malformed_json_reports_field_path() {
        let text = r#"{"id":"s","height":2,"width":2,"instances":[{"instance_id":"x","class_id":1,"keypoint":null,"rle":{"counts":[4],"order":"row-major","start_value":0}}]}"#;
        match AnnotationFile::parse(text) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "instances[0].instance_id"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn bad_rle_sum_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, ap) = tiny_scene_files(
            dir.path(),
            r#"{"id":"s","height":2,"width":2,"instances":[{"instance_id":1,"class_id":1,"keypoint":null,"rle":{"counts":[1,1],"order":"row-major","start_value":0}}]}"#,
        );
        match read_scene(ip, ap) {
            Err(Error::Schema { path, .. }) => assert_eq!(path, "instances[0].rle.counts"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn instance_map_examples() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let zeros = InstanceLabelMap::zeros(4, 4);
        write_instance_map(&zeros, &p).unwrap();
        assert_eq!(read_instance_map(&p).unwrap(), zeros);

        let m = InstanceLabelMap::new(2, 3, vec![0, 1, 2, 2, 1, 0]).unwrap();
        write_instance_map(&m, &p).unwrap();
        assert_eq!(read_instance_map(&p).unwrap(), m);

        let big = InstanceLabelMap::new(1, 2, vec![0, 70000]).unwrap();
        assert!(matches!(write_instance_map(&big, &p), Err(Error::Range(_))));
    }

    proptest! {
        #[test]
        fn rle_round_trip(h in 1usize..12, w in 1usize..12, bits in proptest::collection::vec(any::<bool>(), 144)) {
            let mask = Raster::new(h, w, 1, bits[..h * w].to_vec()).unwrap();
            let rle = Rle::encode(&mask);
            prop_assert_eq!(rle.counts.iter().sum::<u64>(), (h * w) as u64);
            prop_assert_eq!(rle.decode(h, w).unwrap(), mask);
        }

        #[test]
        fn instance_map_png_round_trip(h in 1usize..10, w in 1usize..10, ids in proptest::collection::vec(0u32..65536, 100)) {
            let m = InstanceLabelMap::new(h, w, ids[..h * w].to_vec()).unwrap();
            let bytes = encode_instance_map(&m).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("m.png");
            fs::write(&p, bytes).unwrap();
            prop_assert_eq!(read_instance_map(&p).unwrap(), m);
        }
    }
}
