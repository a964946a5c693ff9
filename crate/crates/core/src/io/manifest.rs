//! Peelmap stack directory layout: a `manifest.json` (schema
//! `"peelstack/1"`) listing the camera, layer count and relative paths of
//! the per-layer channel files.
//!
//! Depth layers are grayscale PFM, normals 3-channel PFM, RGB 8-bit PNG
//! and segmentation 8-bit grayscale PNG holding raw label ids.

use super::pfm::{read_pfm, write_pfm, PfmImage};
use super::IoError;
use crate::camera::PinholeCamera;
use crate::stack::PeelStack;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

pub const MANIFEST_SCHEMA: &str = "peelstack/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelPaths {
    pub depth: Vec<String>,
    pub rgb: Vec<String>,
    pub seg: Vec<String>,
    pub normal: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StackManifest {
    pub schema: String,
    pub camera: PinholeCamera,
    pub layers: usize,
    pub channels: ChannelPaths,
}

/// Write all channel files plus `manifest.json` into `dir`.
pub fn save_stack(dir: &Path, stack: &PeelStack) -> Result<StackManifest, IoError> {
    fs::create_dir_all(dir).map_err(|e| IoError::file(dir, e))?;
    let layers = stack.layers();
    let mut channels = ChannelPaths {
        depth: Vec::new(),
        rgb: Vec::new(),
        seg: Vec::new(),
        normal: Vec::new(),
    };
    let (w, h) = (stack.width, stack.height);
    for l in 0..layers {
        let depth_name = format!("depth_{l:02}.pfm");
        write_pfm(
            &dir.join(&depth_name),
            &PfmImage {
                width: w,
                height: h,
                channels: 1,
                data: stack.depth[l].clone(),
            },
        )?;
        channels.depth.push(depth_name);

        let normal_name = format!("normal_{l:02}.pfm");
        write_pfm(
            &dir.join(&normal_name),
            &PfmImage {
                width: w,
                height: h,
                channels: 3,
                data: stack.normal[l].iter().flatten().copied().collect(),
            },
        )?;
        channels.normal.push(normal_name);

        let rgb_name = format!("rgb_{l:02}.png");
        let rgb_path = dir.join(&rgb_name);
        let rgb_buf: Vec<u8> = stack.rgb[l].iter().flatten().copied().collect();
        image::RgbImage::from_raw(w, h, rgb_buf)
            .expect("rgb buffer size")
            .save(&rgb_path)
            .map_err(|e| IoError::Image {
                path: rgb_path.display().to_string(),
                source: e,
            })?;
        channels.rgb.push(rgb_name);

        let seg_name = format!("seg_{l:02}.png");
        let seg_path = dir.join(&seg_name);
        image::GrayImage::from_raw(w, h, stack.seg[l].clone())
            .expect("seg buffer size")
            .save(&seg_path)
            .map_err(|e| IoError::Image {
                path: seg_path.display().to_string(),
                source: e,
            })?;
        channels.seg.push(seg_name);
    }
    let manifest = StackManifest {
        schema: MANIFEST_SCHEMA.to_string(),
        camera: stack.camera.clone(),
        layers,
        channels,
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| IoError::Json {
        path: path.display().to_string(),
        source: e,
    })?;
    fs::write(&path, json).map_err(|e| IoError::file(&path, e))?;
    Ok(manifest)
}

/// Load a stack from a manifest file (or the directory containing one).
pub fn load_stack(manifest_path: &Path) -> Result<PeelStack, IoError> {
    let manifest_path = if manifest_path.is_dir() {
        manifest_path.join("manifest.json")
    } else {
        manifest_path.to_path_buf()
    };
    let text = fs::read_to_string(&manifest_path).map_err(|e| IoError::file(&manifest_path, e))?;
    let manifest: StackManifest = serde_json::from_str(&text).map_err(|e| IoError::Json {
        path: manifest_path.display().to_string(),
        source: e,
    })?;
    if manifest.schema != MANIFEST_SCHEMA {
        return Err(IoError::format(
            &manifest_path,
            format!("unsupported schema {:?}", manifest.schema),
        ));
    }
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let mut stack = PeelStack::empty(manifest.camera.clone(), manifest.layers)?;
    let (w, h) = (stack.width, stack.height);
    let n = (w * h) as usize;
    for l in 0..manifest.layers {
        let depth_path = dir.join(&manifest.channels.depth[l]);
        let depth = read_pfm(&depth_path)?;
        if (depth.width, depth.height, depth.channels) != (w, h, 1) {
            return Err(IoError::format(&depth_path, "depth dimensions mismatch"));
        }
        stack.depth[l] = depth.data;

        let normal_path = dir.join(&manifest.channels.normal[l]);
        let normal = read_pfm(&normal_path)?;
        if (normal.width, normal.height, normal.channels) != (w, h, 3) {
            return Err(IoError::format(&normal_path, "normal dimensions mismatch"));
        }
        stack.normal[l] = normal.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();

        let rgb_path = dir.join(&manifest.channels.rgb[l]);
        let rgb = image::open(&rgb_path)
            .map_err(|e| IoError::Image {
                path: rgb_path.display().to_string(),
                source: e,
            })?
            .to_rgb8();
        if rgb.dimensions() != (w, h) {
            return Err(IoError::format(&rgb_path, "rgb dimensions mismatch"));
        }
        stack.rgb[l] = rgb.pixels().map(|p| p.0).collect();

        let seg_path = dir.join(&manifest.channels.seg[l]);
        let seg = image::open(&seg_path)
            .map_err(|e| IoError::Image {
                path: seg_path.display().to_string(),
                source: e,
            })?
            .to_luma8();
        if seg.dimensions() != (w, h) {
            return Err(IoError::format(&seg_path, "seg dimensions mismatch"));
        }
        stack.seg[l] = seg.into_raw();
        debug_assert_eq!(stack.seg[l].len(), n);
    }
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Pose;

    #[test]
    fn stack_roundtrip_bit_identical() {
        let camera = PinholeCamera {
            width: 6,
            height: 4,
            fx: 6.0,
            fy: 6.0,
            cx: 3.0,
            cy: 2.0,
            pose: Pose::identity(),
            znear: 0.01,
        };
        let mut stack = PeelStack::empty(camera, 2).unwrap();
        let i = stack.idx(2, 1);
        stack.depth[0][i] = 1.25;
        stack.seg[0][i] = 5;
        stack.normal[0][i] = [0.0, 0.6, -0.8];
        stack.rgb[0][i] = [10, 200, 30];
        stack.depth[1][i] = 2.5;
        stack.seg[1][i] = 5;
        stack.normal[1][i] = [0.0, 0.0, 1.0];

        let dir = tempfile::tempdir().unwrap();
        save_stack(dir.path(), &stack).unwrap();
        let back = load_stack(dir.path()).unwrap();
        assert_eq!(back, stack);
        for l in 0..2 {
            for (a, b) in stack.depth[l].iter().zip(&back.depth[l]) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn schema_checked() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        std::fs::write(&path, r#"{"schema":"peelstack/9"}"#).unwrap();
        assert!(load_stack(&path).is_err());
    }
}
