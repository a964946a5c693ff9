//! Multi-layer peelmap stack: pixel-aligned depth / RGB / segmentation /
//! normal images recording the ordered ray–surface intersections per pixel.

use crate::camera::PinholeCamera;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Background sentinel for the depth channel. `znear > 0` guarantees no
/// valid hit ever stores 0.0.
pub const BACKGROUND_DEPTH: f32 = 0.0;

/// Default number of peel layers.
pub const DEFAULT_LAYERS: usize = 4;

/// Maximum supported layer count.
pub const MAX_LAYERS: usize = 8;

#[derive(Debug, Error)]
pub enum StackError {
    #[error("layer count {0} outside supported range 1..={MAX_LAYERS}")]
    BadLayerCount(usize),
    #[error("peelmap stack failed validation: {0} violation(s), first: {1}")]
    InvalidStack(usize, String),
}

/// One validation violation, locating the texel and naming the broken rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub layer: usize,
    pub x: u32,
    pub y: u32,
    pub rule: String,
}

/// L-layer stack of pixel-aligned peelmaps plus the camera that peeled them.
///
/// Channel layout is `[layer][y * width + x]`. Depth and normals are f32
/// (matching their PFM storage bit-for-bit); a texel is background iff
/// depth == 0, seg == 0 and normal == (0,0,0) simultaneously.
#[derive(Debug, Clone, PartialEq)]
pub struct PeelStack {
    pub camera: PinholeCamera,
    pub width: u32,
    pub height: u32,
    /// Camera-space Z per texel, 0.0 = background.
    pub depth: Vec<Vec<f32>>,
    /// sRGB color per texel.
    pub rgb: Vec<Vec<[u8; 3]>>,
    /// Segmentation label id per texel, 0 = background.
    pub seg: Vec<Vec<u8>>,
    /// Unit normal in camera space per texel, (0,0,0) = background.
    pub normal: Vec<Vec<[f32; 3]>>,
}

impl PeelStack {
    /// All-background stack of the camera's resolution.
    pub fn empty(camera: PinholeCamera, layers: usize) -> Result<Self, StackError> {
        if layers == 0 || layers > MAX_LAYERS {
            return Err(StackError::BadLayerCount(layers));
        }
        let n = (camera.width * camera.height) as usize;
        Ok(Self {
            width: camera.width,
            height: camera.height,
            camera,
            depth: vec![vec![BACKGROUND_DEPTH; n]; layers],
            rgb: vec![vec![[0, 0, 0]; n]; layers],
            seg: vec![vec![0u8; n]; layers],
            normal: vec![vec![[0.0, 0.0, 0.0]; n]; layers],
        })
    }

    pub fn layers(&self) -> usize {
        self.depth.len()
    }

    #[inline]
    pub fn idx(&self, x: u32, y: u32) -> usize {
        (y * self.width + x) as usize
    }

    #[inline]
    pub fn is_valid(&self, layer: usize, x: u32, y: u32) -> bool {
        self.depth[layer][self.idx(x, y)] != BACKGROUND_DEPTH
    }

    /// Number of non-background texels across all layers.
    pub fn valid_count(&self) -> usize {
        self.depth
            .iter()
            .map(|l| l.iter().filter(|&&d| d != BACKGROUND_DEPTH).count())
            .sum()
    }
}

/// Check every `PeelStack` invariant and report each violation with the
/// offending texel. An empty report means the stack is well formed.
pub fn validate_stack(stack: &PeelStack) -> Vec<Violation> {
    let mut out = Vec::new();
    let layers = stack.layers();
    if stack.rgb.len() != layers || stack.seg.len() != layers || stack.normal.len() != layers {
        out.push(Violation {
            layer: 0,
            x: 0,
            y: 0,
            rule: "channel layer counts differ".into(),
        });
        return out;
    }
    let n = (stack.width * stack.height) as usize;
    for l in 0..layers {
        if stack.depth[l].len() != n
            || stack.rgb[l].len() != n
            || stack.seg[l].len() != n
            || stack.normal[l].len() != n
        {
            out.push(Violation {
                layer: l,
                x: 0,
                y: 0,
                rule: "channel dimensions differ from camera resolution".into(),
            });
            return out;
        }
    }
    for y in 0..stack.height {
        for x in 0..stack.width {
            let i = stack.idx(x, y);
            let mut prev_depth: Option<f32> = None;
            for l in 0..layers {
                let d = stack.depth[l][i];
                let s = stack.seg[l][i];
                let nrm = stack.normal[l][i];
                let normal_zero = nrm == [0.0, 0.0, 0.0];
                let depth_valid = d != BACKGROUND_DEPTH;
                if depth_valid != (s != 0) || depth_valid == normal_zero {
                    out.push(Violation {
                        layer: l,
                        x,
                        y,
                        rule: "validity coherence: depth==0 <=> seg==0 <=> normal==(0,0,0)".into(),
                    });
                }
                if depth_valid {
                    if d < 0.0 {
                        out.push(Violation {
                            layer: l,
                            x,
                            y,
                            rule: "negative depth".into(),
                        });
                    }
                    if let Some(p) = prev_depth {
                        if d <= p {
                            out.push(Violation {
                                layer: l,
                                x,
                                y,
                                rule: "depth monotonicity: valid depths must strictly increase with layer".into(),
                            });
                        }
                    }
                    prev_depth = Some(d);
                    if !normal_zero {
                        let len = (nrm[0] as f64).hypot(nrm[1] as f64).hypot(nrm[2] as f64);
                        if (len - 1.0).abs() >= 1e-4 {
                            out.push(Violation {
                                layer: l,
                                x,
                                y,
                                rule: "normal not unit length".into(),
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

/// `validate_stack` as a hard error for pipeline stages that require a
/// well-formed input.
pub fn require_valid(stack: &PeelStack) -> Result<(), StackError> {
    let report = validate_stack(stack);
    match report.first() {
        None => Ok(()),
        Some(v) => Err(StackError::InvalidStack(
            report.len(),
            format!("layer {} texel ({},{}): {}", v.layer, v.x, v.y, v.rule),
        )),
    }
}
