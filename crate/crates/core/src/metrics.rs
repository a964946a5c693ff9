//! Evaluation metrics and reconstruction losses over peel stacks and meshes:
//! L1 depth/rgb losses, squared normal loss, multi-class cross-entropy,
//! their weighted total, and the geometric metrics P2S, IOU and NRE.
//!
//! All accumulation is Kahan-compensated so results are stable against
//! summation order to well below the test tolerances.

use nalgebra::Vector3;
use thiserror::Error;

use crate::bvh::Bvh;
use crate::mesh::TriMesh;
use crate::stack::PeelStack;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("stack dimensions differ: {0}x{1}x{2} vs {3}x{4}x{5} (w x h x layers)")]
    DimensionMismatch(u32, u32, usize, u32, u32, usize),
    #[error("class distribution at texel {index} sums to {sum}, not 1")]
    NotADistribution { index: usize, sum: f64 },
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
}

/// Compensated (Kahan) accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    pub fn add(&mut self, v: f64) {
        let y = v - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Sum (the default) or mean over texels where either stack is valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    MeanPerValidTexel,
}

/// Weights of the four loss terms in [`total_loss`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub depth: f64,
    pub seg: f64,
    pub norm: f64,
    pub rgb: f64,
}

impl LossWeights {
    /// Default tuning: depth 1.0, seg 0.1, norm 1.0, rgb 0.05.
    pub fn standard() -> Self {
        Self {
            depth: 1.0,
            seg: 0.1,
            norm: 1.0,
            rgb: 0.05,
        }
    }

    /// An earlier tuning of the same objective, kept for comparison runs.
    pub fn alternate() -> Self {
        Self {
            depth: 1.0,
            seg: 1.0,
            norm: 0.1,
            rgb: 0.001,
        }
    }
}

/// The four loss components, before weighting.
#[derive(Debug, Clone, Copy, Default, serde::Serialize, serde::Deserialize)]
pub struct LossParts {
    pub depth: f64,
    pub seg: f64,
    pub norm: f64,
    pub rgb: f64,
}

fn check_dims(pred: &PeelStack, gt: &PeelStack) -> Result<(), MetricsError> {
    if pred.width != gt.width || pred.height != gt.height || pred.layers() != gt.layers() {
        return Err(MetricsError::DimensionMismatch(
            pred.width,
            pred.height,
            pred.layers(),
            gt.width,
            gt.height,
            gt.layers(),
        ));
    }
    Ok(())
}

fn reduce(sum: f64, count: usize, reduction: Reduction) -> f64 {
    match reduction {
        Reduction::Sum => sum,
        Reduction::MeanPerValidTexel => {
            if count == 0 {
                0.0
            } else {
                sum / count as f64
            }
        }
    }
}

/// Count of layer-texels valid in either stack, used by the mean variant.
fn valid_union(pred: &PeelStack, gt: &PeelStack) -> usize {
    let mut n = 0;
    for l in 0..pred.layers() {
        for i in 0..pred.depth[l].len() {
            if pred.depth[l][i] != 0.0 || gt.depth[l][i] != 0.0 {
                n += 1;
            }
        }
    }
    n
}

/// L1 depth loss: sum over all layers and texels of |pred - gt|.
pub fn l_depth(pred: &PeelStack, gt: &PeelStack) -> Result<f64, MetricsError> {
    l_depth_with(pred, gt, Reduction::Sum)
}

pub fn l_depth_with(
    pred: &PeelStack,
    gt: &PeelStack,
    reduction: Reduction,
) -> Result<f64, MetricsError> {
    check_dims(pred, gt)?;
    let mut acc = Kahan::default();
    for l in 0..pred.layers() {
        for i in 0..pred.depth[l].len() {
            acc.add((pred.depth[l][i] as f64 - gt.depth[l][i] as f64).abs());
        }
    }
    Ok(reduce(acc.value(), valid_union(pred, gt), reduction))
}

/// L1 color loss on [0,1]-normalized RGB, summed over channels too.
pub fn l_rgb(pred: &PeelStack, gt: &PeelStack) -> Result<f64, MetricsError> {
    l_rgb_with(pred, gt, Reduction::Sum)
}

pub fn l_rgb_with(
    pred: &PeelStack,
    gt: &PeelStack,
    reduction: Reduction,
) -> Result<f64, MetricsError> {
    check_dims(pred, gt)?;
    let mut acc = Kahan::default();
    for l in 0..pred.layers() {
        for i in 0..pred.rgb[l].len() {
            for k in 0..3 {
                acc.add((pred.rgb[l][i][k] as f64 - gt.rgb[l][i][k] as f64).abs() / 255.0);
            }
        }
    }
    Ok(reduce(acc.value(), valid_union(pred, gt), reduction))
}

/// Squared (L2) normal loss: sum of squared componentwise differences.
pub fn l_norm(pred: &PeelStack, gt: &PeelStack) -> Result<f64, MetricsError> {
    l_norm_with(pred, gt, Reduction::Sum)
}

pub fn l_norm_with(
    pred: &PeelStack,
    gt: &PeelStack,
    reduction: Reduction,
) -> Result<f64, MetricsError> {
    check_dims(pred, gt)?;
    let mut acc = Kahan::default();
    for l in 0..pred.layers() {
        for i in 0..pred.normal[l].len() {
            for k in 0..3 {
                let d = pred.normal[l][i][k] as f64 - gt.normal[l][i][k] as f64;
                acc.add(d * d);
            }
        }
    }
    Ok(reduce(acc.value(), valid_union(pred, gt), reduction))
}

/// Multi-class cross-entropy: `pred_prob` holds one distribution of
/// `n_classes` probabilities per texel (row-major), `gt` the true class ids.
/// Probabilities are clamped at 1e-12 before the log.
pub fn l_seg(pred_prob: &[f64], gt: &[u8], n_classes: usize) -> Result<f64, MetricsError> {
    assert_eq!(pred_prob.len(), gt.len() * n_classes);
    let mut acc = Kahan::default();
    for (i, &cls) in gt.iter().enumerate() {
        let row = &pred_prob[i * n_classes..(i + 1) * n_classes];
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(MetricsError::NotADistribution { index: i, sum });
        }
        let p = row[cls as usize].max(1e-12);
        acc.add(-p.ln());
    }
    Ok(acc.value())
}

/// Cross-entropy between hard label stacks: exact matches cost 0, mismatches
/// cost -ln(1e-12) each (the prediction treated as a clamped one-hot).
pub fn l_seg_hard(pred: &PeelStack, gt: &PeelStack) -> Result<f64, MetricsError> {
    check_dims(pred, gt)?;
    let mut acc = Kahan::default();
    let miss = -(1e-12f64).ln();
    for l in 0..pred.layers() {
        for i in 0..pred.seg[l].len() {
            if pred.seg[l][i] != gt.seg[l][i] {
                acc.add(miss);
            }
        }
    }
    Ok(acc.value())
}

/// Weighted sum of the four loss components.
pub fn total_loss(parts: &LossParts, w: &LossWeights) -> f64 {
    w.depth * parts.depth + w.seg * parts.seg + w.norm * parts.norm + w.rgb * parts.rgb
}

/// All four components computed from a pair of stacks (seg via hard labels).
pub fn stack_losses(pred: &PeelStack, gt: &PeelStack) -> Result<LossParts, MetricsError> {
    Ok(LossParts {
        depth: l_depth(pred, gt)?,
        seg: l_seg_hard(pred, gt)?,
        norm: l_norm(pred, gt)?,
        rgb: l_rgb(pred, gt)?,
    })
}

/// Mean exact point-to-surface distance.
pub fn p2s(points: &[Vector3<f64>], surface: &TriMesh) -> Result<f64, MetricsError> {
    if points.is_empty() {
        return Err(MetricsError::EmptyInput("points"));
    }
    if surface.faces.is_empty() {
        return Err(MetricsError::EmptyInput("surface"));
    }
    let bvh = Bvh::build(surface);
    let mut acc = Kahan::default();
    for &p in points {
        let (d, _, _) = bvh.closest_point(p).expect("non-empty surface");
        acc.add(d);
    }
    Ok(acc.value() / points.len() as f64)
}

/// Intersection-over-union of one segmentation class across all layers.
pub fn iou(pred: &PeelStack, gt: &PeelStack, class: u8) -> Result<f64, MetricsError> {
    check_dims(pred, gt)?;
    let (mut inter, mut union) = (0usize, 0usize);
    for l in 0..pred.layers() {
        for i in 0..pred.seg[l].len() {
            let a = pred.seg[l][i] == class;
            let b = gt.seg[l][i] == class;
            if a && b {
                inter += 1;
            }
            if a || b {
                union += 1;
            }
        }
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Normal reprojection error: mean Euclidean distance between normals over
/// texels valid (non-zero normal) in BOTH maps.
pub fn nre(pred: &[[f32; 3]], gt: &[[f32; 3]]) -> Result<f64, MetricsError> {
    assert_eq!(pred.len(), gt.len());
    let valid = |n: &[f32; 3]| n.iter().any(|&c| c != 0.0);
    let mut acc = Kahan::default();
    let mut count = 0usize;
    for (a, b) in pred.iter().zip(gt) {
        if valid(a) && valid(b) {
            let d2: f64 = (0..3)
                .map(|k| {
                    let d = a[k] as f64 - b[k] as f64;
                    d * d
                })
                .sum();
            acc.add(d2.sqrt());
            count += 1;
        }
    }
    if count == 0 {
        return Err(MetricsError::EmptyInput("no texels valid in both maps"));
    }
    Ok(acc.value() / count as f64)
}
