//! End-to-end orchestration: render → reconstruct → unwrap → bake →
//! evaluate, with verifiable run manifests (sha256 per artifact), inspection
//! images, and a threshold-checked roundtrip report.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::flatten::{
    conformal_flatten, cut_to_disk, pack_atlas, FlattenError, PlacedChart, UVAtlas, UVChart,
};
use crate::inpaint::{inpaint, InpaintError, InpaintMode};
use crate::io::{load_obj, save_obj, save_stack, IoError, ObjMaterialLabels};
use crate::mesh::{LayeredMesh, TriMesh};
use crate::metrics::{
    iou, nre, p2s, stack_losses, total_loss, LossParts, LossWeights,
};
use crate::reconstruct::{reconstruct_mesh, ReconstructError, ReconstructOptions};
use crate::render::{
    peel_render, render_normal_map, RenderError, Scene, SceneMesh, SurfaceSampler,
};
use crate::seams::{assign_layers, estimate_seams, split_connected, split_partitions, Partition, SeamError};
use crate::stack::PeelStack;
use crate::texture::{
    bake, dilate_gutter, TexelState, TextureImage, ValidityMask, DEPTH_AGREEMENT_FACTOR,
};

pub const RUN_SCHEMA: &str = "peelrun/1";
pub const ATLAS_SCHEMA: &str = "peelatlas/1";
pub const REPORT_SCHEMA: &str = "peelreport/1";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String },
    #[error("io: {0}")]
    Io(#[from] IoError),
    #[error("manifest {path}: {message}")]
    Manifest { path: String, message: String },
}

fn stage_err(stage: &str, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Stage {
        stage: stage.to_string(),
        message: e.to_string(),
    }
}

// ---------------------------------------------------------------------------
// Parameters and thresholds

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// P2S limit as a multiple of the mean valid pixel footprint.
    pub p2s_footprints: f64,
    /// 90th percentile of the per-chart quasi-conformal ratio.
    pub qc_p90: f64,
    /// Relative residual of the conformal solve.
    pub solver_residual: f64,
    /// Mean normal reprojection error between input-view normal maps.
    pub max_nre: f64,
    /// Per-class IOU between the ground-truth and re-rendered stacks.
    pub min_iou: f64,
    /// Fraction of FILLED texels within 2/255 per channel of the oracle.
    pub texture_agreement: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            p2s_footprints: 2.0,
            qc_p90: 1.05,
            solver_residual: 1e-10,
            max_nre: 0.35,
            min_iou: 0.8,
            texture_agreement: 0.95,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineParams {
    pub layers: usize,
    pub atlas_resolution: u32,
    pub gutter: u32,
    pub tau_disc: Option<f64>,
    pub eps_weld: Option<f64>,
    pub max_bridge: Option<f64>,
    /// "diffusion", "exemplar", "patch_tile" or "none".
    pub inpaint: String,
    pub weights: LossWeights,
    pub thresholds: Thresholds,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            layers: 4,
            atlas_resolution: 256,
            gutter: 2,
            tau_disc: None,
            eps_weld: None,
            max_bridge: None,
            inpaint: "diffusion".to_string(),
            weights: LossWeights::standard(),
            thresholds: Thresholds::default(),
        }
    }
}

pub fn parse_inpaint_mode(name: &str) -> Result<Option<InpaintMode>, PipelineError> {
    match name {
        "diffusion" => Ok(Some(InpaintMode::Diffusion)),
        "exemplar" => Ok(Some(InpaintMode::Exemplar)),
        "patch_tile" => Ok(Some(InpaintMode::PatchTile)),
        "none" => Ok(None),
        other => Err(stage_err(
            "bake",
            format!("unknown inpaint mode '{other}'"),
        )),
    }
}

// ---------------------------------------------------------------------------
// Run manifest

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub params: serde_json::Value,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn new() -> Self {
        Self {
            schema: RUN_SCHEMA.to_string(),
            stages: Vec::new(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), PipelineError> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json).map_err(|e| PipelineError::Manifest {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Manifest {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let m: Self = serde_json::from_str(&text).map_err(|e| PipelineError::Manifest {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if m.schema != RUN_SCHEMA {
            return Err(PipelineError::Manifest {
                path: path.display().to_string(),
                message: format!("unexpected schema '{}'", m.schema),
            });
        }
        Ok(m)
    }
}

impl Default for RunManifest {
    fn default() -> Self {
        Self::new()
    }
}

pub fn sha256_file(path: &Path) -> Result<String, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::Manifest {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

fn artifact(base: &Path, path: &Path) -> Result<Artifact, PipelineError> {
    Ok(Artifact {
        path: path
            .strip_prefix(base)
            .unwrap_or(path)
            .display()
            .to_string(),
        sha256: sha256_file(path)?,
    })
}

/// Recompute every artifact hash in a run manifest. Returns the list of
/// `(path, ok)` pairs; a missing file counts as a mismatch.
pub fn verify_manifest(manifest_path: &Path) -> Result<Vec<(String, bool)>, PipelineError> {
    let manifest = RunManifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for stage in &manifest.stages {
        for art in stage.inputs.iter().chain(&stage.outputs) {
            let path = base.join(&art.path);
            let ok = sha256_file(&path).map(|h| h == art.sha256).unwrap_or(false);
            out.push((art.path.clone(), ok));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Stage building blocks

/// Reconstruct every foreground label of the stack into one labeled mesh.
pub fn reconstruct_all(
    stack: &PeelStack,
    opts: ReconstructOptions,
) -> Result<LayeredMesh, ReconstructError> {
    let mut labels: BTreeSet<u8> = BTreeSet::new();
    for l in 0..stack.layers() {
        for &s in &stack.seg[l] {
            if s != 0 {
                labels.insert(s);
            }
        }
    }
    let mut out = LayeredMesh {
        mesh: TriMesh::default(),
        vertex_layer: Vec::new(),
        vertex_source: Vec::new(),
    };
    let mut face_labels: Vec<u8> = Vec::new();
    for label in labels {
        let part = reconstruct_mesh(stack, label, opts)?;
        let base = out.mesh.vertices.len() as u32;
        out.mesh.vertices.extend_from_slice(&part.mesh.vertices);
        for f in &part.mesh.faces {
            out.mesh.faces.push([f[0] + base, f[1] + base, f[2] + base]);
            face_labels.push(label);
        }
        out.vertex_layer.extend_from_slice(&part.vertex_layer);
        out.vertex_source.extend_from_slice(&part.vertex_source);
    }
    out.mesh.face_labels = Some(face_labels);
    Ok(out)
}

#[derive(Debug, Error)]
pub enum UnwrapError {
    #[error("seam estimation: {0}")]
    Seam(#[from] SeamError),
    #[error("flattening: {0}")]
    Flatten(#[from] FlattenError),
}

/// Seam estimation, partition splitting, cutting to disks, conformal
/// flattening and atlas packing in one step.
pub fn unwrap_mesh(
    layered: &LayeredMesh,
    atlas_resolution: u32,
    gutter: u32,
) -> Result<UVAtlas, UnwrapError> {
    let vlayer = assign_layers(layered)?;
    let (seams, face_layer) = estimate_seams(&layered.mesh, &vlayer);
    let mut comps: Vec<Partition> = Vec::new();
    for part in split_partitions(&layered.mesh, &face_layer, &seams) {
        for comp in split_connected(&part) {
            if !comp.submesh.faces.is_empty() {
                comps.push(comp);
            }
        }
    }
    let charts: Vec<UVChart> = {
        use rayon::prelude::*;
        comps
            .into_par_iter()
            .map(|c| {
                let mut out = Vec::new();
                flatten_or_subdivide(c, 0, &mut out).map(|_| out)
            })
            .collect::<Result<Vec<_>, FlattenError>>()?
            .into_iter()
            .flatten()
            .collect()
    };
    Ok(pack_atlas(charts, atlas_resolution, gutter)?)
}

/// Cut a partition to disks and flatten each. If any piece folds or cannot
/// be cut (pinched boundaries defeat the cutter), bisect the partition along
/// the widest spread of its face centroids and retry each half, until it
/// flattens or the pieces get tiny.
fn flatten_or_subdivide(
    part: Partition,
    depth: u32,
    out: &mut Vec<UVChart>,
) -> Result<(), FlattenError> {
    let attempt = cut_to_disk(&part)
        .and_then(|disks| disks.into_iter().map(conformal_flatten).collect::<Result<Vec<_>, _>>());
    let recoverable = matches!(
        attempt,
        Err(FlattenError::FlippedTriangles { .. })
            | Err(FlattenError::NonDiskTopology { .. })
            | Err(FlattenError::SolverSingular { .. })
    );
    match attempt {
        Ok(charts) => {
            out.extend(charts);
            Ok(())
        }
        Err(e) if !recoverable || depth >= 16 || part.submesh.faces.len() <= 1 => Err(e),
        Err(_) => {
            let (lo, hi) = bisect_partition(&part);
            for half in [lo, hi] {
                if !half.submesh.faces.is_empty() {
                    flatten_or_subdivide(half, depth + 1, out)?;
                }
            }
            Ok(())
        }
    }
}

/// Split a partition's faces in half at the median face centroid along the
/// axis where the centroids spread the widest.
fn bisect_partition(part: &Partition) -> (Partition, Partition) {
    let centroids: Vec<nalgebra::Vector3<f64>> = part
        .submesh
        .faces
        .iter()
        .map(|f| {
            (part.submesh.vertices[f[0] as usize]
                + part.submesh.vertices[f[1] as usize]
                + part.submesh.vertices[f[2] as usize])
                / 3.0
        })
        .collect();
    let mut axis = 0;
    let mut best_spread = -1.0;
    for a in 0..3 {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in &centroids {
            lo = lo.min(c[a]);
            hi = hi.max(c[a]);
        }
        if hi - lo > best_spread {
            best_spread = hi - lo;
            axis = a;
        }
    }
    let mut order: Vec<usize> = (0..centroids.len()).collect();
    order.sort_by(|&i, &j| {
        centroids[i][axis]
            .partial_cmp(&centroids[j][axis])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut keep = vec![false; centroids.len()];
    for &fi in &order[..order.len() / 2] {
        keep[fi] = true;
    }
    let lo = subpartition(part, &keep);
    for k in keep.iter_mut() {
        *k = !*k;
    }
    let hi = subpartition(part, &keep);
    (lo, hi)
}

/// Extract the faces flagged in `keep` as a new partition with compacted
/// vertices; origin map and seam flags follow the kept vertices.
fn subpartition(part: &Partition, keep: &[bool]) -> Partition {
    let mut sub = TriMesh::default();
    let mut origin = Vec::new();
    let mut seam_flags = Vec::new();
    let mut remap: BTreeMap<u32, u32> = BTreeMap::new();
    for (fi, f) in part.submesh.faces.iter().enumerate() {
        if !keep[fi] {
            continue;
        }
        let mut nf = [0u32; 3];
        for (k, &v) in f.iter().enumerate() {
            nf[k] = match remap.get(&v) {
                Some(&x) => x,
                None => {
                    let x = sub.vertices.len() as u32;
                    sub.vertices.push(part.submesh.vertices[v as usize]);
                    origin.push(part.vertex_origin_map[v as usize]);
                    seam_flags.push(part.is_seam[v as usize]);
                    remap.insert(v, x);
                    x
                }
            };
        }
        sub.faces.push(nf);
    }
    Partition {
        submesh: sub,
        layer: part.layer,
        vertex_origin_map: origin,
        is_seam: seam_flags,
    }
}

/// Atlas layout record, serializable next to the unwrapped OBJ whose face
/// order it indexes into.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AtlasChartRecord {
    pub layer: u32,
    pub scale: f64,
    pub translation: [f64; 2],
    pub bbox_min: [f64; 2],
    pub bbox_max: [f64; 2],
    pub face_start: usize,
    pub face_count: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AtlasLayout {
    pub schema: String,
    pub resolution: u32,
    pub gutter: u32,
    pub charts: Vec<AtlasChartRecord>,
}

/// The layout plus the single unwrapped mesh (atlas UVs, faces grouped per
/// chart in layout order).
pub fn atlas_layout(atlas: &UVAtlas) -> (AtlasLayout, TriMesh) {
    let mut mesh = TriMesh::default();
    let mut uv = Vec::new();
    let mut charts = Vec::new();
    for placed in &atlas.charts {
        let sub = &placed.chart.partition.submesh;
        let base = mesh.vertices.len() as u32;
        let face_start = mesh.faces.len();
        mesh.vertices.extend_from_slice(&sub.vertices);
        uv.extend_from_slice(&placed.uv_atlas);
        for f in &sub.faces {
            mesh.faces.push([f[0] + base, f[1] + base, f[2] + base]);
        }
        let (bbox_min, bbox_max) = placed.atlas_bbox();
        charts.push(AtlasChartRecord {
            layer: placed.chart.partition.layer,
            scale: placed.scale,
            translation: placed.translation,
            bbox_min,
            bbox_max,
            face_start,
            face_count: sub.faces.len(),
        });
    }
    mesh.uv = Some(uv);
    (
        AtlasLayout {
            schema: ATLAS_SCHEMA.to_string(),
            resolution: atlas.resolution,
            gutter: atlas.gutter,
            charts,
        },
        mesh,
    )
}

/// Rebuild a bakeable atlas from a layout and the unwrapped mesh it indexes.
pub fn atlas_from_layout(layout: &AtlasLayout, mesh: &TriMesh) -> Result<UVAtlas, PipelineError> {
    let uv = mesh.uv.as_ref().ok_or_else(|| {
        stage_err("bake", "unwrapped mesh has no texture coordinates")
    })?;
    let mut charts = Vec::new();
    for rec in &layout.charts {
        if rec.face_start + rec.face_count > mesh.faces.len() {
            return Err(stage_err("bake", "atlas layout face range out of bounds"));
        }
        let faces = &mesh.faces[rec.face_start..rec.face_start + rec.face_count];
        let mut remap: BTreeMap<u32, u32> = BTreeMap::new();
        let mut sub = TriMesh::default();
        let mut uv_atlas = Vec::new();
        let mut uv_local = Vec::new();
        for f in faces {
            let mut nf = [0u32; 3];
            for (k, &v) in f.iter().enumerate() {
                nf[k] = *remap.entry(v).or_insert_with(|| {
                    sub.vertices.push(mesh.vertices[v as usize]);
                    uv_atlas.push(uv[v as usize]);
                    uv_local.push([
                        (uv[v as usize][0] - rec.translation[0]) / rec.scale + rec.bbox_min[0],
                        (uv[v as usize][1] - rec.translation[1]) / rec.scale + rec.bbox_min[1],
                    ]);
                    sub.vertices.len() as u32 - 1
                });
            }
            sub.faces.push(nf);
        }
        let nv = sub.vertices.len();
        let nf = sub.faces.len();
        charts.push(PlacedChart {
            chart: UVChart {
                partition: Partition {
                    submesh: sub,
                    layer: rec.layer,
                    vertex_origin_map: (0..nv as u32).collect(),
                    is_seam: vec![false; nv],
                },
                uv: uv_local,
                qc_ratio: vec![1.0; nf],
                area_scale: vec![1.0; nf],
                solver_residual: 0.0,
            },
            scale: rec.scale,
            translation: rec.translation,
            uv_atlas,
        });
    }
    Ok(UVAtlas {
        resolution: layout.resolution,
        gutter: layout.gutter,
        charts,
    })
}

// ---------------------------------------------------------------------------
// Inspection images

/// Side-by-side RGB contact sheet of all peel layers (top row) over the
/// depth layers mapped to grayscale (bottom row).
pub fn contact_sheet(stack: &PeelStack) -> image::RgbImage {
    let layers = stack.layers() as u32;
    let (w, h) = (stack.width, stack.height);
    let mut img = image::RgbImage::new(w * layers, h * 2);
    let mut dmax = 0.0f32;
    for l in 0..stack.layers() {
        for &d in &stack.depth[l] {
            dmax = dmax.max(d);
        }
    }
    for l in 0..layers {
        for y in 0..h {
            for x in 0..w {
                let i = stack.idx(x, y);
                let rgb = stack.rgb[l as usize][i];
                img.put_pixel(l * w + x, y, image::Rgb(rgb));
                let d = stack.depth[l as usize][i];
                let g = if d == 0.0 || dmax == 0.0 {
                    0
                } else {
                    (255.0 * (1.0 - d / dmax * 0.8)) as u8
                };
                img.put_pixel(l * w + x, h + y, image::Rgb([g, g, g]));
            }
        }
    }
    img
}

fn draw_line(img: &mut image::RgbImage, a: [f64; 2], b: [f64; 2], color: [u8; 3]) {
    let (w, h) = img.dimensions();
    let steps = ((b[0] - a[0]).abs().max((b[1] - a[1]).abs()).ceil() as u32).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let x = a[0] + (b[0] - a[0]) * t;
        let y = a[1] + (b[1] - a[1]) * t;
        if x >= 0.0 && y >= 0.0 && (x as u32) < w && (y as u32) < h {
            img.put_pixel(x as u32, y as u32, image::Rgb(color));
        }
    }
}

/// UV wireframe of all charts over a white canvas; chart bounding boxes in
/// red, triangle edges in gray.
pub fn atlas_layout_image(atlas: &UVAtlas) -> image::RgbImage {
    let res = atlas.resolution;
    let mut img = image::RgbImage::from_pixel(res, res, image::Rgb([255, 255, 255]));
    let s = res as f64;
    for placed in &atlas.charts {
        for f in &placed.chart.partition.submesh.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                let pa = placed.uv_atlas[a as usize];
                let pb = placed.uv_atlas[b as usize];
                draw_line(
                    &mut img,
                    [pa[0] * s, pa[1] * s],
                    [pb[0] * s, pb[1] * s],
                    [160, 160, 160],
                );
            }
        }
        let (lo, hi) = placed.atlas_bbox();
        let c = [200, 40, 40];
        draw_line(&mut img, [lo[0] * s, lo[1] * s], [hi[0] * s, lo[1] * s], c);
        draw_line(&mut img, [hi[0] * s, lo[1] * s], [hi[0] * s, hi[1] * s], c);
        draw_line(&mut img, [hi[0] * s, hi[1] * s], [lo[0] * s, hi[1] * s], c);
        draw_line(&mut img, [lo[0] * s, hi[1] * s], [lo[0] * s, lo[1] * s], c);
    }
    img
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChartStats {
    pub layer: u32,
    pub faces: usize,
    pub qc_p90: f64,
    pub qc_max: f64,
    pub solver_residual: f64,
}

pub fn chart_stats(chart: &UVChart) -> ChartStats {
    let mut qc: Vec<f64> = chart.qc_ratio.iter().copied().filter(|q| q.is_finite()).collect();
    qc.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pick = |frac: f64| {
        if qc.is_empty() {
            1.0
        } else {
            qc[((qc.len() as f64 * frac) as usize).min(qc.len() - 1)]
        }
    };
    ChartStats {
        layer: chart.partition.layer,
        faces: chart.partition.submesh.faces.len(),
        qc_p90: pick(0.9),
        qc_max: pick(1.0),
        solver_residual: chart.solver_residual,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TextureReport {
    pub filled: usize,
    pub unfilled: usize,
    pub outside: usize,
    pub mean_abs_error: f64,
    pub fraction_within_tolerance: f64,
}

/// Compare every FILLED texel of the baked texture against a ray-cast color
/// oracle: the texel's 3D position is projected into the stack camera, the
/// source scene is re-traced along the sampled pixel's ray and the color is
/// read off the chart's layer (tolerance 2/255 per channel). Texels whose
/// oracle ray misses (geometry drifted past the depth tolerance) count as
/// out of tolerance.
pub fn texture_report(
    atlas: &UVAtlas,
    img: &TextureImage,
    mask: &ValidityMask,
    scene: &Scene,
    stack: &PeelStack,
) -> Result<TextureReport, RenderError> {
    let sampler = SurfaceSampler::new(scene)?;
    let positions = crate::texture::texel_positions(atlas);
    let (mut filled, mut unfilled, mut outside) = (0usize, 0usize, 0usize);
    let mut err_sum = 0.0f64;
    let mut within = 0usize;
    for (i, &flag) in mask.flags.iter().enumerate() {
        match flag {
            TexelState::OutsideChart => outside += 1,
            TexelState::Unfilled => unfilled += 1,
            TexelState::FilledFromPeelmap => {
                filled += 1;
                let Some((pos, layer)) = positions[i] else { continue };
                let Ok(([px, py], depth)) = stack.camera.project(pos) else {
                    continue;
                };
                // the bake read the nearest peel texel; trace its center ray
                let pixel = [px.floor() + 0.5, py.floor() + 0.5];
                let tol = DEPTH_AGREEMENT_FACTOR * stack.camera.pixel_footprint(depth);
                let oracle = sampler.color_on_layer(&stack.camera, pixel, layer, depth, tol);
                let Some(oracle) = oracle else {
                    err_sum += 1.0;
                    continue;
                };
                let mut max_ch = 0i32;
                let mut sum_ch = 0.0;
                for k in 0..3 {
                    let d = (img.rgb[i][k] as i32 - oracle[k] as i32).abs();
                    max_ch = max_ch.max(d);
                    sum_ch += d as f64 / 255.0;
                }
                err_sum += sum_ch / 3.0;
                if max_ch <= 2 {
                    within += 1;
                }
            }
        }
    }
    Ok(TextureReport {
        filled,
        unfilled,
        outside,
        mean_abs_error: if filled > 0 { err_sum / filled as f64 } else { 0.0 },
        fraction_within_tolerance: if filled > 0 {
            within as f64 / filled as f64
        } else {
            1.0
        },
    })
}

/// Give every unfilled texel that cannot reach a filled texel through the
/// chart interior the color of the nearest filled texel, marking it filled.
fn seed_isolated_unfilled(img: &mut TextureImage, mask: &mut ValidityMask) {
    let res = mask.resolution as i64;
    let mut reach = vec![false; mask.flags.len()];
    let mut q = std::collections::VecDeque::new();
    for (i, &f) in mask.flags.iter().enumerate() {
        if f == TexelState::FilledFromPeelmap {
            reach[i] = true;
            q.push_back(i);
        }
    }
    while let Some(i) = q.pop_front() {
        let (x, y) = (i as i64 % res, i as i64 / res);
        for (nx, ny) in [(x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)] {
            if nx < 0 || ny < 0 || nx >= res || ny >= res {
                continue;
            }
            let j = (ny * res + nx) as usize;
            if !reach[j] && mask.flags[j] != TexelState::OutsideChart {
                reach[j] = true;
                q.push_back(j);
            }
        }
    }
    let filled: Vec<(i64, i64, [u8; 3])> = mask
        .flags
        .iter()
        .enumerate()
        .filter(|(_, &f)| f == TexelState::FilledFromPeelmap)
        .map(|(i, _)| (i as i64 % res, i as i64 / res, img.rgb[i]))
        .collect();
    if filled.is_empty() {
        return;
    }
    for i in 0..mask.flags.len() {
        if mask.flags[i] != TexelState::Unfilled || reach[i] {
            continue;
        }
        let (x, y) = (i as i64 % res, i as i64 / res);
        let mut best = filled[0].2;
        let mut best_d = i64::MAX;
        for &(fx, fy, c) in &filled {
            let d = (fx - x) * (fx - x) + (fy - y) * (fy - y);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        img.rgb[i] = best;
        mask.flags[i] = TexelState::FilledFromPeelmap;
    }
}

/// Mean pixel footprint over all valid texels of the stack.
pub fn mean_footprint(stack: &PeelStack) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for l in 0..stack.layers() {
        for &d in &stack.depth[l] {
            if d != 0.0 {
                sum += stack.camera.pixel_footprint(d as f64);
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundtripReport {
    pub schema: String,
    pub params: PipelineParams,
    pub mean_pixel_footprint: f64,
    pub p2s: f64,
    pub p2s_limit: f64,
    pub nre: f64,
    pub iou: BTreeMap<String, f64>,
    pub losses: LossParts,
    pub total_loss: f64,
    pub charts: Vec<ChartStats>,
    pub texture: TextureReport,
    pub failures: Vec<String>,
    pub pass: bool,
}

// ---------------------------------------------------------------------------
// Full roundtrip

pub fn run_roundtrip(
    scene: &Scene,
    params: &PipelineParams,
    out_dir: &Path,
) -> Result<RoundtripReport, PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::Manifest {
        path: out_dir.display().to_string(),
        message: e.to_string(),
    })?;
    let mut manifest = RunManifest::new();
    let manifest_path = out_dir.join("run_manifest.json");
    let params_json = serde_json::to_value(params).expect("params serialize");

    // a helper that records a stage and flushes the manifest so it is
    // present up to the point of any later failure
    let record = |manifest: &mut RunManifest,
                      name: &str,
                      inputs: Vec<Artifact>,
                      outputs: Vec<Artifact>,
                      started: Instant|
     -> Result<(), PipelineError> {
        manifest.stages.push(StageRecord {
            name: name.to_string(),
            inputs,
            outputs,
            params: params_json.clone(),
            wall_ms: started.elapsed().as_millis() as u64,
        });
        manifest.save(&manifest_path)
    };

    // ---- render ----
    let t0 = Instant::now();
    let stack =
        peel_render(scene, params.layers).map_err(|e| stage_err("render", e))?;
    let stack_dir = out_dir.join("stack");
    let stack_manifest =
        save_stack(&stack_dir, &stack).map_err(|e| stage_err("render", e))?;
    let sheet = contact_sheet(&stack);
    let sheet_path = out_dir.join("contact_sheet.png");
    sheet
        .save(&sheet_path)
        .map_err(|e| stage_err("render", e))?;
    let mut outs = vec![artifact(out_dir, &stack_dir.join("manifest.json"))?];
    let ch = &stack_manifest.channels;
    for name in ch.depth.iter().chain(&ch.rgb).chain(&ch.seg).chain(&ch.normal) {
        outs.push(artifact(out_dir, &stack_dir.join(name))?);
    }
    outs.push(artifact(out_dir, &sheet_path)?);
    record(&mut manifest, "render", Vec::new(), outs, t0)?;

    // ---- reconstruct ----
    let t0 = Instant::now();
    let opts = ReconstructOptions {
        tau_disc: params.tau_disc,
        eps_weld: params.eps_weld,
        max_bridge: params.max_bridge,
    };
    let recon = reconstruct_all(&stack, opts).map_err(|e| {
        let _ = manifest.save(&manifest_path);
        stage_err("reconstruct", e)
    })?;
    let recon_path = out_dir.join("recon.obj");
    save_obj(&recon_path, &recon.mesh).map_err(|e| stage_err("reconstruct", e))?;
    let layers_path = out_dir.join("recon_layers.json");
    std::fs::write(
        &layers_path,
        serde_json::to_string(&recon.vertex_layer).expect("layers serialize"),
    )
    .map_err(|e| stage_err("reconstruct", e))?;
    let outs = vec![
        artifact(out_dir, &recon_path)?,
        artifact(out_dir, &layers_path)?,
    ];
    record(
        &mut manifest,
        "reconstruct",
        vec![artifact(out_dir, &stack_dir.join("manifest.json"))?],
        outs,
        t0,
    )?;

    // ---- unwrap ----
    let t0 = Instant::now();
    let atlas = unwrap_mesh(&recon, params.atlas_resolution, params.gutter)
        .map_err(|e| stage_err("unwrap", e))?;
    let (layout, unwrapped) = atlas_layout(&atlas);
    let layout_path = out_dir.join("atlas_layout.json");
    std::fs::write(
        &layout_path,
        serde_json::to_string_pretty(&layout).expect("layout serializes"),
    )
    .map_err(|e| stage_err("unwrap", e))?;
    let mut unwrapped_for_save = unwrapped.clone();
    unwrapped_for_save.texture = Some("texture.png".to_string());
    let unwrapped_path = out_dir.join("unwrapped.obj");
    save_obj(&unwrapped_path, &unwrapped_for_save).map_err(|e| stage_err("unwrap", e))?;
    let layout_img_path = out_dir.join("atlas_layout.png");
    atlas_layout_image(&atlas)
        .save(&layout_img_path)
        .map_err(|e| stage_err("unwrap", e))?;
    record(
        &mut manifest,
        "unwrap",
        vec![artifact(out_dir, &recon_path)?],
        vec![
            artifact(out_dir, &layout_path)?,
            artifact(out_dir, &unwrapped_path)?,
            artifact(out_dir, &layout_img_path)?,
        ],
        t0,
    )?;

    // ---- bake ----
    let t0 = Instant::now();
    let (baked, mask) = bake(&atlas, &stack).map_err(|e| stage_err("bake", e))?;
    let mode = parse_inpaint_mode(&params.inpaint)?;
    let mut final_tex = match mode {
        Some(m) => match inpaint(&baked, &mask, m, None) {
            Ok(t) => t,
            Err(InpaintError::NoBoundary) => {
                // a chart baked with zero depth-verified texels (e.g. a rim
                // sliver); seed it from the nearest filled texel so diffusion
                // has boundary values, without touching the reported mask
                let mut seeded_img = baked.clone();
                let mut seeded_mask = mask.clone();
                seed_isolated_unfilled(&mut seeded_img, &mut seeded_mask);
                inpaint(&seeded_img, &seeded_mask, m, None)
                    .map_err(|e| stage_err("bake", e))?
            }
            Err(e) => return Err(stage_err("bake", e)),
        },
        None => baked.clone(),
    };
    dilate_gutter(&mut final_tex, &mask, 2);
    let tex_path = out_dir.join("texture.png");
    save_texture_png(&final_tex, &tex_path)?;
    let mask_path = out_dir.join("mask.png");
    save_mask_png(&mask, &mask_path)?;
    record(
        &mut manifest,
        "bake",
        vec![
            artifact(out_dir, &layout_path)?,
            artifact(out_dir, &stack_dir.join("manifest.json"))?,
        ],
        vec![
            artifact(out_dir, &tex_path)?,
            artifact(out_dir, &mask_path)?,
        ],
        t0,
    )?;

    // ---- evaluate ----
    let t0 = Instant::now();
    let report = evaluate_roundtrip(scene, &stack, &recon, &atlas, &baked, &mask, params)
        .map_err(|e| {
            let _ = manifest.save(&manifest_path);
            e
        })?;
    let report_path = out_dir.join("report.json");
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )
    .map_err(|e| stage_err("evaluate", e))?;
    record(
        &mut manifest,
        "evaluate",
        Vec::new(),
        vec![artifact(out_dir, &report_path)?],
        t0,
    )?;
    Ok(report)
}

fn evaluate_roundtrip(
    scene: &Scene,
    stack: &PeelStack,
    recon: &LayeredMesh,
    atlas: &UVAtlas,
    baked: &TextureImage,
    mask: &ValidityMask,
    params: &PipelineParams,
) -> Result<RoundtripReport, PipelineError> {
    let stage = "evaluate";
    // source mesh merged for P2S
    let mut source = TriMesh::default();
    for sm in &scene.meshes {
        let base = source.vertices.len() as u32;
        source.vertices.extend_from_slice(&sm.mesh.vertices);
        for f in &sm.mesh.faces {
            source.faces.push([f[0] + base, f[1] + base, f[2] + base]);
        }
    }
    let footprint = mean_footprint(stack);
    let p2s_val = p2s(&recon.mesh.vertices, &source).map_err(|e| stage_err(stage, e))?;
    let p2s_limit = params.thresholds.p2s_footprints * footprint;

    // re-render the reconstruction from the same camera
    let recon_scene = Scene {
        meshes: vec![SceneMesh {
            mesh: recon.mesh.clone(),
            texture: None,
            base_color: [128, 128, 128],
        }],
        camera: stack.camera.clone(),
    };
    let restack =
        peel_render(&recon_scene, params.layers).map_err(|e| stage_err(stage, e))?;
    let gt_normals = render_normal_map(scene).map_err(|e| stage_err(stage, e))?;
    let re_normals = render_normal_map(&recon_scene).map_err(|e| stage_err(stage, e))?;
    let nre_val = nre(&re_normals, &gt_normals).map_err(|e| stage_err(stage, e))?;

    let mut classes: BTreeSet<u8> = BTreeSet::new();
    for l in 0..stack.layers() {
        for &s in &stack.seg[l] {
            if s != 0 {
                classes.insert(s);
            }
        }
    }
    let mut iou_map = BTreeMap::new();
    for c in &classes {
        let v = iou(&restack, stack, *c).map_err(|e| stage_err(stage, e))?;
        iou_map.insert(c.to_string(), v);
    }

    let losses = stack_losses(&restack, stack).map_err(|e| stage_err(stage, e))?;
    let total = total_loss(&losses, &params.weights);

    let charts: Vec<ChartStats> = atlas.charts.iter().map(|p| chart_stats(&p.chart)).collect();
    let tex_report =
        texture_report(atlas, baked, mask, scene, stack).map_err(|e| stage_err(stage, e))?;

    let mut failures = Vec::new();
    let th = &params.thresholds;
    if p2s_val > p2s_limit {
        failures.push(format!("p2s {p2s_val:.6} exceeds limit {p2s_limit:.6}"));
    }
    if nre_val > th.max_nre {
        failures.push(format!("nre {nre_val:.4} exceeds {:.4}", th.max_nre));
    }
    for (c, v) in &iou_map {
        if *v < th.min_iou {
            failures.push(format!("iou[{c}] {v:.4} below {:.4}", th.min_iou));
        }
    }
    for cs in &charts {
        if cs.solver_residual > th.solver_residual {
            failures.push(format!(
                "chart layer {} residual {:.3e} exceeds {:.1e}",
                cs.layer, cs.solver_residual, th.solver_residual
            ));
        }
    }
    if tex_report.fraction_within_tolerance < th.texture_agreement {
        failures.push(format!(
            "texture agreement {:.4} below {:.4}",
            tex_report.fraction_within_tolerance, th.texture_agreement
        ));
    }

    Ok(RoundtripReport {
        schema: REPORT_SCHEMA.to_string(),
        params: params.clone(),
        mean_pixel_footprint: footprint,
        p2s: p2s_val,
        p2s_limit,
        nre: nre_val,
        iou: iou_map,
        losses,
        total_loss: total,
        charts,
        texture: tex_report,
        pass: failures.is_empty(),
        failures,
    })
}

pub fn save_texture_png(img: &TextureImage, path: &Path) -> Result<(), PipelineError> {
    let res = img.resolution;
    let mut out = image::RgbImage::new(res, res);
    for y in 0..res {
        for x in 0..res {
            out.put_pixel(x, y, image::Rgb(img.rgb[img.idx(x, y)]));
        }
    }
    out.save(path).map_err(|e| stage_err("bake", e))
}

/// Mask PNG: filled 255, unfilled 128, outside 0.
pub fn save_mask_png(mask: &ValidityMask, path: &Path) -> Result<(), PipelineError> {
    let res = mask.resolution;
    let mut out = image::GrayImage::new(res, res);
    for y in 0..res {
        for x in 0..res {
            let v = match mask.flags[mask.idx(x, y)] {
                TexelState::FilledFromPeelmap => 255,
                TexelState::Unfilled => 128,
                TexelState::OutsideChart => 0,
            };
            out.put_pixel(x, y, image::Luma([v]));
        }
    }
    out.save(path).map_err(|e| stage_err("bake", e))
}

/// Load an unwrapped OBJ + layout pair back into a bakeable atlas.
pub fn load_atlas(layout_path: &Path, mesh_path: &Path) -> Result<UVAtlas, PipelineError> {
    let text = std::fs::read_to_string(layout_path).map_err(|e| PipelineError::Manifest {
        path: layout_path.display().to_string(),
        message: e.to_string(),
    })?;
    let layout: AtlasLayout =
        serde_json::from_str(&text).map_err(|e| PipelineError::Manifest {
            path: layout_path.display().to_string(),
            message: e.to_string(),
        })?;
    if layout.schema != ATLAS_SCHEMA {
        return Err(PipelineError::Manifest {
            path: layout_path.display().to_string(),
            message: format!("unexpected schema '{}'", layout.schema),
        });
    }
    let mesh = load_obj(mesh_path, &ObjMaterialLabels::default())?;
    atlas_from_layout(&layout, &mesh)
}
