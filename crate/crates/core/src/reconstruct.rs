//! Peelmap inversion: back-projection to a labeled point cloud, per-layer
//! grid meshification, layer merging with vertex welding, and stitching of
//! the tangential gaps the peeling rays never see.

use crate::mesh::{LabeledPointCloud, LayeredMesh, SourcePixel, TriMesh};
use crate::stack::{require_valid, PeelStack};
use nalgebra::Vector3;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReconstructError {
    #[error("input stack failed validation: {0}")]
    InvalidStack(#[from] crate::stack::StackError),
}

/// Back-project every valid texel of every layer to a world-space point
/// with its normal, label, layer id and source texel.
pub fn backproject(stack: &PeelStack) -> Result<LabeledPointCloud, ReconstructError> {
    require_valid(stack)?;
    let cam = &stack.camera;
    let rot_t = cam.pose.rotation.transpose();
    let mut pc = LabeledPointCloud::default();
    for l in 0..stack.layers() {
        for y in 0..stack.height {
            for x in 0..stack.width {
                let i = stack.idx(x, y);
                let d = stack.depth[l][i];
                if d == 0.0 {
                    continue;
                }
                let p = cam
                    .unproject([x as f64 + 0.5, y as f64 + 0.5], d as f64)
                    .expect("validated stack has positive depths");
                let n = stack.normal[l][i];
                let n_world = rot_t * Vector3::new(n[0] as f64, n[1] as f64, n[2] as f64);
                pc.push(p, n_world, stack.seg[l][i], l as u32 + 1, (l as u32 + 1, x, y));
            }
        }
    }
    Ok(pc)
}

/// Subset of points carrying the given segmentation label, order preserved.
pub fn extract_garment(pc: &LabeledPointCloud, label: u8) -> LabeledPointCloud {
    let mut out = LabeledPointCloud::default();
    for i in 0..pc.len() {
        if pc.labels[i] == label {
            out.push(
                pc.points[i],
                pc.normals[i],
                pc.labels[i],
                pc.layer_ids[i],
                pc.source_pixel[i],
            );
        }
    }
    out
}

/// Depth-discontinuity threshold for a layer: 3x the median absolute depth
/// difference between adjacent valid texels, floored at 6x the layer's mean
/// pixel footprint. The floor keeps smooth but steeply sloped sheets (a
/// cylinder wall has near-zero vertical depth variation, collapsing the raw
/// median) connected up to a slope of ~6, beyond which the surface is
/// effectively tangential and left for gap stitching.
pub fn default_tau_disc(stack: &PeelStack, layer: u32, label: u8) -> f64 {
    let l = (layer - 1) as usize;
    let mut diffs: Vec<f64> = Vec::new();
    let mut footprint_sum = 0.0;
    let mut footprint_n = 0usize;
    let valid = |x: u32, y: u32| {
        let i = stack.idx(x, y);
        (stack.depth[l][i] != 0.0 && stack.seg[l][i] == label).then(|| stack.depth[l][i] as f64)
    };
    for y in 0..stack.height {
        for x in 0..stack.width {
            if let Some(d) = valid(x, y) {
                footprint_sum += stack.camera.pixel_footprint(d);
                footprint_n += 1;
                if x + 1 < stack.width {
                    if let Some(d2) = valid(x + 1, y) {
                        diffs.push((d - d2).abs());
                    }
                }
                if y + 1 < stack.height {
                    if let Some(d2) = valid(x, y + 1) {
                        diffs.push((d - d2).abs());
                    }
                }
            }
        }
    }
    if diffs.is_empty() {
        return f64::INFINITY;
    }
    diffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = diffs[diffs.len() / 2];
    let floor = 6.0 * footprint_sum / footprint_n as f64;
    (3.0 * median).max(floor)
}

/// Triangulate one peel layer on the image grid. Every valid texel with the
/// requested label becomes a vertex; each 2x2 block with at least 3 valid
/// corners emits triangles unless an edge spans a depth gap wider than
/// `tau_disc`. The block diagonal with the smaller 3D length wins, ties
/// split top-left to bottom-right.
pub fn meshify_layer(stack: &PeelStack, layer: u32, label: u8, tau_disc: f64) -> LayeredMesh {
    assert!(layer >= 1 && layer as usize <= stack.layers());
    let l = (layer - 1) as usize;
    let cam = &stack.camera;
    let mut vert_of_texel: BTreeMap<(u32, u32), u32> = BTreeMap::new();
    let mut mesh = TriMesh::default();
    let mut vertex_source: Vec<Option<SourcePixel>> = Vec::new();
    let mut depths: Vec<f64> = Vec::new();

    for y in 0..stack.height {
        for x in 0..stack.width {
            let i = stack.idx(x, y);
            if stack.depth[l][i] == 0.0 || stack.seg[l][i] != label {
                continue;
            }
            let d = stack.depth[l][i] as f64;
            let p = cam
                .unproject([x as f64 + 0.5, y as f64 + 0.5], d)
                .expect("valid texel depth");
            vert_of_texel.insert((x, y), mesh.vertices.len() as u32);
            mesh.vertices.push(p);
            vertex_source.push(Some((layer, x, y)));
            depths.push(d);
        }
    }

    let push_triangle = |mesh: &mut TriMesh, tri: [u32; 3]| {
        for (a, b) in [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])] {
            if (depths[a as usize] - depths[b as usize]).abs() > tau_disc {
                return;
            }
        }
        mesh.faces.push(tri);
    };

    for y in 0..stack.height.saturating_sub(1) {
        for x in 0..stack.width.saturating_sub(1) {
            // cyclic corner order: (x,y) (x+1,y) (x+1,y+1) (x,y+1)
            let corners = [
                vert_of_texel.get(&(x, y)).copied(),
                vert_of_texel.get(&(x + 1, y)).copied(),
                vert_of_texel.get(&(x + 1, y + 1)).copied(),
                vert_of_texel.get(&(x, y + 1)).copied(),
            ];
            let present: Vec<u32> = corners.iter().flatten().copied().collect();
            match present.len() {
                4 => {
                    let [v00, v10, v11, v01] =
                        [corners[0].unwrap(), corners[1].unwrap(), corners[2].unwrap(), corners[3].unwrap()];
                    let d_main =
                        (mesh.vertices[v00 as usize] - mesh.vertices[v11 as usize]).norm();
                    let d_anti =
                        (mesh.vertices[v10 as usize] - mesh.vertices[v01 as usize]).norm();
                    if d_main <= d_anti {
                        push_triangle(&mut mesh, [v00, v10, v11]);
                        push_triangle(&mut mesh, [v00, v11, v01]);
                    } else {
                        push_triangle(&mut mesh, [v00, v10, v01]);
                        push_triangle(&mut mesh, [v10, v11, v01]);
                    }
                }
                3 => push_triangle(&mut mesh, [present[0], present[1], present[2]]),
                _ => {}
            }
        }
    }

    let n = mesh.vertices.len();
    LayeredMesh {
        mesh,
        vertex_layer: vec![layer; n],
        vertex_source,
    }
}

/// Default weld radius: 1e-5 of the combined bounding-box diagonal.
pub fn default_eps_weld(parts: &[LayeredMesh]) -> f64 {
    let mut all = TriMesh::default();
    for p in parts {
        all.vertices.extend_from_slice(&p.mesh.vertices);
    }
    1e-5 * all.diameter()
}

/// Concatenate partial meshes, welding vertices closer than `eps_weld`.
/// The first occurrence survives and keeps its layer tag; degenerate faces
/// produced by welding are dropped.
pub fn merge_layers(parts: &[LayeredMesh], eps_weld: f64) -> LayeredMesh {
    let mut out_mesh = TriMesh::default();
    let mut vertex_layer: Vec<u32> = Vec::new();
    let mut vertex_source: Vec<Option<SourcePixel>> = Vec::new();

    // spatial hash over weld cells, eps-sized
    let cell = eps_weld.max(1e-300);
    let key = |p: &Vector3<f64>| {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    };
    let mut grid: BTreeMap<(i64, i64, i64), Vec<u32>> = BTreeMap::new();

    for part in parts {
        let mut remap: Vec<u32> = Vec::with_capacity(part.mesh.vertices.len());
        for (vi, p) in part.mesh.vertices.iter().enumerate() {
            let (kx, ky, kz) = key(p);
            let mut found: Option<u32> = None;
            'search: for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        if let Some(cands) = grid.get(&(kx + dx, ky + dy, kz + dz)) {
                            for &c in cands {
                                if (out_mesh.vertices[c as usize] - p).norm() < eps_weld {
                                    found = Some(c);
                                    break 'search;
                                }
                            }
                        }
                    }
                }
            }
            let id = match found {
                Some(id) => id,
                None => {
                    let id = out_mesh.vertices.len() as u32;
                    out_mesh.vertices.push(*p);
                    vertex_layer.push(part.vertex_layer[vi]);
                    vertex_source.push(part.vertex_source[vi]);
                    grid.entry((kx, ky, kz)).or_default().push(id);
                    id
                }
            };
            remap.push(id);
        }
        for f in &part.mesh.faces {
            let g = [
                remap[f[0] as usize],
                remap[f[1] as usize],
                remap[f[2] as usize],
            ];
            if g[0] != g[1] && g[1] != g[2] && g[0] != g[2] {
                out_mesh.faces.push(g);
            }
        }
    }

    LayeredMesh {
        mesh: out_mesh,
        vertex_layer,
        vertex_source,
    }
}

/// Bridge pairs of open boundary loops whose mutual nearest-vertex distance
/// is at most `max_bridge` with a greedy shortest-diagonal triangle strip.
/// Existing vertex positions are untouched; only faces are added.
pub fn stitch_gaps(mesh: &LayeredMesh, max_bridge: f64) -> LayeredMesh {
    let mut out = mesh.clone();
    let loops = mesh.mesh.boundary_loops();
    if loops.len() < 2 {
        return out;
    }
    let pos = |v: u32| mesh.mesh.vertices[v as usize];

    // candidate loop pairs by mutual nearest-vertex distance
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for i in 0..loops.len() {
        for j in i + 1..loops.len() {
            let mut best = f64::INFINITY;
            for &a in &loops[i] {
                for &b in &loops[j] {
                    best = best.min((pos(a) - pos(b)).norm());
                }
            }
            if best <= max_bridge {
                candidates.push((best, i, j));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then((a.1, a.2).cmp(&(b.1, b.2))));

    let mut used = vec![false; loops.len()];
    for (_, i, j) in candidates {
        if used[i] || used[j] {
            continue;
        }
        used[i] = true;
        used[j] = true;
        zipper(&mut out.mesh, &loops[i], &loops[j]);
    }
    out
}

/// Connect two boundary loops with a triangle strip, always advancing along
/// the shorter new diagonal.
fn zipper(mesh: &mut TriMesh, loop_a: &[u32], loop_b: &[u32]) {
    let pos = |v: u32| mesh.vertices[v as usize];
    // closest starting pair, ties toward lowest indices
    let (mut ia, mut ib) = (0usize, 0usize);
    let mut best = f64::INFINITY;
    for (qa, &a) in loop_a.iter().enumerate() {
        for (qb, &b) in loop_b.iter().enumerate() {
            let d = (pos(a) - pos(b)).norm();
            if d < best {
                best = d;
                ia = qa;
                ib = qb;
            }
        }
    }
    let la = loop_a.len();
    let lb = loop_b.len();
    let a_at = |k: usize| loop_a[(ia + k) % la];
    let b_fwd = |k: usize| loop_b[(ib + k % lb) % lb];
    let b_rev = |k: usize| loop_b[(ib + lb - k % lb) % lb];
    // traverse B in whichever direction tracks A around the whole loop, not
    // just at the start (staircase rims make a single local test unreliable)
    let score = |b_of: &dyn Fn(usize) -> u32| -> f64 {
        let samples = 16.min(la).min(lb).max(1);
        (0..samples)
            .map(|t| (pos(a_at(t * la / samples)) - pos(b_of(t * lb / samples))).norm())
            .sum()
    };
    let b_dir_fwd = score(&b_fwd) <= score(&b_rev);
    let b_at = |k: usize| if b_dir_fwd { b_fwd(k) } else { b_rev(k) };

    // proportional march: only the cursor that is behind may advance, so the
    // strip cannot drift out of phase and fan across the gap
    let (mut i, mut j) = (0usize, 0usize);
    while i < la || j < lb {
        let can_a = i < la;
        let can_b = j < lb;
        let a_ok = can_a && (!can_b || i * lb <= j * la);
        let b_ok = can_b && (!can_a || j * la <= i * lb);
        let take_a = if a_ok && b_ok {
            (pos(a_at(i + 1)) - pos(b_at(j))).norm()
                <= (pos(a_at(i)) - pos(b_at(j + 1))).norm()
        } else {
            a_ok
        };
        if take_a {
            let tri = [a_at(i), a_at(i + 1), b_at(j)];
            if tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] {
                mesh.faces.push(tri);
            }
            i += 1;
        } else {
            let tri = [a_at(i), b_at(j + 1), b_at(j)];
            if tri[0] != tri[1] && tri[1] != tri[2] && tri[0] != tri[2] {
                mesh.faces.push(tri);
            }
            j += 1;
        }
    }
}

/// Options for the full peelmap -> mesh reconstruction of one garment label.
#[derive(Debug, Clone, Copy, Default)]
pub struct ReconstructOptions {
    /// Depth-discontinuity cut; per-layer scale-free default when `None`.
    pub tau_disc: Option<f64>,
    /// Weld radius; 1e-5 x scene diameter when `None`.
    pub eps_weld: Option<f64>,
    /// Boundary bridging distance; 20x the mean valid pixel footprint when
    /// `None`. Set to `Some(0.0)` to disable stitching.
    pub max_bridge: Option<f64>,
}

/// Meshify every layer of `label`, merge, and stitch boundary gaps.
pub fn reconstruct_mesh(
    stack: &PeelStack,
    label: u8,
    opts: ReconstructOptions,
) -> Result<LayeredMesh, ReconstructError> {
    require_valid(stack)?;
    let mut parts = Vec::new();
    for layer in 1..=stack.layers() as u32 {
        let tau = opts
            .tau_disc
            .unwrap_or_else(|| default_tau_disc(stack, layer, label));
        let part = meshify_layer(stack, layer, label, tau);
        if !part.mesh.vertices.is_empty() {
            parts.push(part);
        }
    }
    let eps = opts.eps_weld.unwrap_or_else(|| default_eps_weld(&parts));
    let merged = merge_layers(&parts, eps);
    let bridge = opts.max_bridge.unwrap_or_else(|| {
        let mut sum = 0.0;
        let mut count = 0usize;
        for l in 0..stack.layers() {
            for (&d, &s) in stack.depth[l].iter().zip(&stack.seg[l]) {
                if d != 0.0 && s == label {
                    sum += stack.camera.pixel_footprint(d as f64);
                    count += 1;
                }
            }
        }
        if count == 0 {
            0.0
        } else {
            20.0 * sum / count as f64
        }
    });
    let stitched = if bridge > 0.0 {
        stitch_gaps(&merged, bridge)
    } else {
        merged
    };
    Ok(compact(stitched))
}

/// Drop zero-area faces and vertices referenced by no face (isolated texels
/// and texels whose every candidate triangle failed the discontinuity cut).
fn compact(lm: LayeredMesh) -> LayeredMesh {
    let mut remap: Vec<Option<u32>> = vec![None; lm.mesh.vertices.len()];
    let mut out = LayeredMesh {
        mesh: TriMesh::default(),
        vertex_layer: Vec::new(),
        vertex_source: Vec::new(),
    };
    for f in &lm.mesh.faces {
        let (a, b, c) = (
            lm.mesh.vertices[f[0] as usize],
            lm.mesh.vertices[f[1] as usize],
            lm.mesh.vertices[f[2] as usize],
        );
        if (b - a).cross(&(c - a)).norm() == 0.0 {
            continue;
        }
        let mut g = [0u32; 3];
        for (k, &v) in f.iter().enumerate() {
            g[k] = *remap[v as usize].get_or_insert_with(|| {
                out.mesh.vertices.push(lm.mesh.vertices[v as usize]);
                out.vertex_layer.push(lm.vertex_layer[v as usize]);
                out.vertex_source.push(lm.vertex_source[v as usize]);
                out.mesh.vertices.len() as u32 - 1
            });
        }
        out.mesh.faces.push(g);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{PinholeCamera, Pose};

    fn camera(res: u32) -> PinholeCamera {
        PinholeCamera {
            width: res,
            height: res,
            fx: res as f64,
            fy: res as f64,
            cx: res as f64 / 2.0,
            cy: res as f64 / 2.0,
            pose: Pose::identity(),
            znear: 0.01,
        }
    }

    fn set_valid(stack: &mut PeelStack, l: usize, x: u32, y: u32, d: f32, label: u8) {
        let i = stack.idx(x, y);
        stack.depth[l][i] = d;
        stack.seg[l][i] = label;
        stack.normal[l][i] = [0.0, 0.0, -1.0];
    }

    #[test]
    fn backproject_single_texel_on_principal_ray() {
        let mut stack = PeelStack::empty(camera(8), 4).unwrap();
        // principal pixel center is (4,4) -> texel (3,3) center is (3.5,3.5); use
        // the texel whose center sits on the axis: cx=4 -> pixel center 4.0 is
        // texel x=3.5.. none exactly; pick texel (4,4), center (4.5,4.5)
        set_valid(&mut stack, 0, 4, 4, 2.0, 5);
        let pc = backproject(&stack).unwrap();
        assert_eq!(pc.len(), 1);
        let expected = stack
            .camera
            .unproject([4.5, 4.5], 2.0)
            .unwrap();
        assert!((pc.points[0] - expected).norm() < 1e-12);
        assert_eq!(pc.labels[0], 5);
        assert_eq!(pc.layer_ids[0], 1);
        assert_eq!(pc.source_pixel[0], (1, 4, 4));
    }

    #[test]
    fn backproject_count_equals_valid_texels() {
        let mut stack = PeelStack::empty(camera(8), 2).unwrap();
        set_valid(&mut stack, 0, 1, 1, 1.0, 3);
        set_valid(&mut stack, 0, 2, 1, 1.5, 3);
        set_valid(&mut stack, 1, 1, 1, 2.0, 4);
        let pc = backproject(&stack).unwrap();
        assert_eq!(pc.len(), stack.valid_count());
    }

    #[test]
    fn backproject_rejects_invalid_stack() {
        let mut stack = PeelStack::empty(camera(8), 2).unwrap();
        let i = stack.idx(1, 1);
        stack.seg[0][i] = 3; // incoherent texel
        assert!(backproject(&stack).is_err());
    }

    #[test]
    fn extract_partitions_cloud() {
        let mut stack = PeelStack::empty(camera(8), 1).unwrap();
        set_valid(&mut stack, 0, 0, 0, 1.0, 3);
        set_valid(&mut stack, 0, 1, 0, 1.0, 4);
        set_valid(&mut stack, 0, 2, 0, 1.0, 4);
        let pc = backproject(&stack).unwrap();
        assert!(extract_garment(&pc, 9).is_empty());
        assert_eq!(extract_garment(&pc, 3).len(), 1);
        assert_eq!(
            extract_garment(&pc, 3).len() + extract_garment(&pc, 4).len(),
            pc.len()
        );
        let all4 = extract_garment(&pc, 4);
        assert_eq!(extract_garment(&all4, 4), all4);
    }

    #[test]
    fn meshify_full_grid_face_count() {
        let res = 8u32;
        let mut stack = PeelStack::empty(camera(res), 1).unwrap();
        for y in 0..res {
            for x in 0..res {
                set_valid(&mut stack, 0, x, y, 2.0, 5);
            }
        }
        let lm = meshify_layer(&stack, 1, 5, 0.5);
        assert_eq!(lm.mesh.vertices.len(), (res * res) as usize);
        assert_eq!(lm.mesh.faces.len(), ((res - 1) * (res - 1) * 2) as usize);
        assert!(lm.vertex_layer.iter().all(|&l| l == 1));
        lm.validate().unwrap();
    }

    #[test]
    fn meshify_cuts_depth_step() {
        let res = 8u32;
        let mut stack = PeelStack::empty(camera(res), 1).unwrap();
        for y in 0..res {
            for x in 0..res {
                let d = if x < 4 { 1.0 } else { 2.0 };
                set_valid(&mut stack, 0, x, y, d, 5);
            }
        }
        let lm = meshify_layer(&stack, 1, 5, 0.1);
        // no face may connect x=3 and x=4 columns
        for f in &lm.mesh.faces {
            let xs: Vec<u32> = f
                .iter()
                .map(|&v| lm.vertex_source[v as usize].unwrap().1)
                .collect();
            assert!(
                xs.iter().all(|&x| x <= 3) || xs.iter().all(|&x| x >= 4),
                "face spans the step: {xs:?}"
            );
        }
    }

    #[test]
    fn meshify_isolated_texel() {
        let mut stack = PeelStack::empty(camera(8), 1).unwrap();
        set_valid(&mut stack, 0, 3, 3, 1.0, 5);
        let lm = meshify_layer(&stack, 1, 5, 0.5);
        assert_eq!(lm.mesh.vertices.len(), 1);
        assert!(lm.mesh.faces.is_empty());
    }

    fn strip(x0: f64, n: usize, y_step: f64, layer: u32) -> LayeredMesh {
        // vertical strip of quads, 2 columns x n rows
        let mut mesh = TriMesh::default();
        for r in 0..n {
            mesh.vertices.push(Vector3::new(x0, r as f64 * y_step, 0.0));
            mesh.vertices.push(Vector3::new(x0 + 1.0, r as f64 * y_step, 0.0));
        }
        for r in 0..n - 1 {
            let a = (2 * r) as u32;
            mesh.faces.push([a, a + 1, a + 3]);
            mesh.faces.push([a, a + 3, a + 2]);
        }
        let nv = mesh.vertices.len();
        LayeredMesh {
            mesh,
            vertex_layer: vec![layer; nv],
            vertex_source: vec![None; nv],
        }
    }

    #[test]
    fn merge_identity_and_disjoint() {
        let a = strip(0.0, 4, 1.0, 1);
        let merged = merge_layers(&[a.clone()], 1e-6);
        assert_eq!(merged.mesh.vertices.len(), a.mesh.vertices.len());
        assert_eq!(merged.mesh.faces.len(), a.mesh.faces.len());

        let b = strip(10.0, 4, 1.0, 2);
        let merged = merge_layers(&[a.clone(), b.clone()], 1e-6);
        assert_eq!(
            merged.mesh.vertices.len(),
            a.mesh.vertices.len() + b.mesh.vertices.len()
        );
    }

    #[test]
    fn merge_welds_shared_column() {
        // second strip starts exactly at the first strip's right column
        let a = strip(0.0, 4, 1.0, 1);
        let b = strip(1.0, 4, 1.0, 2);
        let merged = merge_layers(&[a.clone(), b.clone()], 1e-9);
        // 4 shared vertices welded once
        assert_eq!(merged.mesh.vertices.len(), 8 + 8 - 4);
        // survivor keeps the first part's layer tag
        for (vi, v) in merged.mesh.vertices.iter().enumerate() {
            if (v.x - 1.0).abs() < 1e-12 {
                assert_eq!(merged.vertex_layer[vi], 1);
            }
        }
    }

    #[test]
    fn stitch_bridges_close_strips() {
        let a = strip(0.0, 4, 1.0, 1);
        let b = strip(1.001, 4, 1.0, 2);
        let merged = merge_layers(&[a, b], 1e-9);
        let before = merged.mesh.boundary_edges().len();
        let stitched = stitch_gaps(&merged, 0.005);
        let after = stitched.mesh.boundary_edges().len();
        assert!(after <= before - 2, "boundary edges {before} -> {after}");
        // existing vertices bit-identical
        assert_eq!(stitched.mesh.vertices, merged.mesh.vertices);
    }

    #[test]
    fn stitch_ignores_wide_gaps() {
        let a = strip(0.0, 4, 1.0, 1);
        let b = strip(5.0, 4, 1.0, 2);
        let merged = merge_layers(&[a, b], 1e-9);
        let stitched = stitch_gaps(&merged, 0.5);
        assert_eq!(stitched.mesh.faces.len(), merged.mesh.faces.len());
    }

    #[test]
    fn stitch_leaves_closed_mesh_unchanged() {
        // tetrahedron
        let mesh = TriMesh {
            vertices: vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
                Vector3::new(0.0, 0.0, 1.0),
            ],
            faces: vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]],
            ..Default::default()
        };
        let lm = LayeredMesh {
            vertex_layer: vec![1; 4],
            vertex_source: vec![None; 4],
            mesh,
        };
        let out = stitch_gaps(&lm, 10.0);
        assert_eq!(out.mesh.faces.len(), lm.mesh.faces.len());
    }
}
