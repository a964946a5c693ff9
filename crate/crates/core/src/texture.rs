//! Atlas texture baking: rasterize every chart triangle into the atlas,
//! project each covered texel back into the peel camera, and copy the RGB
//! value from the chart's peel layer when the depths agree.

use rayon::prelude::*;
use thiserror::Error;

use crate::flatten::UVAtlas;
use crate::stack::PeelStack;

/// Multiplier on the pixel footprint for the bake depth-agreement check.
pub const DEPTH_AGREEMENT_FACTOR: f64 = 3.0;

#[derive(Debug, Error)]
pub enum TextureError {
    #[error(
        "only {agreed} of {attempted} projected texels passed the depth check \
         ({rate:.1}% < 10%); the stack camera does not match the atlas geometry"
    )]
    CameraMismatch {
        agreed: usize,
        attempted: usize,
        rate: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TexelState {
    /// Color copied from a depth-verified peelmap texel.
    FilledFromPeelmap,
    /// Covered by a chart triangle but occluded / depth-rejected in its layer.
    Unfilled,
    /// Covered by no chart triangle.
    OutsideChart,
}

#[derive(Debug, Clone)]
pub struct TextureImage {
    pub resolution: u32,
    pub rgb: Vec<[u8; 3]>,
}

impl TextureImage {
    pub fn new(resolution: u32) -> Self {
        Self {
            resolution,
            rgb: vec![[0; 3]; (resolution * resolution) as usize],
        }
    }

    pub fn idx(&self, x: u32, y: u32) -> usize {
        (y * self.resolution + x) as usize
    }
}

#[derive(Debug, Clone)]
pub struct ValidityMask {
    pub resolution: u32,
    pub flags: Vec<TexelState>,
}

impl ValidityMask {
    pub fn idx(&self, x: u32, y: u32) -> usize {
        (y * self.resolution + x) as usize
    }
}

/// Point-in-triangle test in texel coordinates; returns barycentric weights.
fn barycentric(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Option<[f64; 3]> {
    let det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
    if det.abs() < 1e-300 {
        return None;
    }
    let l1 = ((p[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (p[1] - a[1])) / det;
    let l2 = ((b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1])) / det;
    let l0 = 1.0 - l1 - l2;
    const EPS: f64 = -1e-12;
    if l0 >= EPS && l1 >= EPS && l2 >= EPS {
        Some([l0, l1, l2])
    } else {
        None
    }
}

/// Bake the atlas texture from the peel stack. Each texel inside a chart
/// triangle interpolates its 3D position, projects into the stack camera and
/// reads the nearest peel texel of the chart's layer, provided that texel is
/// valid and its depth matches within 3 pixel footprints.
pub fn bake(
    atlas: &UVAtlas,
    stack: &PeelStack,
) -> Result<(TextureImage, ValidityMask), TextureError> {
    let res = atlas.resolution;
    let resf = res as f64;

    // Bin triangles by atlas row so rows can be processed independently with
    // a deterministic (chart, face) candidate order.
    #[derive(Clone, Copy)]
    struct Tri {
        chart: u32,
        face: u32,
        a: [f64; 2],
        b: [f64; 2],
        c: [f64; 2],
        min_x: u32,
        max_x: u32,
    }
    let mut rows: Vec<Vec<Tri>> = vec![Vec::new(); res as usize];
    for (ci, placed) in atlas.charts.iter().enumerate() {
        for (fi, f) in placed.chart.partition.submesh.faces.iter().enumerate() {
            let uv = |v: u32| {
                let p = placed.uv_atlas[v as usize];
                [p[0] * resf, p[1] * resf]
            };
            let (a, b, c) = (uv(f[0]), uv(f[1]), uv(f[2]));
            let min_y = a[1].min(b[1]).min(c[1]).floor().max(0.0) as u32;
            let max_y = (a[1].max(b[1]).max(c[1]).ceil() as i64).min(res as i64 - 1);
            let min_x = a[0].min(b[0]).min(c[0]).floor().max(0.0) as u32;
            let max_x = (a[0].max(b[0]).max(c[0]).ceil() as i64).min(res as i64 - 1);
            if max_y < 0 || max_x < 0 {
                continue;
            }
            let tri = Tri {
                chart: ci as u32,
                face: fi as u32,
                a,
                b,
                c,
                min_x,
                max_x: max_x as u32,
            };
            for y in min_y..=(max_y as u32).min(res - 1) {
                rows[y as usize].push(tri);
            }
        }
    }

    struct RowOut {
        rgb: Vec<[u8; 3]>,
        state: Vec<TexelState>,
        attempted: usize,
        agreed: usize,
    }

    let out_rows: Vec<RowOut> = (0..res)
        .into_par_iter()
        .map(|y| {
            let mut rgb = vec![[0u8; 3]; res as usize];
            let mut state = vec![TexelState::OutsideChart; res as usize];
            let (mut attempted, mut agreed) = (0usize, 0usize);
            for x in 0..res {
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                for tri in &rows[y as usize] {
                    if x < tri.min_x || x > tri.max_x {
                        continue;
                    }
                    let Some(w) = barycentric(p, tri.a, tri.b, tri.c) else {
                        continue;
                    };
                    if state[x as usize] == TexelState::OutsideChart {
                        state[x as usize] = TexelState::Unfilled;
                    }
                    let placed = &atlas.charts[tri.chart as usize];
                    let part = &placed.chart.partition;
                    let f = part.submesh.faces[tri.face as usize];
                    let pos = w[0] * part.submesh.vertices[f[0] as usize]
                        + w[1] * part.submesh.vertices[f[1] as usize]
                        + w[2] * part.submesh.vertices[f[2] as usize];
                    let Ok(([px, py], depth)) = stack.camera.project(pos) else {
                        continue;
                    };
                    if px < 0.0 || py < 0.0 || px >= stack.width as f64 || py >= stack.height as f64
                    {
                        continue;
                    }
                    let (sx, sy) = (px as u32, py as u32);
                    let layer = part.layer as usize;
                    if layer == 0 || layer > stack.layers() {
                        continue;
                    }
                    let li = layer - 1;
                    if !stack.is_valid(li, sx, sy) {
                        continue;
                    }
                    attempted += 1;
                    let peel_depth = stack.depth[li][stack.idx(sx, sy)] as f64;
                    let tau_z = DEPTH_AGREEMENT_FACTOR * stack.camera.pixel_footprint(depth);
                    if (peel_depth - depth).abs() <= tau_z {
                        agreed += 1;
                        rgb[x as usize] = stack.rgb[li][stack.idx(sx, sy)];
                        state[x as usize] = TexelState::FilledFromPeelmap;
                        break;
                    }
                }
            }
            RowOut {
                rgb,
                state,
                attempted,
                agreed,
            }
        })
        .collect();

    let mut img = TextureImage::new(res);
    let mut mask = ValidityMask {
        resolution: res,
        flags: vec![TexelState::OutsideChart; (res * res) as usize],
    };
    let (mut attempted, mut agreed) = (0usize, 0usize);
    for (y, row) in out_rows.into_iter().enumerate() {
        let base = y * res as usize;
        img.rgb[base..base + res as usize].copy_from_slice(&row.rgb);
        mask.flags[base..base + res as usize].copy_from_slice(&row.state);
        attempted += row.attempted;
        agreed += row.agreed;
    }
    if attempted > 0 && (agreed as f64) < 0.10 * attempted as f64 {
        return Err(TextureError::CameraMismatch {
            agreed,
            attempted,
            rate: 100.0 * agreed as f64 / attempted as f64,
        });
    }
    Ok((img, mask))
}

/// Interpolated 3D surface position and peel layer of every texel center,
/// from the first chart triangle (in chart, face order) covering it; `None`
/// outside charts.
pub fn texel_positions(atlas: &UVAtlas) -> Vec<Option<(nalgebra::Vector3<f64>, u32)>> {
    let res = atlas.resolution;
    let resf = res as f64;
    let mut out = vec![None; (res * res) as usize];
    for placed in &atlas.charts {
        let sub = &placed.chart.partition.submesh;
        for f in &sub.faces {
            let uv = |v: u32| {
                let p = placed.uv_atlas[v as usize];
                [p[0] * resf, p[1] * resf]
            };
            let (a, b, c) = (uv(f[0]), uv(f[1]), uv(f[2]));
            let min_y = a[1].min(b[1]).min(c[1]).floor().max(0.0) as u32;
            let max_y = (a[1].max(b[1]).max(c[1]).ceil() as i64).min(res as i64 - 1);
            let min_x = a[0].min(b[0]).min(c[0]).floor().max(0.0) as u32;
            let max_x = (a[0].max(b[0]).max(c[0]).ceil() as i64).min(res as i64 - 1);
            if max_y < 0 || max_x < 0 {
                continue;
            }
            for y in min_y..=(max_y as u32).min(res - 1) {
                for x in min_x..=(max_x as u32).min(res - 1) {
                    let i = (y * res + x) as usize;
                    if out[i].is_some() {
                        continue;
                    }
                    let p = [x as f64 + 0.5, y as f64 + 0.5];
                    if let Some(w) = barycentric(p, a, b, c) {
                        let pos = w[0] * sub.vertices[f[0] as usize]
                            + w[1] * sub.vertices[f[1] as usize]
                            + w[2] * sub.vertices[f[2] as usize];
                        out[i] = Some((pos, placed.chart.partition.layer));
                    }
                }
            }
        }
    }
    out
}

/// Bleed chart colors outward into the gutter: `rings` passes, each copying a
/// color onto OUTSIDE_CHART texels 8-adjacent to already-colored texels. The
/// validity mask is not modified; only outside-chart texels are written.
pub fn dilate_gutter(img: &mut TextureImage, mask: &ValidityMask, rings: u32) {
    let res = img.resolution;
    let mut colored: Vec<bool> = mask
        .flags
        .iter()
        .map(|&f| f != TexelState::OutsideChart)
        .collect();
    for _ in 0..rings {
        let mut writes: Vec<(usize, [u8; 3])> = Vec::new();
        for y in 0..res {
            for x in 0..res {
                let i = img.idx(x, y);
                if colored[i] {
                    continue;
                }
                'nbr: for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dx == 0 && dy == 0 {
                            continue;
                        }
                        let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= res as i64 || ny >= res as i64 {
                            continue;
                        }
                        let j = img.idx(nx as u32, ny as u32);
                        if colored[j] {
                            writes.push((i, img.rgb[j]));
                            break 'nbr;
                        }
                    }
                }
            }
        }
        for &(i, c) in &writes {
            img.rgb[i] = c;
            colored[i] = true;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{PinholeCamera, Pose};
    use crate::flatten::{conformal_flatten, pack_atlas};
    use crate::mesh::TriMesh;
    use crate::seams::Partition;
    use crate::stack::PeelStack;
    use nalgebra::Vector3;

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

    /// Whole-layer constant stack: depth `d`, color `rgb` everywhere.
    fn flat_stack(cam: PinholeCamera, layers: &[(f32, [u8; 3])]) -> PeelStack {
        let mut stack = PeelStack::empty(cam, layers.len()).unwrap();
        let n = (stack.width * stack.height) as usize;
        for (li, &(d, c)) in layers.iter().enumerate() {
            stack.depth[li] = vec![d; n];
            stack.rgb[li] = vec![c; n];
            stack.seg[li] = vec![1; n];
            stack.normal[li] = vec![[0.0, 0.0, -1.0]; n];
        }
        stack
    }

    /// Two-triangle quad on the plane z = `z`, centered on the optical axis.
    fn quad_partition(z: f64, half: f64, layer: u32) -> Partition {
        let mesh = TriMesh {
            vertices: vec![
                Vector3::new(-half, -half, z),
                Vector3::new(half, -half, z),
                Vector3::new(half, half, z),
                Vector3::new(-half, half, z),
            ],
            faces: vec![[0, 1, 2], [0, 2, 3]],
            ..TriMesh::default()
        };
        Partition {
            submesh: mesh,
            layer,
            vertex_origin_map: vec![0, 1, 2, 3],
            is_seam: vec![false; 4],
        }
    }

    #[test]
    fn visible_quad_bakes_constant_color() {
        let cam = camera(32);
        let stack = flat_stack(cam.clone(), &[(2.0, [10, 200, 30])]);
        let chart = conformal_flatten(quad_partition(2.0, 0.5, 1)).unwrap();
        let atlas = pack_atlas(vec![chart], 64, 2).unwrap();
        let (img, mask) = bake(&atlas, &stack).unwrap();
        let mut filled = 0;
        for (i, &f) in mask.flags.iter().enumerate() {
            match f {
                TexelState::FilledFromPeelmap => {
                    filled += 1;
                    assert_eq!(img.rgb[i], [10, 200, 30]);
                }
                TexelState::Unfilled => panic!("fully visible chart must have no unfilled texels"),
                TexelState::OutsideChart => {}
            }
        }
        assert!(filled > 500, "expected substantial chart coverage, got {filled}");
    }

    #[test]
    fn occluded_layer_never_bleeds() {
        // front plane red in layer 1, back plane blue in layer 2; a chart that
        // claims the back geometry lives in layer 1 must stay unfilled (the
        // depth check rejects layer 1's depth) and never pick up red
        let cam = camera(32);
        let stack = flat_stack(cam.clone(), &[(1.0, [255, 0, 0]), (2.0, [0, 0, 255])]);
        let ok_chart = conformal_flatten(quad_partition(2.0, 0.5, 2)).unwrap();
        // geometry at z = 2 but claimed to live in layer 1 (whose depth is 1)
        let wrong_chart = conformal_flatten(quad_partition(2.0, 0.5, 1)).unwrap();
        let atlas = pack_atlas(vec![ok_chart, wrong_chart], 64, 2).unwrap();
        let (img, mask) = bake(&atlas, &stack).unwrap();
        let mut unfilled = 0;
        for (i, &f) in mask.flags.iter().enumerate() {
            match f {
                TexelState::FilledFromPeelmap => assert_eq!(img.rgb[i], [0, 0, 255]),
                TexelState::Unfilled => unfilled += 1,
                TexelState::OutsideChart => {}
            }
        }
        assert!(unfilled > 300, "depth-rejected chart should be unfilled, got {unfilled}");

        // a lone mismatched chart drops the agreement rate to zero
        let wrong_only = conformal_flatten(quad_partition(2.0, 0.5, 1)).unwrap();
        let atlas = pack_atlas(vec![wrong_only], 64, 2).unwrap();
        assert!(matches!(
            bake(&atlas, &stack),
            Err(TextureError::CameraMismatch { .. })
        ));
    }

    #[test]
    fn wrong_camera_is_detected() {
        let cam = camera(32);
        let stack = flat_stack(cam, &[(5.0, [9, 9, 9])]);
        let chart = conformal_flatten(quad_partition(2.0, 0.5, 1)).unwrap();
        let atlas = pack_atlas(vec![chart], 64, 2).unwrap();
        let err = bake(&atlas, &stack).unwrap_err();
        assert!(matches!(err, TextureError::CameraMismatch { .. }));
    }

    #[test]
    fn gutter_dilation_writes_only_outside_texels() {
        let cam = camera(32);
        let stack = flat_stack(cam, &[(2.0, [77, 88, 99])]);
        let chart = conformal_flatten(quad_partition(2.0, 0.5, 1)).unwrap();
        let atlas = pack_atlas(vec![chart], 64, 4).unwrap();
        let (mut img, mask) = bake(&atlas, &stack).unwrap();
        let before = img.clone();
        dilate_gutter(&mut img, &mask, 2);
        let mut grew = 0;
        for i in 0..img.rgb.len() {
            if mask.flags[i] != TexelState::OutsideChart {
                assert_eq!(img.rgb[i], before.rgb[i], "inside-chart texel changed");
            } else if img.rgb[i] != before.rgb[i] {
                assert_eq!(img.rgb[i], [77, 88, 99]);
                grew += 1;
            }
        }
        assert!(grew > 0, "dilation wrote nothing");
    }
}
