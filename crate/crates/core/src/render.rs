//! Ground-truth peelmap synthesis: multi-hit ray casting of a textured,
//! face-labeled scene into an L-layer [`PeelStack`].
//!
//! For every pixel a ray is cast through the pixel center; all ray–mesh
//! intersections beyond `znear` are collected, sorted by depth,
//! deduplicated within a hit-merge epsilon and the first L hits populate
//! the stack layers. Rendering is parallel over rows and bit-deterministic
//! regardless of the worker thread count.

use crate::bvh::Bvh;
use crate::camera::PinholeCamera;
use crate::mesh::TriMesh;
use crate::stack::PeelStack;
use nalgebra::Vector3;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("scene contains no triangles")]
    EmptyScene,
    #[error("scene mesh {0} face {1} has label 0 (labels must be > 0)")]
    UnlabeledFace(usize, usize),
    #[error("stack error: {0}")]
    Stack(#[from] crate::stack::StackError),
    #[error("camera error: {0}")]
    Camera(#[from] crate::camera::CameraError),
}

/// One renderable mesh: geometry with per-face labels, colored either from
/// a texture sampled through per-vertex uv or from a flat base color.
pub struct SceneMesh {
    pub mesh: TriMesh,
    pub texture: Option<image::RgbImage>,
    pub base_color: [u8; 3],
}

/// A virtual scene: labeled meshes observed by one pinhole camera.
pub struct Scene {
    pub meshes: Vec<SceneMesh>,
    pub camera: PinholeCamera,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextureFilter {
    Nearest,
    Bilinear,
}

#[derive(Debug, Clone, Copy)]
pub struct RenderOptions {
    pub texture_filter: TextureFilter,
    /// Interpolate per-vertex normals instead of the geometric face normal.
    pub smooth_normals: bool,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            texture_filter: TextureFilter::Nearest,
            smooth_normals: false,
        }
    }
}

struct FaceRef {
    mesh: u32,
    face: u32,
}

struct Tracer<'a> {
    scene: &'a Scene,
    bvh: Bvh,
    face_refs: Vec<FaceRef>,
    eps_hit: f64,
    opts: RenderOptions,
}

impl<'a> Tracer<'a> {
    fn new(scene: &'a Scene, opts: RenderOptions) -> Result<Self, RenderError> {
        let mut merged = TriMesh::default();
        let mut face_refs = Vec::new();
        for (mi, sm) in scene.meshes.iter().enumerate() {
            let labels = sm.mesh.face_labels.as_ref();
            for (fi, f) in sm.mesh.faces.iter().enumerate() {
                let label = labels.map(|l| l[fi]).unwrap_or(0);
                if label == 0 {
                    return Err(RenderError::UnlabeledFace(mi, fi));
                }
                let base = merged.vertices.len() as u32;
                for p in sm.mesh.face_points(*f) {
                    merged.vertices.push(p);
                }
                merged.faces.push([base, base + 1, base + 2]);
                face_refs.push(FaceRef {
                    mesh: mi as u32,
                    face: fi as u32,
                });
            }
        }
        if merged.faces.is_empty() {
            return Err(RenderError::EmptyScene);
        }
        // shared-edge double hits merge within a fixed fraction of the scene size
        let eps_hit = 1e-6 * merged.diameter();
        let bvh = Bvh::build(&merged);
        Ok(Self {
            scene,
            bvh,
            face_refs,
            eps_hit,
            opts,
        })
    }

    fn shade(
        &self,
        global_face: u32,
        u: f64,
        v: f64,
        ray_dir_cam: Vector3<f64>,
    ) -> ([u8; 3], u8, [f32; 3]) {
        let fr = &self.face_refs[global_face as usize];
        let sm = &self.scene.meshes[fr.mesh as usize];
        let f = sm.mesh.faces[fr.face as usize];
        let label = sm
            .mesh
            .face_labels
            .as_ref()
            .map(|l| l[fr.face as usize])
            .unwrap_or(0);

        let rgb = match (&sm.texture, &sm.mesh.uv) {
            (Some(tex), Some(uv)) => {
                let w = 1.0 - u - v;
                let t0 = uv[f[0] as usize];
                let t1 = uv[f[1] as usize];
                let t2 = uv[f[2] as usize];
                let tu = w * t0[0] + u * t1[0] + v * t2[0];
                let tv = w * t0[1] + u * t1[1] + v * t2[1];
                sample_texture(tex, tu, tv, self.opts.texture_filter)
            }
            _ => sm.base_color,
        };

        let n_world = if self.opts.smooth_normals && sm.mesh.normals.is_some() {
            let ns = sm.mesh.normals.as_ref().unwrap();
            let w = 1.0 - u - v;
            w * ns[f[0] as usize] + u * ns[f[1] as usize] + v * ns[f[2] as usize]
        } else {
            sm.mesh.face_normal_raw(fr.face as usize)
        };
        let mut n_cam = self.scene.camera.pose.rotation * n_world;
        let norm = n_cam.norm();
        if norm > 0.0 {
            n_cam /= norm;
        }
        // flip toward the ray origin
        if n_cam.dot(&ray_dir_cam) > 0.0 {
            n_cam = -n_cam;
        }
        (rgb, label, [n_cam.x as f32, n_cam.y as f32, n_cam.z as f32])
    }
}

fn sample_texture(tex: &image::RgbImage, u: f64, v: f64, filter: TextureFilter) -> [u8; 3] {
    let (w, h) = tex.dimensions();
    // v = 0 is the bottom row in uv convention
    let px = u * w as f64 - 0.5;
    let py = (1.0 - v) * h as f64 - 0.5;
    let clamp = |t: f64, hi: u32| (t.round().max(0.0) as u32).min(hi - 1);
    match filter {
        TextureFilter::Nearest => tex.get_pixel(clamp(px, w), clamp(py, h)).0,
        TextureFilter::Bilinear => {
            let x0 = px.floor();
            let y0 = py.floor();
            let fx = px - x0;
            let fy = py - y0;
            let at = |x: f64, y: f64| {
                let x = (x.max(0.0) as u32).min(w - 1);
                let y = (y.max(0.0) as u32).min(h - 1);
                tex.get_pixel(x, y).0
            };
            let mut out = [0u8; 3];
            for c in 0..3 {
                let v00 = at(x0, y0)[c] as f64;
                let v10 = at(x0 + 1.0, y0)[c] as f64;
                let v01 = at(x0, y0 + 1.0)[c] as f64;
                let v11 = at(x0 + 1.0, y0 + 1.0)[c] as f64;
                let val = v00 * (1.0 - fx) * (1.0 - fy)
                    + v10 * fx * (1.0 - fy)
                    + v01 * (1.0 - fx) * fy
                    + v11 * fx * fy;
                out[c] = val.round().clamp(0.0, 255.0) as u8;
            }
            out
        }
    }
}

/// Render an L-layer peelmap stack of the scene.
pub fn peel_render(scene: &Scene, layers: usize) -> Result<PeelStack, RenderError> {
    peel_render_with(scene, layers, RenderOptions::default())
}

pub fn peel_render_with(
    scene: &Scene,
    layers: usize,
    opts: RenderOptions,
) -> Result<PeelStack, RenderError> {
    scene.camera.validate()?;
    let tracer = Tracer::new(scene, opts)?;
    let cam = &scene.camera;
    let mut stack = PeelStack::empty(cam.clone(), layers)?;
    let (w, h) = (cam.width, cam.height);

    type Texel = (f32, [u8; 3], u8, [f32; 3]);
    let rows: Vec<Vec<Vec<Texel>>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut row = Vec::with_capacity(w as usize);
            for x in 0..w {
                let pixel = [x as f64 + 0.5, y as f64 + 0.5];
                let (origin, dir) = cam.pixel_ray(pixel);
                let dir_cam = cam.pose.rotation * dir;
                let hits = tracer.bvh.all_hits(origin, dir, cam.znear);
                let dir_len = dir.norm();
                let mut texels: Vec<Texel> = Vec::new();
                let mut last_t = f64::NEG_INFINITY;
                for hit in hits {
                    if (hit.t - last_t) * dir_len < tracer.eps_hit {
                        continue;
                    }
                    last_t = hit.t;
                    if texels.len() == layers {
                        break;
                    }
                    let (rgb, seg, normal) = tracer.shade(hit.face, hit.u, hit.v, dir_cam);
                    texels.push((hit.t as f32, rgb, seg, normal));
                }
                row.push(texels);
            }
            row
        })
        .collect();

    for (y, row) in rows.into_iter().enumerate() {
        for (x, texels) in row.into_iter().enumerate() {
            let i = y * w as usize + x;
            for (l, (d, rgb, seg, normal)) in texels.into_iter().enumerate() {
                stack.depth[l][i] = d;
                stack.rgb[l][i] = rgb;
                stack.seg[l][i] = seg;
                stack.normal[l][i] = normal;
            }
        }
    }
    Ok(stack)
}

/// First-layer normal image of the scene; equals layer 1 of the full
/// peel render's normal channel.
/// Nearest-surface color queries against a scene, using the exact sampling
/// path of the renderer. Serves as the color oracle for texture evaluation.
pub struct SurfaceSampler<'a> {
    scene: &'a Scene,
    bvh: Bvh,
    face_refs: Vec<(u32, u32)>,
    eps_hit: f64,
}

impl<'a> SurfaceSampler<'a> {
    pub fn new(scene: &'a Scene) -> Result<Self, RenderError> {
        let mut merged = TriMesh::default();
        let mut face_refs = Vec::new();
        for (mi, sm) in scene.meshes.iter().enumerate() {
            for (fi, f) in sm.mesh.faces.iter().enumerate() {
                let base = merged.vertices.len() as u32;
                for p in sm.mesh.face_points(*f) {
                    merged.vertices.push(p);
                }
                merged.faces.push([base, base + 1, base + 2]);
                face_refs.push((mi as u32, fi as u32));
            }
        }
        if merged.faces.is_empty() {
            return Err(RenderError::EmptyScene);
        }
        let eps_hit = 1e-6 * merged.diameter();
        Ok(Self {
            scene,
            bvh: Bvh::build(&merged),
            face_refs,
            eps_hit,
        })
    }

    fn shade_color(&self, global_face: u32, u: f64, v: f64) -> [u8; 3] {
        let (mi, fi) = self.face_refs[global_face as usize];
        let sm = &self.scene.meshes[mi as usize];
        let f = sm.mesh.faces[fi as usize];
        match (&sm.texture, &sm.mesh.uv) {
            (Some(tex), Some(uv)) => {
                let w = 1.0 - u - v;
                let t0 = uv[f[0] as usize];
                let t1 = uv[f[1] as usize];
                let t2 = uv[f[2] as usize];
                let tu = w * t0[0] + u * t1[0] + v * t2[0];
                let tv = w * t0[1] + u * t1[1] + v * t2[1];
                sample_texture(tex, tu, tv, TextureFilter::Nearest)
            }
            _ => sm.base_color,
        }
    }

    /// Color of the scene surface point nearest to `point`, plus the
    /// distance to it.
    pub fn color_at(&self, point: Vector3<f64>) -> ([u8; 3], f64) {
        let (d, q, global_face) = self
            .bvh
            .closest_point(point)
            .expect("sampler scene is non-empty");
        let (mi, fi) = self.face_refs[global_face as usize];
        let sm = &self.scene.meshes[mi as usize];
        let f = sm.mesh.faces[fi as usize];
        let [p0, p1, p2] = sm.mesh.face_points(f);
        let (u, v) = barycentric_of(q, p0, p1, p2);
        (self.shade_color(global_face, u, v), d)
    }

    /// Color of the `layer`-th (1-based) surface hit along the camera ray
    /// through `pixel`, using the renderer's hit deduplication. `None`
    /// unless that hit exists and its depth is within `tol` of
    /// `expected_depth`.
    pub fn color_on_layer(
        &self,
        camera: &PinholeCamera,
        pixel: [f64; 2],
        layer: u32,
        expected_depth: f64,
        tol: f64,
    ) -> Option<[u8; 3]> {
        let (origin, dir) = camera.pixel_ray(pixel);
        let dir_len = dir.norm();
        let mut last_t = f64::NEG_INFINITY;
        let mut count = 0u32;
        for hit in self.bvh.all_hits(origin, dir, camera.znear) {
            if (hit.t - last_t) * dir_len < self.eps_hit {
                continue;
            }
            last_t = hit.t;
            count += 1;
            if count == layer {
                if (hit.t - expected_depth).abs() <= tol {
                    return Some(self.shade_color(hit.face, hit.u, hit.v));
                }
                return None;
            }
        }
        None
    }
}

/// Barycentric (u, v) of `p` w.r.t. the triangle's 2nd and 3rd vertex,
/// assuming `p` lies on (or near) the triangle plane.
fn barycentric_of(
    p: Vector3<f64>,
    a: Vector3<f64>,
    b: Vector3<f64>,
    c: Vector3<f64>,
) -> (f64, f64) {
    let v0 = b - a;
    let v1 = c - a;
    let v2 = p - a;
    let d00 = v0.dot(&v0);
    let d01 = v0.dot(&v1);
    let d11 = v1.dot(&v1);
    let d20 = v2.dot(&v0);
    let d21 = v2.dot(&v1);
    let denom = d00 * d11 - d01 * d01;
    if denom.abs() < 1e-300 {
        return (0.0, 0.0);
    }
    let u = (d11 * d20 - d01 * d21) / denom;
    let v = (d00 * d21 - d01 * d20) / denom;
    (u, v)
}

pub fn render_normal_map(scene: &Scene) -> Result<Vec<[f32; 3]>, RenderError> {
    let stack = peel_render(scene, 1)?;
    Ok(stack.normal.into_iter().next().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Pose;
    use crate::stack::validate_stack;

    pub(crate) fn test_camera(res: u32) -> PinholeCamera {
        PinholeCamera {
            width: res,
            height: res,
            fx: res as f64,
            fy: res as f64,
            cx: res as f64 / 2.0,
            cy: res as f64 / 2.0,
            pose: Pose::at(Vector3::new(0.0, 0.0, -2.0)),
            znear: 0.01,
        }
    }

    fn quad_mesh(z: f64, half: f64, label: u8) -> SceneMesh {
        let v = |x: f64, y: f64| Vector3::new(x, y, z);
        SceneMesh {
            mesh: TriMesh {
                vertices: vec![v(-half, -half), v(half, -half), v(half, half), v(-half, half)],
                faces: vec![[0, 1, 2], [0, 2, 3]],
                face_labels: Some(vec![label, label]),
                ..Default::default()
            },
            texture: None,
            base_color: [200, 10, 10],
        }
    }

    #[test]
    fn single_triangle_one_layer() {
        let cam = test_camera(64);
        let tri = SceneMesh {
            mesh: TriMesh {
                vertices: vec![
                    Vector3::new(-1.0, -1.0, 1.0),
                    Vector3::new(1.0, -1.0, 1.0),
                    Vector3::new(0.0, 1.0, 1.0),
                ],
                faces: vec![[0, 1, 2]],
                face_labels: Some(vec![3]),
                ..Default::default()
            },
            texture: None,
            base_color: [1, 2, 3],
        };
        let scene = Scene {
            meshes: vec![tri],
            camera: cam,
        };
        let stack = peel_render(&scene, 4).unwrap();
        // principal pixel: triangle sits at world z=1, camera at z=-2 -> depth 3
        let i = stack.idx(32, 32);
        assert!((stack.depth[0][i] - 3.0).abs() < 1e-6);
        assert_eq!(stack.seg[0][i], 3);
        assert_eq!(stack.rgb[0][i], [1, 2, 3]);
        for l in 1..4 {
            assert_eq!(stack.depth[l][i], 0.0);
        }
        assert!(validate_stack(&stack).is_empty());
    }

    #[test]
    fn stacked_quads_monotone_depths() {
        let scene = Scene {
            meshes: vec![quad_mesh(0.0, 1.0, 1), quad_mesh(1.0, 1.0, 1)],
            camera: test_camera(64),
        };
        let stack = peel_render(&scene, 4).unwrap();
        let i = stack.idx(32, 32);
        assert!((stack.depth[0][i] - 2.0).abs() < 1e-6);
        assert!((stack.depth[1][i] - 3.0).abs() < 1e-6);
        assert_eq!(stack.depth[2][i], 0.0);
        assert!(validate_stack(&stack).is_empty());
    }

    #[test]
    fn fronto_parallel_plane_normals_face_camera() {
        let scene = Scene {
            meshes: vec![quad_mesh(0.0, 1.0, 1)],
            camera: test_camera(32),
        };
        let normals = render_normal_map(&scene).unwrap();
        let stack = peel_render(&scene, 2).unwrap();
        for (i, n) in normals.iter().enumerate() {
            if stack.depth[0][i] != 0.0 {
                assert_eq!(*n, [0.0, 0.0, -1.0]);
            }
            // consistency with the full render, texel for texel
            assert_eq!(*n, stack.normal[0][i]);
        }
    }

    #[test]
    fn empty_scene_rejected() {
        let scene = Scene {
            meshes: vec![],
            camera: test_camera(16),
        };
        assert!(matches!(peel_render(&scene, 4), Err(RenderError::EmptyScene)));
    }

    #[test]
    fn determinism_across_thread_counts() {
        let scene = Scene {
            meshes: vec![quad_mesh(0.0, 1.0, 1), quad_mesh(0.5, 0.7, 2)],
            camera: test_camera(64),
        };
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool8 = rayon::ThreadPoolBuilder::new().num_threads(8).build().unwrap();
        let a = pool1.install(|| peel_render(&scene, 4).unwrap());
        let b = pool8.install(|| peel_render(&scene, 4).unwrap());
        assert_eq!(a, b);
    }
}
