//! Deterministic procedural test scenes: a textured icosphere, an open
//! cylinder "skirt", a three-label mannequin, and a pair of stacked planes
//! exercising occlusion. Each fixture comes with a fixed camera placed on
//! the optical axis so every fixture fits the frame.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

use crate::camera::{PinholeCamera, Pose};
use crate::io::{load_obj, save_obj, IoError, ObjMaterialLabels};
use crate::mesh::TriMesh;
use crate::render::{Scene, SceneMesh};

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("unknown fixture '{0}' (expected sphere, cylinder_skirt, two_garment_mannequin or stacked_planes)")]
    UnknownFixture(String),
    #[error("unknown texture '{0}' (expected constant, checker or stripes)")]
    UnknownTexture(String),
    #[error("io error: {0}")]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureKind {
    Sphere,
    CylinderSkirt,
    TwoGarmentMannequin,
    StackedPlanes,
}

impl FixtureKind {
    pub fn parse(name: &str) -> Result<Self, FixtureError> {
        match name {
            "sphere" => Ok(Self::Sphere),
            "cylinder_skirt" => Ok(Self::CylinderSkirt),
            "two_garment_mannequin" => Ok(Self::TwoGarmentMannequin),
            "stacked_planes" => Ok(Self::StackedPlanes),
            other => Err(FixtureError::UnknownFixture(other.to_string())),
        }
    }

    pub const ALL: [&'static str; 4] = [
        "sphere",
        "cylinder_skirt",
        "two_garment_mannequin",
        "stacked_planes",
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextureKind {
    Constant,
    Checker,
    Stripes,
}

impl TextureKind {
    pub fn parse(name: &str) -> Result<Self, FixtureError> {
        match name {
            "constant" => Ok(Self::Constant),
            "checker" => Ok(Self::Checker),
            "stripes" => Ok(Self::Stripes),
            other => Err(FixtureError::UnknownTexture(other.to_string())),
        }
    }
}

/// Fixture camera: on-axis at z = -2.5 looking down +z, focal length equal
/// to the resolution (53 degree horizontal field of view).
pub fn fixture_camera(resolution: u32) -> PinholeCamera {
    PinholeCamera {
        width: resolution,
        height: resolution,
        fx: resolution as f64,
        fy: resolution as f64,
        cx: resolution as f64 / 2.0,
        cy: resolution as f64 / 2.0,
        pose: Pose::at(Vector3::new(0.0, 0.0, -2.5)),
        znear: 0.01,
    }
}

/// 64x64 procedural texture image for the given kind.
pub fn make_texture(kind: TextureKind) -> image::RgbImage {
    const SIZE: u32 = 64;
    let mut img = image::RgbImage::new(SIZE, SIZE);
    for y in 0..SIZE {
        for x in 0..SIZE {
            let c = match kind {
                TextureKind::Constant => [170, 96, 60],
                TextureKind::Checker => {
                    if ((x / 8) + (y / 8)) % 2 == 0 {
                        [230, 230, 230]
                    } else {
                        [40, 40, 70]
                    }
                }
                TextureKind::Stripes => {
                    if (x / 8) % 2 == 0 {
                        [255, 255, 255]
                    } else {
                        [10, 20, 30]
                    }
                }
            };
            img.put_pixel(x, y, image::Rgb(c));
        }
    }
    img
}

/// Icosphere of unit radius: 10·4^n + 2 vertices, 20·4^n faces.
pub fn icosphere(subdivisions: u32) -> TriMesh {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vector3<f64>> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .into_iter()
    .map(|(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mid = [0u32; 3];
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mid[k] = *midpoint.entry(key).or_insert_with(|| {
                    let p = (vertices[a as usize] + vertices[b as usize]).normalize();
                    vertices.push(p);
                    vertices.len() as u32 - 1
                });
            }
            next.push([f[0], mid[0], mid[2]]);
            next.push([f[1], mid[1], mid[0]]);
            next.push([f[2], mid[2], mid[1]]);
            next.push([mid[0], mid[1], mid[2]]);
        }
        faces = next;
    }
    let uv = vertices.iter().map(|p| sphere_uv(*p)).collect();
    let nf = faces.len();
    TriMesh {
        vertices,
        faces,
        uv: Some(uv),
        face_labels: Some(vec![1; nf]),
        ..TriMesh::default()
    }
}

fn sphere_uv(p: Vector3<f64>) -> [f64; 2] {
    let u = 0.5 + p.z.atan2(p.x) / std::f64::consts::TAU;
    let v = 0.5 + (p.y.clamp(-1.0, 1.0)).asin() / std::f64::consts::PI;
    [u, v]
}

/// Open (capless) cylinder wall: axis along y, welded around, so the surface
/// has exactly two boundary loops.
pub fn open_cylinder(
    radius_bottom: f64,
    radius_top: f64,
    y0: f64,
    y1: f64,
    n_theta: usize,
    n_y: usize,
    label: u8,
) -> TriMesh {
    let mut mesh = TriMesh::default();
    let mut uv = Vec::new();
    for j in 0..=n_y {
        let t = j as f64 / n_y as f64;
        let r = radius_bottom + (radius_top - radius_bottom) * t;
        let y = y0 + (y1 - y0) * t;
        for i in 0..n_theta {
            let th = i as f64 / n_theta as f64 * std::f64::consts::TAU;
            mesh.vertices.push(Vector3::new(r * th.cos(), y, r * th.sin()));
            uv.push([i as f64 / n_theta as f64, t]);
        }
    }
    let id = |i: usize, j: usize| (j * n_theta + (i % n_theta)) as u32;
    for j in 0..n_y {
        for i in 0..n_theta {
            mesh.faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
            mesh.faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
        }
    }
    mesh.uv = Some(uv);
    mesh.face_labels = Some(vec![label; mesh.faces.len()]);
    mesh
}

fn quad_plane(z: f64, half: f64, label: u8) -> TriMesh {
    TriMesh {
        vertices: vec![
            Vector3::new(-half, -half, z),
            Vector3::new(half, -half, z),
            Vector3::new(half, half, z),
            Vector3::new(-half, half, z),
        ],
        faces: vec![[0, 1, 2], [0, 2, 3]],
        uv: Some(vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]),
        face_labels: Some(vec![label; 2]),
        ..TriMesh::default()
    }
}

fn relabel(mut mesh: TriMesh, label: u8) -> TriMesh {
    mesh.face_labels = Some(vec![label; mesh.faces.len()]);
    mesh
}

/// Build a fixture scene at the given camera resolution.
pub fn make_fixture(
    kind: FixtureKind,
    resolution: u32,
    texture: TextureKind,
) -> Scene {
    let camera = fixture_camera(resolution);
    let tex = || match texture {
        TextureKind::Constant => None,
        other => Some(make_texture(other)),
    };
    let meshes = match kind {
        FixtureKind::Sphere => vec![SceneMesh {
            mesh: icosphere(4),
            texture: tex(),
            base_color: [170, 96, 60],
        }],
        FixtureKind::CylinderSkirt => vec![SceneMesh {
            mesh: open_cylinder(0.8, 0.8, -0.6, 0.6, 64, 16, 1),
            texture: tex(),
            base_color: [170, 96, 60],
        }],
        FixtureKind::TwoGarmentMannequin => {
            let mut body = icosphere(3);
            for v in &mut body.vertices {
                v.x *= 0.4;
                v.y *= 0.9;
                v.z *= 0.4;
            }
            vec![
                SceneMesh {
                    mesh: relabel(body, 1),
                    texture: tex(),
                    base_color: [200, 170, 140],
                },
                SceneMesh {
                    mesh: open_cylinder(0.5, 0.5, 0.05, 0.8, 48, 8, 2),
                    texture: tex(),
                    base_color: [60, 90, 180],
                },
                SceneMesh {
                    mesh: open_cylinder(0.62, 0.52, -0.85, -0.05, 48, 8, 3),
                    texture: tex(),
                    base_color: [150, 40, 40],
                },
            ]
        }
        FixtureKind::StackedPlanes => vec![
            SceneMesh {
                mesh: quad_plane(1.0, 0.4, 1),
                texture: tex(),
                base_color: [220, 30, 30],
            },
            SceneMesh {
                mesh: quad_plane(2.0, 0.4, 2),
                texture: tex(),
                base_color: [30, 30, 220],
            },
        ],
    };
    Scene { meshes, camera }
}

/// Write a scene as `mesh.obj` (+ MTL), optional `texture.png`, and
/// `camera.json` into `dir`.
pub fn save_scene(scene: &Scene, dir: &Path) -> Result<(), FixtureError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::file(dir, e))?;
    // merge all meshes into one labeled OBJ
    let mut merged = TriMesh::default();
    let mut uv = Vec::new();
    let mut labels = Vec::new();
    let mut texture = None;
    for sm in &scene.meshes {
        let base = merged.vertices.len() as u32;
        merged.vertices.extend_from_slice(&sm.mesh.vertices);
        match sm.mesh.uv.as_ref() {
            Some(u) => uv.extend_from_slice(u),
            None => uv.extend(std::iter::repeat([0.0; 2]).take(sm.mesh.vertices.len())),
        }
        for f in &sm.mesh.faces {
            merged.faces.push([f[0] + base, f[1] + base, f[2] + base]);
        }
        match sm.mesh.face_labels.as_ref() {
            Some(l) => labels.extend_from_slice(l),
            None => labels.extend(std::iter::repeat(1).take(sm.mesh.faces.len())),
        }
        if texture.is_none() {
            texture = sm.texture.clone();
        }
    }
    merged.uv = Some(uv);
    merged.face_labels = Some(labels);
    if let Some(img) = &texture {
        img.save(dir.join("texture.png")).map_err(|e| IoError::Image {
            path: dir.join("texture.png").display().to_string(),
            source: e,
        })?;
        merged.texture = Some("texture.png".to_string());
    }
    save_obj(&dir.join("mesh.obj"), &merged)?;
    let cam_json = serde_json::to_string_pretty(&scene.camera).expect("camera serializes");
    std::fs::write(dir.join("camera.json"), cam_json)
        .map_err(|e| IoError::file(&dir.join("camera.json"), e))?;
    Ok(())
}

/// Load a scene previously written by [`save_scene`] (or any compatible
/// OBJ + camera.json pair).
pub fn load_scene(dir: &Path) -> Result<Scene, FixtureError> {
    let cam_json = std::fs::read_to_string(dir.join("camera.json"))
        .map_err(|e| IoError::file(&dir.join("camera.json"), e))?;
    let camera: PinholeCamera =
        serde_json::from_str(&cam_json).map_err(|e| IoError::Json {
            path: "camera.json".into(),
            source: e,
        })?;
    let mesh = load_obj(&dir.join("mesh.obj"), &ObjMaterialLabels::default())?;
    let texture = match &mesh.texture {
        Some(rel) => {
            let path = dir.join(rel);
            let img = image::open(&path)
                .map_err(|e| IoError::Image {
                    path: path.display().to_string(),
                    source: e,
                })?
                .to_rgb8();
            Some(img)
        }
        None => None,
    };
    Ok(Scene {
        meshes: vec![SceneMesh {
            mesh,
            texture,
            base_color: [170, 96, 60],
        }],
        camera,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::peel_render;

    #[test]
    fn icosphere_counts_match_formula() {
        for n in 0..5u32 {
            let m = icosphere(n);
            assert_eq!(m.vertices.len(), 10 * 4usize.pow(n) + 2);
            assert_eq!(m.faces.len(), 20 * 4usize.pow(n));
        }
        let m = icosphere(4);
        assert_eq!(m.vertices.len(), 2562);
        assert_eq!(m.faces.len(), 5120);
        for v in &m.vertices {
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cylinder_skirt_has_two_boundary_loops() {
        let scene = make_fixture(FixtureKind::CylinderSkirt, 64, TextureKind::Constant);
        let loops = scene.meshes[0].mesh.boundary_loops();
        assert_eq!(loops.len(), 2);
    }

    #[test]
    fn mannequin_has_three_labels() {
        let scene = make_fixture(FixtureKind::TwoGarmentMannequin, 64, TextureKind::Constant);
        let mut histogram = BTreeMap::new();
        for sm in &scene.meshes {
            for &l in sm.mesh.face_labels.as_ref().unwrap() {
                *histogram.entry(l).or_insert(0usize) += 1;
            }
        }
        assert_eq!(histogram.len(), 3);
        assert!(histogram.keys().all(|&l| l > 0));
    }

    #[test]
    fn fixtures_render_to_valid_stacks() {
        for name in FixtureKind::ALL {
            let kind = FixtureKind::parse(name).unwrap();
            let scene = make_fixture(kind, 64, TextureKind::Checker);
            let stack = peel_render(&scene, 4).unwrap();
            assert!(stack.valid_count() > 0, "{name} rendered empty");
        }
    }

    #[test]
    fn unknown_names_rejected() {
        assert!(matches!(
            FixtureKind::parse("torus"),
            Err(FixtureError::UnknownFixture(_))
        ));
        assert!(matches!(
            TextureKind::parse("plaid"),
            Err(FixtureError::UnknownTexture(_))
        ));
    }

    #[test]
    fn scene_roundtrip_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let scene = make_fixture(FixtureKind::StackedPlanes, 64, TextureKind::Stripes);
        save_scene(&scene, dir.path()).unwrap();
        let loaded = load_scene(dir.path()).unwrap();
        let total: usize = scene.meshes.iter().map(|m| m.mesh.faces.len()).sum();
        assert_eq!(loaded.meshes[0].mesh.faces.len(), total);
        assert_eq!(loaded.camera.width, scene.camera.width);
        assert!(loaded.meshes[0].texture.is_some());
    }
}
