//! Wavefront OBJ load/save. Faces carry labels through material names:
//! writing emits one `usemtl label_<id>` group per face label, loading maps
//! material names back to label ids (either the `label_<id>` convention or
//! an explicit name table).

use super::IoError;
use crate::mesh::TriMesh;
use nalgebra::Vector3;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Mapping from OBJ material names to segmentation label ids.
#[derive(Debug, Clone, Default)]
pub struct ObjMaterialLabels {
    pub by_name: BTreeMap<String, u8>,
}

impl ObjMaterialLabels {
    fn resolve(&self, material: &str) -> Option<u8> {
        if let Some(&id) = self.by_name.get(material) {
            return Some(id);
        }
        material.strip_prefix("label_").and_then(|s| s.parse().ok())
    }
}

/// Write `mesh` as OBJ. When the mesh has a texture reference an MTL file
/// next to the OBJ is written with a `map_Kd` entry; per-face labels become
/// `usemtl label_<id>` groups.
pub fn save_obj(path: &Path, mesh: &TriMesh) -> Result<(), IoError> {
    let mut out = String::new();
    let mtl_name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("mesh");
    if mesh.texture.is_some() || mesh.face_labels.is_some() {
        writeln!(out, "mtllib {mtl_name}.mtl").unwrap();
    }
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v.x, v.y, v.z).unwrap();
    }
    if let Some(uv) = &mesh.uv {
        for t in uv {
            writeln!(out, "vt {} {}", t[0], t[1]).unwrap();
        }
    }
    if let Some(ns) = &mesh.normals {
        for n in ns {
            writeln!(out, "vn {} {} {}", n.x, n.y, n.z).unwrap();
        }
    }
    let has_uv = mesh.uv.is_some();
    let has_n = mesh.normals.is_some();
    let face_rec = |out: &mut String, f: &[u32; 3]| {
        out.push('f');
        for &v in f {
            let i = v + 1;
            match (has_uv, has_n) {
                (false, false) => write!(out, " {i}").unwrap(),
                (true, false) => write!(out, " {i}/{i}").unwrap(),
                (false, true) => write!(out, " {i}//{i}").unwrap(),
                (true, true) => write!(out, " {i}/{i}/{i}").unwrap(),
            }
        }
        out.push('\n');
    };
    match &mesh.face_labels {
        None => {
            if mesh.texture.is_some() {
                writeln!(out, "usemtl atlas").unwrap();
            }
            for f in &mesh.faces {
                face_rec(&mut out, f);
            }
        }
        Some(labels) => {
            let mut current: Option<u8> = None;
            for (f, &l) in mesh.faces.iter().zip(labels) {
                if current != Some(l) {
                    writeln!(out, "usemtl label_{l}").unwrap();
                    current = Some(l);
                }
                face_rec(&mut out, f);
            }
        }
    }
    fs::write(path, out).map_err(|e| IoError::file(path, e))?;

    if mesh.texture.is_some() || mesh.face_labels.is_some() {
        let mut mtl = String::new();
        let mut emit = |name: &str| {
            writeln!(mtl, "newmtl {name}").unwrap();
            writeln!(mtl, "Kd 0.8 0.8 0.8").unwrap();
            if let Some(tex) = &mesh.texture {
                writeln!(mtl, "map_Kd {tex}").unwrap();
            }
        };
        match &mesh.face_labels {
            None => emit("atlas"),
            Some(labels) => {
                let mut seen: Vec<u8> = labels.clone();
                seen.sort_unstable();
                seen.dedup();
                for l in seen {
                    emit(&format!("label_{l}"));
                }
            }
        }
        let mtl_path = path.with_extension("mtl");
        fs::write(&mtl_path, mtl).map_err(|e| IoError::file(&mtl_path, e))?;
    }
    Ok(())
}

/// Load an OBJ file. Distinct `v/vt/vn` index combinations become distinct
/// vertices. `labels` resolves material names to face labels; pass the
/// default for the `label_<id>` convention alone.
pub fn load_obj(path: &Path, labels: &ObjMaterialLabels) -> Result<TriMesh, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    let mut positions: Vec<Vector3<f64>> = Vec::new();
    let mut uvs: Vec<[f64; 2]> = Vec::new();
    let mut normals: Vec<Vector3<f64>> = Vec::new();
    let mut mesh = TriMesh::default();
    let mut face_labels: Vec<u8> = Vec::new();
    let mut any_label = false;
    let mut current_label: u8 = 0;
    let mut vertex_cache: BTreeMap<(usize, Option<usize>, Option<usize>), u32> = BTreeMap::new();
    let mut out_uv: Vec<[f64; 2]> = Vec::new();
    let mut out_n: Vec<Vector3<f64>> = Vec::new();

    let parse_f64 = |s: &str, what: &str| -> Result<f64, IoError> {
        s.parse()
            .map_err(|_| IoError::format(path, format!("bad {what}: {s:?}")))
    };

    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let x = parse_f64(it.next().unwrap_or(""), "vertex")?;
                let y = parse_f64(it.next().unwrap_or(""), "vertex")?;
                let z = parse_f64(it.next().unwrap_or(""), "vertex")?;
                positions.push(Vector3::new(x, y, z));
            }
            Some("vt") => {
                let u = parse_f64(it.next().unwrap_or(""), "uv")?;
                let v = parse_f64(it.next().unwrap_or(""), "uv")?;
                uvs.push([u, v]);
            }
            Some("vn") => {
                let x = parse_f64(it.next().unwrap_or(""), "normal")?;
                let y = parse_f64(it.next().unwrap_or(""), "normal")?;
                let z = parse_f64(it.next().unwrap_or(""), "normal")?;
                normals.push(Vector3::new(x, y, z));
            }
            Some("mtllib") => {
                // recover the texture reference from the first map_Kd entry
                if mesh.texture.is_none() {
                    if let Some(name) = it.next() {
                        let mtl_path = path.with_file_name(name);
                        if let Ok(mtl) = fs::read_to_string(&mtl_path) {
                            mesh.texture = mtl
                                .lines()
                                .filter_map(|l| l.trim().strip_prefix("map_Kd"))
                                .map(|t| t.trim().to_string())
                                .next();
                        }
                    }
                }
            }
            Some("usemtl") => {
                let name = it.next().unwrap_or("");
                if let Some(id) = labels.resolve(name) {
                    current_label = id;
                    any_label = true;
                }
            }
            Some("f") => {
                let mut idx: Vec<u32> = Vec::new();
                for rec in it {
                    let mut parts = rec.split('/');
                    let vi: usize = parts
                        .next()
                        .and_then(|s| s.parse::<i64>().ok())
                        .map(|i| (i - 1) as usize)
                        .ok_or_else(|| {
                            IoError::format(path, format!("line {}: bad face record", ln + 1))
                        })?;
                    let ti = parts
                        .next()
                        .filter(|s| !s.is_empty())
                        .and_then(|s| s.parse::<i64>().ok())
                        .map(|i| (i - 1) as usize);
                    let ni = parts
                        .next()
                        .filter(|s| !s.is_empty())
                        .and_then(|s| s.parse::<i64>().ok())
                        .map(|i| (i - 1) as usize);
                    let key = (vi, ti, ni);
                    let id = *vertex_cache.entry(key).or_insert_with(|| {
                        mesh.vertices.push(positions[vi]);
                        out_uv.push(ti.map(|t| uvs[t]).unwrap_or([0.0, 0.0]));
                        out_n.push(ni.map(|n| normals[n]).unwrap_or_else(Vector3::zeros));
                        (mesh.vertices.len() - 1) as u32
                    });
                    idx.push(id);
                }
                // fan-triangulate polygons
                for k in 1..idx.len().saturating_sub(1) {
                    mesh.faces.push([idx[0], idx[k], idx[k + 1]]);
                    face_labels.push(current_label);
                }
            }
            _ => {}
        }
    }
    if !uvs.is_empty() {
        mesh.uv = Some(out_uv);
    }
    if !normals.is_empty() {
        mesh.normals = Some(out_n);
    }
    if any_label {
        mesh.face_labels = Some(face_labels);
    }
    Ok(mesh)
}
