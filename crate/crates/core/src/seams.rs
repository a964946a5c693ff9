//! Peel-layer seam estimation: extrapolate layer tags onto fill vertices,
//! derive seams from layer-partition boundaries, and split the mesh into
//! per-layer partitions with replicated seam vertices.

use crate::mesh::{LayeredMesh, TriMesh, FILL_LAYER};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SeamError {
    #[error("every vertex is tagged FILL; nothing to extrapolate from")]
    AllVerticesFill,
}

/// One per-layer piece of the mesh, reindexed, with the map back to the
/// original vertex ids and per-vertex seam flags.
#[derive(Debug, Clone)]
pub struct Partition {
    pub submesh: TriMesh,
    pub layer: u32,
    /// Submesh vertex -> original mesh vertex.
    pub vertex_origin_map: Vec<u32>,
    pub is_seam: Vec<bool>,
}

/// Give every vertex a concrete peel layer: non-FILL vertices keep their
/// tag, FILL vertices take the layer of the nearest non-FILL vertex
/// (exact nearest, ties broken toward the lower layer index).
pub fn assign_layers(mesh: &LayeredMesh) -> Result<Vec<u32>, SeamError> {
    let anchors: Vec<(usize, u32)> = mesh
        .vertex_layer
        .iter()
        .enumerate()
        .filter_map(|(i, &l)| (l != FILL_LAYER).then_some((i, l)))
        .collect();
    if anchors.is_empty() {
        return Err(SeamError::AllVerticesFill);
    }
    let mut out = mesh.vertex_layer.clone();
    for (vi, tag) in out.iter_mut().enumerate() {
        if *tag != FILL_LAYER {
            continue;
        }
        let p = mesh.mesh.vertices[vi];
        let mut best_d2 = f64::INFINITY;
        let mut best_layer = 0u32;
        for &(ai, layer) in &anchors {
            let d2 = (mesh.mesh.vertices[ai] - p).norm_squared();
            if d2 < best_d2 || (d2 == best_d2 && layer < best_layer) {
                best_d2 = d2;
                best_layer = layer;
            }
        }
        *tag = best_layer;
    }
    Ok(out)
}

/// Derive the seam vertex set and per-face layers from per-vertex layers.
/// A face takes the minimum of its vertex layers; a vertex is a seam vertex
/// when its incident faces span at least two distinct face layers.
pub fn estimate_seams(mesh: &TriMesh, vlayer: &[u32]) -> (BTreeSet<u32>, Vec<u32>) {
    assert_eq!(vlayer.len(), mesh.vertices.len());
    let face_layer: Vec<u32> = mesh
        .faces
        .iter()
        .map(|f| f.iter().map(|&v| vlayer[v as usize]).min().unwrap())
        .collect();
    let mut incident: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for (fi, f) in mesh.faces.iter().enumerate() {
        for &v in f {
            incident.entry(v).or_default().insert(face_layer[fi]);
        }
    }
    let seams = incident
        .into_iter()
        .filter_map(|(v, layers)| (layers.len() >= 2).then_some(v))
        .collect();
    (seams, face_layer)
}

/// Split the mesh into per-layer partitions. Seam vertices are replicated
/// into every partition whose faces use them; faces are reindexed per
/// partition. Partitions with fewer than 3 faces are merged into the
/// adjacent partition sharing the longest boundary.
pub fn split_partitions(
    mesh: &TriMesh,
    face_layer: &[u32],
    seams: &BTreeSet<u32>,
) -> Vec<Partition> {
    split_partitions_with(mesh, face_layer, seams, 3)
}

/// [`split_partitions`] with an explicit minimum partition size; partitions
/// below it are folded into a neighbor. `min_faces = 0` disables folding.
pub fn split_partitions_with(
    mesh: &TriMesh,
    face_layer: &[u32],
    seams: &BTreeSet<u32>,
    min_faces: usize,
) -> Vec<Partition> {
    assert_eq!(face_layer.len(), mesh.faces.len());
    let mut face_layer = face_layer.to_vec();

    // fold tiny layers into the neighbor sharing the longest boundary
    loop {
        let mut face_count: BTreeMap<u32, usize> = BTreeMap::new();
        for &l in &face_layer {
            *face_count.entry(l).or_insert(0) += 1;
        }
        if face_count.len() <= 1 {
            break;
        }
        let Some((&tiny, _)) = face_count.iter().find(|&(_, &c)| c < min_faces) else {
            break;
        };
        // boundary length between `tiny` and each neighboring layer
        let mut edge_faces: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
        for (fi, f) in mesh.faces.iter().enumerate() {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                edge_faces.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }
        let mut shared: BTreeMap<u32, f64> = BTreeMap::new();
        for ((a, b), faces) in &edge_faces {
            let layers: BTreeSet<u32> = faces.iter().map(|&fi| face_layer[fi]).collect();
            if layers.contains(&tiny) && layers.len() > 1 {
                let len = (mesh.vertices[*a as usize] - mesh.vertices[*b as usize]).norm();
                for &l in layers.iter().filter(|&&l| l != tiny) {
                    *shared.entry(l).or_insert(0.0) += len;
                }
            }
        }
        let target = shared
            .iter()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap().then(b.0.cmp(a.0)))
            .map(|(&l, _)| l);
        let Some(target) = target else { break };
        for l in face_layer.iter_mut() {
            if *l == tiny {
                *l = target;
            }
        }
    }

    let mut layers: Vec<u32> = face_layer.to_vec();
    layers.sort_unstable();
    layers.dedup();

    let mut out = Vec::new();
    for layer in layers {
        let mut remap: BTreeMap<u32, u32> = BTreeMap::new();
        let mut sub = TriMesh::default();
        let mut origin = Vec::new();
        let mut seam_flags = Vec::new();
        for (fi, f) in mesh.faces.iter().enumerate() {
            if face_layer[fi] != layer {
                continue;
            }
            let mut g = [0u32; 3];
            for (k, &v) in f.iter().enumerate() {
                let id = *remap.entry(v).or_insert_with(|| {
                    sub.vertices.push(mesh.vertices[v as usize]);
                    origin.push(v);
                    seam_flags.push(seams.contains(&v));
                    (sub.vertices.len() - 1) as u32
                });
                g[k] = id;
            }
            sub.faces.push(g);
        }
        if sub.faces.is_empty() {
            continue;
        }
        out.push(Partition {
            submesh: sub,
            layer,
            vertex_origin_map: origin,
            is_seam: seam_flags,
        });
    }
    out
}

/// Split a partition into edge-connected components (flattening requires
/// each chart to be a single connected surface).
pub fn split_connected(p: &Partition) -> Vec<Partition> {
    let (comp, n) = p.submesh.face_components();
    if n <= 1 {
        return vec![p.clone()];
    }
    let mut out = Vec::new();
    for c in 0..n {
        let mut sub = TriMesh::default();
        let mut origin = Vec::new();
        let mut seam_flags = Vec::new();
        let mut remap: BTreeMap<u32, u32> = BTreeMap::new();
        for (fi, f) in p.submesh.faces.iter().enumerate() {
            if comp[fi] != c {
                continue;
            }
            let mut g = [0u32; 3];
            for (k, &v) in f.iter().enumerate() {
                let id = *remap.entry(v).or_insert_with(|| {
                    sub.vertices.push(p.submesh.vertices[v as usize]);
                    origin.push(p.vertex_origin_map[v as usize]);
                    seam_flags.push(p.is_seam[v as usize]);
                    (sub.vertices.len() - 1) as u32
                });
                g[k] = id;
            }
            sub.faces.push(g);
        }
        out.push(Partition {
            submesh: sub,
            layer: p.layer,
            vertex_origin_map: origin,
            is_seam: seam_flags,
        });
    }
    out
}
