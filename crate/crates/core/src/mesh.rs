//! Triangle meshes, layered meshes with peel-layer provenance, and labeled
//! point clouds, plus the small topology toolbox (boundary loops, connected
//! components, Euler characteristic) the rest of the pipeline leans on.

use nalgebra::Vector3;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Sentinel layer tag for vertices created by gap stitching rather than
/// back-projection of a peel texel.
pub const FILL_LAYER: u32 = u32::MAX;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("face {0} references out-of-range vertex index {1}")]
    IndexOutOfRange(usize, u32),
    #[error("face {0} is degenerate (repeated vertex index)")]
    DegenerateFace(usize),
    #[error("per-vertex attribute length {0} does not match vertex count {1}")]
    AttributeLength(usize, usize),
    #[error("vertex {0} normal is not unit length")]
    NonUnitNormal(usize),
}

/// Indexed triangle mesh in world coordinates (meters).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub faces: Vec<[u32; 3]>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub face_labels: Option<Vec<u8>>,
    pub uv: Option<Vec<[f64; 2]>>,
    /// Relative path of the texture image sampled through `uv`, if any.
    pub texture: Option<String>,
}

impl TriMesh {
    pub fn validate(&self) -> Result<(), MeshError> {
        let n = self.vertices.len() as u32;
        for (fi, f) in self.faces.iter().enumerate() {
            for &v in f {
                if v >= n {
                    return Err(MeshError::IndexOutOfRange(fi, v));
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(MeshError::DegenerateFace(fi));
            }
        }
        if let Some(ns) = &self.normals {
            if ns.len() != self.vertices.len() {
                return Err(MeshError::AttributeLength(ns.len(), self.vertices.len()));
            }
            for (i, nrm) in ns.iter().enumerate() {
                if (nrm.norm() - 1.0).abs() >= 1e-4 {
                    return Err(MeshError::NonUnitNormal(i));
                }
            }
        }
        if let Some(ls) = &self.face_labels {
            if ls.len() != self.faces.len() {
                return Err(MeshError::AttributeLength(ls.len(), self.faces.len()));
            }
        }
        if let Some(uv) = &self.uv {
            if uv.len() != self.vertices.len() {
                return Err(MeshError::AttributeLength(uv.len(), self.vertices.len()));
            }
        }
        Ok(())
    }

    pub fn face_points(&self, f: [u32; 3]) -> [Vector3<f64>; 3] {
        [
            self.vertices[f[0] as usize],
            self.vertices[f[1] as usize],
            self.vertices[f[2] as usize],
        ]
    }

    /// Geometric (unnormalized) face normal.
    pub fn face_normal_raw(&self, fi: usize) -> Vector3<f64> {
        let [a, b, c] = self.face_points(self.faces[fi]);
        (b - a).cross(&(c - a))
    }

    pub fn face_area(&self, fi: usize) -> f64 {
        0.5 * self.face_normal_raw(fi).norm()
    }

    pub fn bbox(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        let first = *self.vertices.first()?;
        let mut min = first;
        let mut max = first;
        for v in &self.vertices {
            min = min.inf(v);
            max = max.sup(v);
        }
        Some((min, max))
    }

    /// Bounding-box diagonal; the scene scale used by relative tolerances.
    pub fn diameter(&self) -> f64 {
        self.bbox().map(|(lo, hi)| (hi - lo).norm()).unwrap_or(0.0)
    }

    /// Undirected edges incident to exactly one face.
    pub fn boundary_edges(&self) -> Vec<(u32, u32)> {
        let mut count: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        for f in &self.faces {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                let key = (a.min(b), a.max(b));
                *count.entry(key).or_insert(0) += 1;
            }
        }
        count
            .into_iter()
            .filter_map(|(e, c)| (c == 1).then_some(e))
            .collect()
    }

    /// Chains of boundary edges, each returned as an ordered vertex list.
    /// Closed loops repeat no vertex; open chains are returned end to end.
    pub fn boundary_loops(&self) -> Vec<Vec<u32>> {
        let edges = self.boundary_edges();
        let mut adj: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for &(a, b) in &edges {
            adj.entry(a).or_default().push(b);
            adj.entry(b).or_default().push(a);
        }
        let mut used: BTreeSet<(u32, u32)> = BTreeSet::new();
        let mut loops = Vec::new();
        for &(start, _) in &edges {
            // walk each chain from its smallest unvisited vertex
            if adj[&start].iter().all(|&n| {
                used.contains(&(start.min(n), start.max(n)))
            }) {
                continue;
            }
            let mut chain = vec![start];
            let mut cur = start;
            loop {
                let next = adj[&cur]
                    .iter()
                    .copied()
                    .filter(|&n| !used.contains(&(cur.min(n), cur.max(n))))
                    .min();
                let Some(next) = next else { break };
                used.insert((cur.min(next), cur.max(next)));
                if next == start {
                    break;
                }
                chain.push(next);
                cur = next;
            }
            if chain.len() >= 2 {
                loops.push(chain);
            }
        }
        loops
    }

    /// Connected components over shared edges; returns a face -> component id
    /// map and the component count.
    pub fn face_components(&self) -> (Vec<usize>, usize) {
        let mut edge_faces: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                edge_faces.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }
        let mut comp = vec![usize::MAX; self.faces.len()];
        let mut n_comp = 0;
        for seed in 0..self.faces.len() {
            if comp[seed] != usize::MAX {
                continue;
            }
            let mut queue = vec![seed];
            comp[seed] = n_comp;
            while let Some(fi) = queue.pop() {
                let f = self.faces[fi];
                for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                    for &nf in &edge_faces[&(a.min(b), a.max(b))] {
                        if comp[nf] == usize::MAX {
                            comp[nf] = n_comp;
                            queue.push(nf);
                        }
                    }
                }
            }
            n_comp += 1;
        }
        (comp, n_comp)
    }

    /// V - E + F over vertices actually referenced by faces.
    pub fn euler_characteristic(&self) -> i64 {
        let mut verts = BTreeSet::new();
        let mut edges = BTreeSet::new();
        for f in &self.faces {
            for &v in f {
                verts.insert(v);
            }
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        verts.len() as i64 - edges.len() as i64 + self.faces.len() as i64
    }
}

/// Source texel of a back-projected vertex or point: (layer, x, y).
pub type SourcePixel = (u32, u32, u32);

/// Triangle mesh whose vertices remember which peel layer they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LayeredMesh {
    pub mesh: TriMesh,
    /// Per-vertex peel layer (1-based) or [`FILL_LAYER`].
    pub vertex_layer: Vec<u32>,
    /// Source peel texel for peel-originated vertices.
    pub vertex_source: Vec<Option<SourcePixel>>,
}

impl LayeredMesh {
    pub fn validate(&self) -> Result<(), MeshError> {
        self.mesh.validate()?;
        if self.vertex_layer.len() != self.mesh.vertices.len() {
            return Err(MeshError::AttributeLength(
                self.vertex_layer.len(),
                self.mesh.vertices.len(),
            ));
        }
        if self.vertex_source.len() != self.mesh.vertices.len() {
            return Err(MeshError::AttributeLength(
                self.vertex_source.len(),
                self.mesh.vertices.len(),
            ));
        }
        Ok(())
    }
}

/// Point cloud back-projected from a peelmap stack, with per-point
/// segmentation label, peel layer and source texel.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledPointCloud {
    pub points: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub labels: Vec<u8>,
    pub layer_ids: Vec<u32>,
    pub source_pixel: Vec<SourcePixel>,
}

impl LabeledPointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(
        &mut self,
        point: Vector3<f64>,
        normal: Vector3<f64>,
        label: u8,
        layer_id: u32,
        source: SourcePixel,
    ) {
        self.points.push(point);
        self.normals.push(normal);
        self.labels.push(label);
        self.layer_ids.push(layer_id);
        self.source_pixel.push(source);
    }
}
