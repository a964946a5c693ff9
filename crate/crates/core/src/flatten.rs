//! Free-boundary conformal flattening (least-squares conformal maps) of
//! layer partitions, cutting of non-disk partitions, and shelf packing of the
//! resulting charts into one texture atlas.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rayon::prelude::*;
use thiserror::Error;

use crate::seams::{split_connected, Partition};
use crate::sparse::{conjugate_gradient, CsrMatrix};

/// Target relative residual for the conformal least-squares solve.
pub const SOLVER_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum FlattenError {
    #[error("partition is not a topological disk (euler characteristic {chi}, {loops} boundary loops)")]
    NonDiskTopology { chi: i64, loops: usize },
    #[error("{count} flipped UV triangles after conformal solve")]
    FlippedTriangles { count: usize },
    #[error("conformal system did not converge (relative residual {residual:.3e})")]
    SolverSingular { residual: f64 },
    #[error("charts cannot fit in the atlas at any positive scale")]
    CannotFit,
}

/// One flattened partition: chart-local UV coordinates plus per-triangle
/// distortion statistics.
#[derive(Debug, Clone)]
pub struct UVChart {
    pub partition: Partition,
    /// Per-vertex chart-local UV (not yet atlas-placed).
    pub uv: Vec<[f64; 2]>,
    /// Per-triangle quasi-conformal ratio (largest / smallest singular value
    /// of the 3D->UV Jacobian); 1.0 means perfectly conformal.
    pub qc_ratio: Vec<f64>,
    /// Per-triangle |det J|: UV area per unit 3D area.
    pub area_scale: Vec<f64>,
    /// Relative residual of the normal-equation solve.
    pub solver_residual: f64,
}

impl UVChart {
    pub fn bbox(&self) -> ([f64; 2], [f64; 2]) {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for uv in &self.uv {
            for k in 0..2 {
                min[k] = min[k].min(uv[k]);
                max[k] = max[k].max(uv[k]);
            }
        }
        (min, max)
    }
}

/// Flatten one disk-topology partition with two pinned boundary vertices:
/// the boundary pair at maximal Euclidean distance goes to (0,0) and (1,0).
pub fn conformal_flatten(partition: Partition) -> Result<UVChart, FlattenError> {
    let mesh = &partition.submesh;
    let (_, n_comp) = mesh.face_components();
    let chi = mesh.euler_characteristic();
    let loops = mesh.boundary_loops().len();
    if n_comp != 1 || chi != 1 || loops == 0 {
        return Err(FlattenError::NonDiskTopology { chi, loops });
    }

    let nv = mesh.vertices.len();
    let mut boundary: BTreeSet<u32> = BTreeSet::new();
    for (a, b) in mesh.boundary_edges() {
        boundary.insert(a);
        boundary.insert(b);
    }
    let bnd: Vec<u32> = boundary.iter().copied().collect();
    // Farthest boundary pair; ties resolved toward the lowest index pair by
    // only replacing on a strictly larger distance.
    let (mut pin0, mut pin1) = (bnd[0] as usize, bnd[0] as usize);
    let mut best = -1.0;
    for i in 0..bnd.len() {
        for j in (i + 1)..bnd.len() {
            let d = (mesh.vertices[bnd[i] as usize] - mesh.vertices[bnd[j] as usize]).norm();
            if d > best {
                best = d;
                pin0 = bnd[i] as usize;
                pin1 = bnd[j] as usize;
            }
        }
    }
    if best <= 0.0 {
        return Err(FlattenError::SolverSingular { residual: f64::INFINITY });
    }
    let pin_uv = [(pin0, [0.0, 0.0]), (pin1, [1.0, 0.0])];

    // Column layout: free vertices in index order, u block then v block.
    let mut col_of = vec![usize::MAX; nv];
    let mut n_free = 0;
    for v in 0..nv {
        if v != pin0 && v != pin1 {
            col_of[v] = n_free;
            n_free += 1;
        }
    }
    let n_unknowns = 2 * n_free;

    // Two rows per triangle: real and imaginary parts of
    //   sum_i (W_i / sqrt(2 A)) (u_i + i v_i) = 0,  W_i = z_{i+2} - z_{i+1}
    // in a per-triangle isometric frame.
    let mut triplets: Vec<(usize, usize, f64)> = Vec::with_capacity(mesh.faces.len() * 12);
    let mut rhs = vec![0.0; 2 * mesh.faces.len()];
    for (fi, f) in mesh.faces.iter().enumerate() {
        let [p0, p1, p2] = mesh.face_points(*f);
        let e01 = p1 - p0;
        let n = e01.cross(&(p2 - p0));
        let double_area = n.norm();
        if double_area <= 0.0 {
            continue; // degenerate triangle contributes no constraint
        }
        let ex = e01 / e01.norm();
        let ey = (n / double_area).cross(&ex);
        let local = [
            (0.0, 0.0),
            (e01.norm(), 0.0),
            ((p2 - p0).dot(&ex), (p2 - p0).dot(&ey)),
        ];
        let s = 1.0 / (2.0 * 0.5 * double_area).sqrt();
        for i in 0..3 {
            let (xa, ya) = local[(i + 2) % 3];
            let (xb, yb) = local[(i + 1) % 3];
            let (wr, wi) = (s * (xa - xb), s * (ya - yb));
            let v = f[i] as usize;
            // real row: wr*u - wi*v ; imag row: wi*u + wr*v
            let rows = [2 * fi, 2 * fi + 1];
            if let Some(&(_, uv)) = pin_uv.iter().find(|&&(p, _)| p == v) {
                rhs[rows[0]] -= wr * uv[0] - wi * uv[1];
                rhs[rows[1]] -= wi * uv[0] + wr * uv[1];
            } else {
                let cu = col_of[v];
                let cv = n_free + col_of[v];
                triplets.push((rows[0], cu, wr));
                triplets.push((rows[0], cv, -wi));
                triplets.push((rows[1], cu, wi));
                triplets.push((rows[1], cv, wr));
            }
        }
    }

    let mut uv = vec![[0.0f64; 2]; nv];
    uv[pin0] = [0.0, 0.0];
    uv[pin1] = [1.0, 0.0];
    let mut residual = 0.0;
    if n_unknowns > 0 {
        let a = CsrMatrix::from_triplets(2 * mesh.faces.len(), n_unknowns, &triplets);
        // Normal equations A^T A x = A^T b, assembled row by row.
        let mut ata: Vec<(usize, usize, f64)> = Vec::new();
        for r in 0..a.n_rows {
            let range = a.row_ptr[r]..a.row_ptr[r + 1];
            for j in range.clone() {
                for k in range.clone() {
                    ata.push((a.col_idx[j], a.col_idx[k], a.values[j] * a.values[k]));
                }
            }
        }
        let ata = CsrMatrix::from_triplets(n_unknowns, n_unknowns, &ata);
        let atb = a.matvec_transpose(&rhs);
        let out = conjugate_gradient(&ata, &atb, SOLVER_TOLERANCE, 40 * n_unknowns + 200);
        residual = out.rel_residual;
        if !residual.is_finite() || residual > SOLVER_TOLERANCE {
            return Err(FlattenError::SolverSingular { residual });
        }
        for v in 0..nv {
            if col_of[v] != usize::MAX {
                uv[v] = [out.x[col_of[v]], out.x[n_free + col_of[v]]];
            }
        }
    }
    if uv.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(FlattenError::SolverSingular { residual });
    }

    // If the whole chart came out mirrored, reflect across the pin axis
    // (v = 0), which keeps both pins in place.
    let total_signed: f64 = mesh.faces.iter().map(|f| uv_signed_area(&uv, f)).sum();
    if total_signed < 0.0 {
        for p in &mut uv {
            p[1] = -p[1];
        }
    }
    let flipped = mesh
        .faces
        .iter()
        .enumerate()
        .filter(|(fi, f)| mesh.face_area(*fi) > 0.0 && uv_signed_area(&uv, f) <= 0.0)
        .count();
    if flipped > 0 {
        return Err(FlattenError::FlippedTriangles { count: flipped });
    }

    let mut qc_ratio = Vec::with_capacity(mesh.faces.len());
    let mut area_scale = Vec::with_capacity(mesh.faces.len());
    for (fi, f) in mesh.faces.iter().enumerate() {
        let (qc, det) = triangle_distortion(mesh, &uv, fi, f);
        qc_ratio.push(qc);
        area_scale.push(det);
    }

    Ok(UVChart {
        partition,
        uv,
        qc_ratio,
        area_scale,
        solver_residual: residual,
    })
}

fn uv_signed_area(uv: &[[f64; 2]], f: &[u32; 3]) -> f64 {
    let a = uv[f[0] as usize];
    let b = uv[f[1] as usize];
    let c = uv[f[2] as usize];
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

/// Quasi-conformal ratio (sigma_max / sigma_min) and |det| of the 2x2
/// Jacobian of the map from the triangle's isometric 3D frame to UV.
fn triangle_distortion(
    mesh: &crate::mesh::TriMesh,
    uv: &[[f64; 2]],
    fi: usize,
    f: &[u32; 3],
) -> (f64, f64) {
    let [p0, p1, p2] = mesh.face_points(*f);
    let e01 = p1 - p0;
    let n = e01.cross(&(p2 - p0));
    if n.norm() <= 0.0 {
        return (1.0, 0.0);
    }
    let ex = e01 / e01.norm();
    let ey = (n / n.norm()).cross(&ex);
    let l = [
        [e01.norm(), (p2 - p0).dot(&ex)],
        [0.0, (p2 - p0).dot(&ey)],
    ];
    let u0 = uv[f[0] as usize];
    let du = [
        [uv[f[1] as usize][0] - u0[0], uv[f[2] as usize][0] - u0[0]],
        [uv[f[1] as usize][1] - u0[1], uv[f[2] as usize][1] - u0[1]],
    ];
    let det_l = l[0][0] * l[1][1] - l[0][1] * l[1][0];
    if det_l == 0.0 {
        return (1.0, 0.0);
    }
    let inv = [
        [l[1][1] / det_l, -l[0][1] / det_l],
        [-l[1][0] / det_l, l[0][0] / det_l],
    ];
    let j = [
        [
            du[0][0] * inv[0][0] + du[0][1] * inv[1][0],
            du[0][0] * inv[0][1] + du[0][1] * inv[1][1],
        ],
        [
            du[1][0] * inv[0][0] + du[1][1] * inv[1][0],
            du[1][0] * inv[0][1] + du[1][1] * inv[1][1],
        ],
    ];
    let (a, b, c, d) = (j[0][0], j[0][1], j[1][0], j[1][1]);
    let q = ((a + d) * (a + d) + (b - c) * (b - c)).sqrt();
    let r = ((a - d) * (a - d) + (b + c) * (b + c)).sqrt();
    let s1 = 0.5 * (q + r);
    let s2 = 0.5 * (q - r).abs();
    let _ = fi;
    (if s2 > 0.0 { s1 / s2 } else { f64::INFINITY }, (a * d - b * c).abs())
}

/// Flatten many partitions in parallel, preserving order.
pub fn flatten_partitions(parts: Vec<Partition>) -> Result<Vec<UVChart>, FlattenError> {
    parts
        .into_par_iter()
        .map(conformal_flatten)
        .collect::<Result<Vec<_>, _>>()
}

// ---------------------------------------------------------------------------
// Cutting non-disk partitions to disks

/// Cut a partition into disk-topology pieces. Cut and duplicated vertices are
/// flagged in `is_seam`; existing vertices are never moved.
pub fn cut_to_disk(p: &Partition) -> Result<Vec<Partition>, FlattenError> {
    let mut queue: Vec<Partition> = split_connected(p);
    let mut done = Vec::new();
    let mut budget = 64 * queue.len().max(1);
    while let Some(part) = queue.pop() {
        if part.submesh.faces.is_empty() {
            continue;
        }
        let chi = part.submesh.euler_characteristic();
        let loops = part.submesh.boundary_loops();
        if chi == 1 && !loops.is_empty() {
            done.push(part);
            continue;
        }
        if budget == 0 {
            return Err(FlattenError::NonDiskTopology {
                chi,
                loops: loops.len(),
            });
        }
        budget -= 1;
        let cut = choose_cut(&part, &loops);
        let cut_part = apply_cut(&part, &cut);
        queue.extend(split_connected(&cut_part));
    }
    // deterministic order: by layer, then by first original vertex id
    done.sort_by_key(|p| (p.layer, p.vertex_origin_map.first().copied().unwrap_or(0)));
    Ok(done)
}

/// Pick a set of edges whose cut strictly simplifies the topology.
fn choose_cut(part: &Partition, loops: &[Vec<u32>]) -> BTreeSet<(u32, u32)> {
    let mesh = &part.submesh;
    let mut adj: BTreeMap<u32, BTreeSet<u32>> = BTreeMap::new();
    for f in &mesh.faces {
        for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
            adj.entry(a).or_default().insert(b);
            adj.entry(b).or_default().insert(a);
        }
    }
    let mut cut = BTreeSet::new();
    if loops.is_empty() {
        // Closed surface: open a two-edge slit u - v - w so the middle vertex
        // duplicates and a boundary appears.
        let (&v, nbrs) = adj.iter().find(|(_, n)| n.len() >= 2).expect("no edges");
        let mut it = nbrs.iter();
        let u = *it.next().unwrap();
        let w = *it.next().unwrap();
        cut.insert(edge_key(u, v));
        cut.insert(edge_key(v, w));
        return cut;
    }
    if loops.len() >= 2 {
        // Join two boundary loops along a shortest edge path.
        let mut loop_of: BTreeMap<u32, usize> = BTreeMap::new();
        for (li, l) in loops.iter().enumerate() {
            for &v in l {
                loop_of.insert(v, li);
            }
        }
        let mut prev: BTreeMap<u32, u32> = BTreeMap::new();
        let mut q = VecDeque::new();
        for &v in &loops[0] {
            prev.insert(v, v);
            q.push_back(v);
        }
        while let Some(v) = q.pop_front() {
            if loop_of.get(&v).is_some_and(|&l| l != 0) {
                let mut cur = v;
                while prev[&cur] != cur {
                    let p = prev[&cur];
                    cut.insert(edge_key(cur, p));
                    cur = p;
                }
                return cut;
            }
            for &w in &adj[&v] {
                if !prev.contains_key(&w) {
                    prev.insert(w, v);
                    q.push_back(w);
                }
            }
        }
        // fall through to the generic handle cut if the loops are somehow
        // disconnected (cannot happen for a connected mesh)
    }
    // One boundary loop but genus > 0: cut the cycle formed by the smallest
    // non-tree interior edge plus the spanning-tree path between its ends.
    let boundary: BTreeSet<(u32, u32)> = mesh.boundary_edges().into_iter().collect();
    let root = *adj.keys().next().unwrap();
    let mut parent: BTreeMap<u32, u32> = BTreeMap::new();
    parent.insert(root, root);
    let mut q = VecDeque::from([root]);
    let mut tree: BTreeSet<(u32, u32)> = BTreeSet::new();
    while let Some(v) = q.pop_front() {
        for &w in &adj[&v] {
            if !parent.contains_key(&w) {
                parent.insert(w, v);
                tree.insert(edge_key(v, w));
                q.push_back(w);
            }
        }
    }
    let extra = adj
        .iter()
        .flat_map(|(&a, ns)| ns.iter().map(move |&b| edge_key(a, b)))
        .find(|e| !tree.contains(e) && !boundary.contains(e))
        .expect("non-disk surface must have a non-tree interior edge");
    cut.insert(extra);
    // walk both endpoints up to their common ancestor
    let path_to_root = |mut v: u32| {
        let mut path = vec![v];
        while parent[&v] != v {
            v = parent[&v];
            path.push(v);
        }
        path
    };
    let pa = path_to_root(extra.0);
    let pb = path_to_root(extra.1);
    let on_b: BTreeSet<u32> = pb.iter().copied().collect();
    let anchor = *pa.iter().find(|v| on_b.contains(v)).unwrap();
    for path in [&pa, &pb] {
        for win in path.windows(2) {
            cut.insert(edge_key(win[0], win[1]));
            if win[1] == anchor {
                break;
            }
        }
    }
    cut
}

fn edge_key(a: u32, b: u32) -> (u32, u32) {
    (a.min(b), a.max(b))
}

/// Duplicate vertices along the cut edges: at each cut vertex, faces are
/// grouped into fans separated by cut edges, and every fan past the first
/// gets its own copy of the vertex.
fn apply_cut(part: &Partition, cut: &BTreeSet<(u32, u32)>) -> Partition {
    let mut out = part.clone();
    let mesh = &mut out.submesh;
    let cut_verts: BTreeSet<u32> = cut.iter().flat_map(|&(a, b)| [a, b]).collect();
    for &v in &cut_verts {
        let incident: Vec<usize> = mesh
            .faces
            .iter()
            .enumerate()
            .filter_map(|(fi, f)| f.contains(&v).then_some(fi))
            .collect();
        // union-find over incident faces joined through non-cut edges at v
        let mut rep: Vec<usize> = (0..incident.len()).collect();
        fn find(rep: &mut Vec<usize>, i: usize) -> usize {
            if rep[i] != i {
                let r = find(rep, rep[i]);
                rep[i] = r;
            }
            rep[i]
        }
        let mut edge_faces: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
        for (slot, &fi) in incident.iter().enumerate() {
            let f = mesh.faces[fi];
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                if a == v || b == v {
                    let other = if a == v { b } else { a };
                    if other != v {
                        edge_faces.entry(edge_key(v, other)).or_default().push(slot);
                    }
                }
            }
        }
        for (e, slots) in &edge_faces {
            if cut.contains(e) {
                continue;
            }
            for w in slots.windows(2) {
                let (a, b) = (find(&mut rep, w[0]), find(&mut rep, w[1]));
                if a != b {
                    rep[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for slot in 0..incident.len() {
            let r = find(&mut rep, slot);
            groups.entry(r).or_default().push(slot);
        }
        out.is_seam[v as usize] = true;
        for (gi, (_, slots)) in groups.iter().enumerate() {
            if gi == 0 {
                continue; // first fan keeps the original vertex
            }
            let new_id = mesh.vertices.len() as u32;
            mesh.vertices.push(mesh.vertices[v as usize]);
            if let Some(n) = mesh.normals.as_mut() {
                n.push(n[v as usize]);
            }
            if let Some(uv) = mesh.uv.as_mut() {
                uv.push(uv[v as usize]);
            }
            out.vertex_origin_map.push(out.vertex_origin_map[v as usize]);
            out.is_seam.push(true);
            for &slot in slots {
                for vv in mesh.faces[incident[slot]].iter_mut() {
                    if *vv == v {
                        *vv = new_id;
                    }
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Atlas packing

#[derive(Debug, Clone)]
pub struct PlacedChart {
    pub chart: UVChart,
    /// Uniform scale from chart-local UV to atlas UV (shared by all charts).
    pub scale: f64,
    /// Atlas position of the chart's (scaled) bounding-box minimum.
    pub translation: [f64; 2],
    /// Per-vertex UV in atlas coordinates.
    pub uv_atlas: Vec<[f64; 2]>,
}

impl PlacedChart {
    /// Chart bounding box in atlas coordinates (without gutter dilation).
    pub fn atlas_bbox(&self) -> ([f64; 2], [f64; 2]) {
        let (min, max) = self.chart.bbox();
        (
            self.translation,
            [
                self.translation[0] + (max[0] - min[0]) * self.scale,
                self.translation[1] + (max[1] - min[1]) * self.scale,
            ],
        )
    }
}

#[derive(Debug, Clone)]
pub struct UVAtlas {
    pub resolution: u32,
    pub gutter: u32,
    pub charts: Vec<PlacedChart>,
}

/// Shelf-pack charts into [0,1]^2 by descending bounding-box height, with a
/// single global scale maximized by bisection. A gutter margin (in texels)
/// keeps dilated chart boxes pairwise disjoint.
pub fn pack_atlas(
    charts: Vec<UVChart>,
    resolution: u32,
    gutter: u32,
) -> Result<UVAtlas, FlattenError> {
    assert!(resolution >= 16, "atlas resolution must be >= 16");
    assert!(gutter >= 1, "gutter must be >= 1 texel");
    if charts.is_empty() {
        return Ok(UVAtlas {
            resolution,
            gutter,
            charts: Vec::new(),
        });
    }
    let g = gutter as f64 / resolution as f64;
    let sizes: Vec<[f64; 2]> = charts
        .iter()
        .map(|c| {
            let (min, max) = c.bbox();
            [(max[0] - min[0]).max(1e-12), (max[1] - min[1]).max(1e-12)]
        })
        .collect();
    let mut order: Vec<usize> = (0..charts.len()).collect();
    order.sort_by(|&a, &b| {
        sizes[b][1]
            .partial_cmp(&sizes[a][1])
            .unwrap()
            .then(a.cmp(&b))
    });

    // Shelf placement of gutter-padded cells at scale s; None if it overflows.
    let place = |s: f64| -> Option<Vec<[f64; 2]>> {
        let mut pos = vec![[0.0; 2]; charts.len()];
        let (mut x, mut y, mut shelf_h) = (0.0f64, 0.0f64, 0.0f64);
        for &i in &order {
            let cw = sizes[i][0] * s + 2.0 * g;
            let ch = sizes[i][1] * s + 2.0 * g;
            if cw > 1.0 + 1e-12 {
                return None;
            }
            if x + cw > 1.0 + 1e-12 {
                y += shelf_h;
                x = 0.0;
                shelf_h = 0.0;
            }
            if y + ch > 1.0 + 1e-12 {
                return None;
            }
            pos[i] = [x + g, y + g];
            x += cw;
            shelf_h = shelf_h.max(ch);
        }
        Some(pos)
    };

    if place(0.0).is_none() {
        return Err(FlattenError::CannotFit);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while place(hi).is_some() {
        lo = hi;
        hi *= 2.0;
        if hi > 1e9 {
            break;
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if place(mid).is_some() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let scale = lo;
    let positions = place(scale).expect("bisection lower bound must fit");

    let placed = charts
        .into_iter()
        .enumerate()
        .map(|(i, chart)| {
            let (min, _) = chart.bbox();
            let translation = positions[i];
            let uv_atlas = chart
                .uv
                .iter()
                .map(|p| {
                    [
                        (p[0] - min[0]) * scale + translation[0],
                        (p[1] - min[1]) * scale + translation[1],
                    ]
                })
                .collect();
            PlacedChart {
                chart,
                scale,
                translation,
                uv_atlas,
            }
        })
        .collect();
    Ok(UVAtlas {
        resolution,
        gutter,
        charts: placed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::TriMesh;
    use nalgebra::Vector3;

    fn partition_of(mesh: TriMesh) -> Partition {
        let nv = mesh.vertices.len();
        Partition {
            submesh: mesh,
            layer: 1,
            vertex_origin_map: (0..nv as u32).collect(),
            is_seam: vec![false; nv],
        }
    }

    fn angles_3d(mesh: &TriMesh, fi: usize) -> [f64; 3] {
        let [a, b, c] = mesh.face_points(mesh.faces[fi]);
        let ang = |p: Vector3<f64>, q: Vector3<f64>, r: Vector3<f64>| {
            ((q - p).normalize().dot(&(r - p).normalize())).clamp(-1.0, 1.0).acos()
        };
        [ang(a, b, c), ang(b, c, a), ang(c, a, b)]
    }

    fn angles_uv(uv: &[[f64; 2]], f: [u32; 3]) -> [f64; 3] {
        let p = |i: usize| {
            let v = uv[f[i] as usize];
            Vector3::new(v[0], v[1], 0.0)
        };
        let ang = |a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>| {
            ((b - a).normalize().dot(&(c - a).normalize())).clamp(-1.0, 1.0).acos()
        };
        [
            ang(p(0), p(1), p(2)),
            ang(p(1), p(2), p(0)),
            ang(p(2), p(0), p(1)),
        ]
    }

    #[test]
    fn single_triangle_is_similarity() {
        let mesh = TriMesh {
            vertices: vec![
                Vector3::new(0.3, -0.2, 1.1),
                Vector3::new(1.4, 0.5, 0.7),
                Vector3::new(0.1, 1.2, 2.0),
            ],
            faces: vec![[0, 1, 2]],
            ..TriMesh::default()
        };
        let chart = conformal_flatten(partition_of(mesh)).unwrap();
        assert!((chart.qc_ratio[0] - 1.0).abs() < 1e-9);
        assert!(chart.solver_residual <= SOLVER_TOLERANCE);
    }

    fn grid_mesh(n: usize, map: impl Fn(f64, f64) -> Vector3<f64>) -> TriMesh {
        let mut mesh = TriMesh::default();
        for j in 0..=n {
            for i in 0..=n {
                mesh.vertices
                    .push(map(i as f64 / n as f64, j as f64 / n as f64));
            }
        }
        let id = |i: usize, j: usize| (j * (n + 1) + i) as u32;
        for j in 0..n {
            for i in 0..n {
                mesh.faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                mesh.faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        mesh
    }

    #[test]
    fn planar_patch_preserves_angles() {
        // a tilted plane: developable, so flattening is an isometry up to scale
        let mesh = grid_mesh(5, |u, v| Vector3::new(u, v, 0.5 * u + 0.25 * v));
        let chart = conformal_flatten(partition_of(mesh.clone())).unwrap();
        let mut max_err: f64 = 0.0;
        for fi in 0..mesh.faces.len() {
            let a3 = angles_3d(&mesh, fi);
            let a2 = angles_uv(&chart.uv, mesh.faces[fi]);
            for k in 0..3 {
                max_err = max_err.max((a3[k] - a2[k]).abs());
            }
        }
        assert!(max_err < 1e-6, "max angle error {max_err}");
    }

    fn open_cylinder(n_theta: usize, n_z: usize) -> TriMesh {
        // wall split along one generator: theta columns are not welded
        grid_mesh_rect(n_theta, n_z, |u, v| {
            let th = u * std::f64::consts::TAU;
            Vector3::new(th.cos(), th.sin(), v * 2.0)
        })
    }

    fn grid_mesh_rect(nx: usize, ny: usize, map: impl Fn(f64, f64) -> Vector3<f64>) -> TriMesh {
        let mut mesh = TriMesh::default();
        for j in 0..=ny {
            for i in 0..=nx {
                mesh.vertices
                    .push(map(i as f64 / nx as f64, j as f64 / ny as f64));
            }
        }
        let id = |i: usize, j: usize| (j * (nx + 1) + i) as u32;
        for j in 0..ny {
            for i in 0..nx {
                mesh.faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                mesh.faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        mesh
    }

    #[test]
    fn cylinder_wall_is_nearly_conformal() {
        let mesh = open_cylinder(48, 16);
        let chart = conformal_flatten(partition_of(mesh)).unwrap();
        let mut qc = chart.qc_ratio.clone();
        qc.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let p90 = qc[(qc.len() as f64 * 0.9) as usize];
        assert!(p90 <= 1.05, "p90 quasi-conformal ratio {p90}");
        assert!(chart.solver_residual <= SOLVER_TOLERANCE);
    }

    fn tetrahedron() -> TriMesh {
        TriMesh {
            vertices: vec![
                Vector3::new(0.0, 0.0, 0.0),
                Vector3::new(1.0, 0.0, 0.0),
                Vector3::new(0.0, 1.0, 0.0),
                Vector3::new(0.0, 0.0, 1.0),
            ],
            faces: vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
            ..TriMesh::default()
        }
    }

    #[test]
    fn closed_surface_is_rejected() {
        let err = conformal_flatten(partition_of(tetrahedron())).unwrap_err();
        assert!(matches!(err, FlattenError::NonDiskTopology { .. }));
    }

    #[test]
    fn cut_opens_closed_surface() {
        let parts = cut_to_disk(&partition_of(tetrahedron())).unwrap();
        let total_faces: usize = parts.iter().map(|p| p.submesh.faces.len()).sum();
        assert_eq!(total_faces, 4);
        for p in parts {
            assert_eq!(p.submesh.euler_characteristic(), 1);
            assert!(p.is_seam.iter().any(|&s| s));
            conformal_flatten(p).unwrap();
        }
    }

    #[test]
    fn cut_opens_welded_tube() {
        // weld the generator line of the cylinder so it becomes a true tube
        // with two boundary loops and chi = 0
        let n = 16;
        let mut mesh = TriMesh::default();
        for j in 0..=4usize {
            for i in 0..n {
                let th = i as f64 / n as f64 * std::f64::consts::TAU;
                mesh.vertices
                    .push(Vector3::new(th.cos(), th.sin(), j as f64 * 0.5));
            }
        }
        let id = |i: usize, j: usize| (j * n + (i % n)) as u32;
        for j in 0..4usize {
            for i in 0..n {
                mesh.faces.push([id(i, j), id(i + 1, j), id(i + 1, j + 1)]);
                mesh.faces.push([id(i, j), id(i + 1, j + 1), id(i, j + 1)]);
            }
        }
        assert_eq!(mesh.euler_characteristic(), 0);
        let parts = cut_to_disk(&partition_of(mesh)).unwrap();
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[0].submesh.euler_characteristic(), 1);
        let chart = conformal_flatten(parts[0].clone()).unwrap();
        let mut qc = chart.qc_ratio.clone();
        qc.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!(qc[(qc.len() as f64 * 0.9) as usize] <= 1.05);
    }

    #[test]
    fn deterministic_uv() {
        let mesh = open_cylinder(24, 8);
        let a = conformal_flatten(partition_of(mesh.clone())).unwrap();
        let b = conformal_flatten(partition_of(mesh)).unwrap();
        assert_eq!(a.uv, b.uv);
    }

    fn square_chart(side: f64) -> UVChart {
        let mesh = grid_mesh(1, |u, v| Vector3::new(u * side, v * side, 0.0));
        conformal_flatten(partition_of(mesh)).unwrap()
    }

    #[test]
    fn one_square_chart_fills_atlas() {
        let atlas = pack_atlas(vec![square_chart(1.0)], 256, 4).unwrap();
        let g = 4.0 / 256.0;
        let (min, max) = atlas.charts[0].atlas_bbox();
        assert!((min[0] - g).abs() < 1e-9 && (min[1] - g).abs() < 1e-9);
        assert!((max[0] - (1.0 - g)).abs() < 1e-6 || (max[1] - (1.0 - g)).abs() < 1e-6);
        assert!(max[0] <= 1.0 - g + 1e-9 && max[1] <= 1.0 - g + 1e-9);
    }

    #[test]
    fn two_identical_charts_disjoint() {
        let atlas = pack_atlas(vec![square_chart(1.0), square_chart(1.0)], 256, 4).unwrap();
        assert_eq!(atlas.charts[0].scale, atlas.charts[1].scale);
        let g = 4.0 / 256.0;
        let (amin, amax) = atlas.charts[0].atlas_bbox();
        let (bmin, bmax) = atlas.charts[1].atlas_bbox();
        let disjoint_x = amax[0] + 2.0 * g <= bmin[0] + 1e-9 || bmax[0] + 2.0 * g <= amin[0] + 1e-9;
        let disjoint_y = amax[1] + 2.0 * g <= bmin[1] + 1e-9 || bmax[1] + 2.0 * g <= amin[1] + 1e-9;
        assert!(disjoint_x || disjoint_y);
        for c in &atlas.charts {
            let (min, max) = c.atlas_bbox();
            assert!(min[0] >= g - 1e-9 && min[1] >= g - 1e-9);
            assert!(max[0] <= 1.0 - g + 1e-9 && max[1] <= 1.0 - g + 1e-9);
        }
    }

    #[test]
    fn packing_efficiency_reasonable() {
        // eight charts of varying aspect; utilization of chart bboxes vs the
        // unit square should clear 40%
        let mut charts = Vec::new();
        for k in 0..8 {
            let s = 0.5 + 0.1 * k as f64;
            charts.push(square_chart(s));
        }
        let atlas = pack_atlas(charts, 512, 2).unwrap();
        let used: f64 = atlas
            .charts
            .iter()
            .map(|c| {
                let (min, max) = c.atlas_bbox();
                (max[0] - min[0]) * (max[1] - min[1])
            })
            .sum();
        assert!(used >= 0.40, "utilization {used}");
    }
}
