//! Axis-aligned BVH over triangles: multi-hit ray casting for the peel
//! renderer and exact closest-point queries for the P2S metric.
//!
//! Median split on the longest centroid axis, leaves hold at most 8
//! triangles. Construction and traversal are fully deterministic.

use crate::mesh::TriMesh;
use nalgebra::Vector3;

const LEAF_SIZE: usize = 8;

#[derive(Debug, Clone, Copy)]
struct Aabb {
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl Aabb {
    fn empty() -> Self {
        Self {
            min: Vector3::repeat(f64::INFINITY),
            max: Vector3::repeat(f64::NEG_INFINITY),
        }
    }

    fn grow(&mut self, p: Vector3<f64>) {
        self.min = self.min.inf(&p);
        self.max = self.max.sup(&p);
    }

    /// Slab test; returns the entry parameter interval if the ray hits.
    fn intersect_ray(&self, origin: Vector3<f64>, inv_dir: Vector3<f64>) -> Option<(f64, f64)> {
        let mut tmin = f64::NEG_INFINITY;
        let mut tmax = f64::INFINITY;
        for a in 0..3 {
            let t0 = (self.min[a] - origin[a]) * inv_dir[a];
            let t1 = (self.max[a] - origin[a]) * inv_dir[a];
            let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
            tmin = tmin.max(lo);
            tmax = tmax.min(hi);
            if tmin > tmax {
                return None;
            }
        }
        Some((tmin, tmax))
    }

    /// Squared distance from a point to this box (0 inside).
    fn dist2(&self, p: Vector3<f64>) -> f64 {
        let mut d2 = 0.0;
        for a in 0..3 {
            let d = (self.min[a] - p[a]).max(0.0).max(p[a] - self.max[a]);
            d2 += d * d;
        }
        d2
    }
}

struct Node {
    aabb: Aabb,
    /// Leaf: start index into `order`, internal: left child index.
    index: u32,
    /// Internal: right child index, unused for leaves.
    right: u32,
    /// Leaf: triangle count, internal: 0.
    len: u32,
}

/// One ray–triangle intersection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Ray parameter (camera-space depth when the ray direction has unit Z).
    pub t: f64,
    pub face: u32,
    /// Barycentric coordinates of the hit w.r.t. the face's 2nd and 3rd vertex.
    pub u: f64,
    pub v: f64,
}

pub struct Bvh {
    nodes: Vec<Node>,
    order: Vec<u32>,
    tris: Vec<[Vector3<f64>; 3]>,
}

impl Bvh {
    pub fn build(mesh: &TriMesh) -> Self {
        let tris: Vec<[Vector3<f64>; 3]> =
            mesh.faces.iter().map(|&f| mesh.face_points(f)).collect();
        let centroids: Vec<Vector3<f64>> =
            tris.iter().map(|t| (t[0] + t[1] + t[2]) / 3.0).collect();
        let mut order: Vec<u32> = (0..tris.len() as u32).collect();
        let mut nodes = Vec::new();
        if !tris.is_empty() {
            Self::split(&tris, &centroids, &mut order, 0, tris.len(), &mut nodes);
        }
        Self { nodes, order, tris }
    }

    fn leaf_aabb(tris: &[[Vector3<f64>; 3]], order: &[u32], lo: usize, hi: usize) -> Aabb {
        let mut aabb = Aabb::empty();
        for &ti in &order[lo..hi] {
            for p in &tris[ti as usize] {
                aabb.grow(*p);
            }
        }
        aabb
    }

    fn split(
        tris: &[[Vector3<f64>; 3]],
        centroids: &[Vector3<f64>],
        order: &mut [u32],
        lo: usize,
        hi: usize,
        nodes: &mut Vec<Node>,
    ) -> usize {
        let node_idx = nodes.len();
        let aabb = Self::leaf_aabb(tris, order, lo, hi);
        if hi - lo <= LEAF_SIZE {
            nodes.push(Node {
                aabb,
                index: lo as u32,
                right: 0,
                len: (hi - lo) as u32,
            });
            return node_idx;
        }
        // longest axis of the centroid bounds
        let mut cbox = Aabb::empty();
        for &ti in &order[lo..hi] {
            cbox.grow(centroids[ti as usize]);
        }
        let ext = cbox.max - cbox.min;
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = lo + (hi - lo) / 2;
        order[lo..hi].select_nth_unstable_by(mid - lo, |&a, &b| {
            centroids[a as usize][axis]
                .partial_cmp(&centroids[b as usize][axis])
                .unwrap()
                .then(a.cmp(&b))
        });
        nodes.push(Node {
            aabb,
            index: 0,
            right: 0,
            len: 0,
        });
        let left = Self::split(tris, centroids, order, lo, mid, nodes);
        let right = Self::split(tris, centroids, order, mid, hi, nodes);
        nodes[node_idx].index = left as u32;
        nodes[node_idx].right = right as u32;
        node_idx
    }

    /// Collect every intersection with ray parameter t > tmin, sorted
    /// ascending by t; ties broken by face index.
    pub fn all_hits(&self, origin: Vector3<f64>, dir: Vector3<f64>, tmin: f64) -> Vec<Hit> {
        let mut hits = Vec::new();
        if self.nodes.is_empty() {
            return hits;
        }
        let inv_dir = Vector3::new(1.0 / dir.x, 1.0 / dir.y, 1.0 / dir.z);
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            let Some((t0, t1)) = node.aabb.intersect_ray(origin, inv_dir) else {
                continue;
            };
            if t1 < tmin && t0 < tmin {
                continue;
            }
            if node.len > 0 {
                for &ti in &self.order[node.index as usize..(node.index + node.len) as usize] {
                    if let Some(hit) = ray_triangle(origin, dir, &self.tris[ti as usize], ti, tmin)
                    {
                        hits.push(hit);
                    }
                }
            } else {
                stack.push(node.index as usize);
                stack.push(node.right as usize);
            }
        }
        hits.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap().then(a.face.cmp(&b.face)));
        hits
    }

    /// Exact minimum distance from `p` to the triangle set, with the
    /// closest surface point and face.
    pub fn closest_point(&self, p: Vector3<f64>) -> Option<(f64, Vector3<f64>, u32)> {
        if self.nodes.is_empty() {
            return None;
        }
        let mut best: Option<(f64, Vector3<f64>, u32)> = None;
        let mut stack = vec![0usize];
        while let Some(ni) = stack.pop() {
            let node = &self.nodes[ni];
            if let Some((bd, _, _)) = best {
                if node.aabb.dist2(p) >= bd * bd {
                    continue;
                }
            }
            if node.len > 0 {
                for &ti in &self.order[node.index as usize..(node.index + node.len) as usize] {
                    let q = closest_point_triangle(p, &self.tris[ti as usize]);
                    let d = (q - p).norm();
                    let better = match best {
                        None => true,
                        Some((bd, _, bf)) => d < bd || (d == bd && ti < bf),
                    };
                    if better {
                        best = Some((d, q, ti));
                    }
                }
            } else {
                let left = node.index as usize;
                let right = node.right as usize;
                // visit the nearer child first
                let dl = self.nodes[left].aabb.dist2(p);
                let dr = self.nodes[right].aabb.dist2(p);
                if dl <= dr {
                    stack.push(right);
                    stack.push(left);
                } else {
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
        best
    }
}

/// Moller-Trumbore with inclusive edge handling so rays hitting a shared
/// edge register on both triangles (the renderer deduplicates by t).
fn ray_triangle(
    origin: Vector3<f64>,
    dir: Vector3<f64>,
    tri: &[Vector3<f64>; 3],
    face: u32,
    tmin: f64,
) -> Option<Hit> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let pvec = dir.cross(&e2);
    let det = e1.dot(&pvec);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv_det = 1.0 / det;
    let tvec = origin - tri[0];
    let u = tvec.dot(&pvec) * inv_det;
    if !(-1e-12..=1.0 + 1e-12).contains(&u) {
        return None;
    }
    let qvec = tvec.cross(&e1);
    let v = dir.dot(&qvec) * inv_det;
    if v < -1e-12 || u + v > 1.0 + 1e-12 {
        return None;
    }
    let t = e2.dot(&qvec) * inv_det;
    (t > tmin).then_some(Hit { t, face, u, v })
}

/// Exact closest point on a triangle (Ericson, Real-Time Collision
/// Detection, 5.1.5).
pub fn closest_point_triangle(p: Vector3<f64>, tri: &[Vector3<f64>; 3]) -> Vector3<f64> {
    let [a, b, c] = *tri;
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}
