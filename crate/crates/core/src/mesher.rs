//! Zero-level extraction: marching cubes in 3D and marching squares in 2D.
//!
//! Each cell is polygonized by walking its faces. A face with four sign
//! changes is resolved by sampling the field at the face center; neighbouring
//! cells sample the same point, so the surface has no cracks. Loops of face
//! segments are fan-triangulated. Vertices sit on grid edges and are shared
//! between cells by global edge id, numbered in cell-index order.

use crate::field::{grid_dims, grid_points, DistanceField};
use crate::geom::{Aabb, Dim, Vec3};
use std::collections::HashMap;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Number of distinct undirected edges.
    pub fn edge_count(&self) -> usize {
        let mut edges: Vec<(u32, u32)> = self
            .triangles
            .iter()
            .flat_map(|t| [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])])
            .map(|(a, b)| (a.min(b), a.max(b)))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        edges.len()
    }

    /// V - E + F over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used: Vec<u32> = self.triangles.iter().flatten().copied().collect();
        used.sort_unstable();
        used.dedup();
        used.len() as i64 - self.edge_count() as i64 + self.triangles.len() as i64
    }

    /// True when every edge borders exactly two triangles with opposite
    /// orientation.
    pub fn is_closed_oriented_manifold(&self) -> bool {
        let mut directed: HashMap<(u32, u32), usize> = HashMap::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *directed.entry((a, b)).or_default() += 1;
            }
        }
        directed
            .iter()
            .all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
    }
}

/// Line segments of a 2D zero-level set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolylineSet {
    pub vertices: Vec<Vec3>,
    /// Oriented so that the field increases to the right of each segment.
    pub segments: Vec<[u32; 2]>,
}

impl PolylineSet {
    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Chains segments into polylines. Closed loops end with their first index.
    pub fn polylines(&self) -> Vec<Vec<u32>> {
        let mut next: HashMap<u32, usize> = HashMap::new();
        let mut has_pred = vec![false; self.vertices.len()];
        for (s, seg) in self.segments.iter().enumerate() {
            next.insert(seg[0], s);
            has_pred[seg[1] as usize] = true;
        }
        let mut used = vec![false; self.segments.len()];
        let mut out = Vec::new();
        let walk = |start: usize, used: &mut Vec<bool>| {
            let mut line = vec![self.segments[start][0]];
            let mut s = start;
            while !used[s] {
                used[s] = true;
                let end = self.segments[s][1];
                line.push(end);
                match next.get(&end) {
                    Some(&n) => s = n,
                    None => break,
                }
            }
            line
        };
        // open chains first, from their heads
        for s in 0..self.segments.len() {
            if !used[s] && !has_pred[self.segments[s][0] as usize] {
                out.push(walk(s, &mut used));
            }
        }
        for s in 0..self.segments.len() {
            if !used[s] {
                out.push(walk(s, &mut used));
            }
        }
        out
    }
}

/// Cube corner `c` has offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Faces as (axis, side, corners in cyclic order).
const FACES: [(usize, usize, [usize; 4]); 6] = [
    (0, 0, [0, 2, 6, 4]),
    (0, 1, [1, 3, 7, 5]),
    (1, 0, [0, 1, 5, 4]),
    (1, 1, [2, 3, 7, 6]),
    (2, 0, [0, 1, 3, 2]),
    (2, 1, [4, 5, 7, 6]),
];

fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

fn corner_ref(c: usize) -> Vec3 {
    let o = corner_offset(c);
    Vec3::new(o[0] as f64, o[1] as f64, o[2] as f64)
}

fn edge_between(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|&(u, v)| (u == a && v == b) || (u == b && v == a))
        .expect("corners share an edge")
}

/// Oriented segments `(edge_from, edge_to)` on one face of a cube or one
/// square, given corner signs and (for saddles) whether the center is negative.
/// `corners` are in cyclic order; `pos(c)` gives reference positions and
/// `normal` is the outward face normal; the negative side ends up on the
/// right of travel when viewed against it.
fn face_segments(
    corners: &[usize; 4],
    neg: &[bool; 8],
    center_negative: bool,
    edge_of: impl Fn(usize, usize) -> usize,
    pos: impl Fn(usize) -> Vec3,
    normal: Vec3,
) -> Vec<(usize, usize)> {
    let crossing: Vec<usize> = (0..4).filter(|&i| neg[corners[i]] != neg[corners[(i + 1) % 4]]).collect();
    // Each face edge i joins corners i and i+1.
    let pairs: Vec<(usize, usize)> = match crossing.len() {
        0 => return Vec::new(),
        2 => vec![(crossing[0], crossing[1])],
        4 => {
            // Corners 0 and 2 share a sign. If the center agrees with them they
            // connect through it, and each segment cuts off one of corners 1, 3.
            let diag_neg = neg[corners[0]];
            if center_negative == diag_neg {
                vec![(0, 1), (2, 3)]
            } else {
                vec![(3, 0), (1, 2)]
            }
        }
        _ => unreachable!("sign changes around a loop come in pairs"),
    };
    let mid = |i: usize| (pos(corners[i]) + pos(corners[(i + 1) % 4])) * 0.5;
    pairs
        .into_iter()
        .map(|(i, j)| {
            let (a, b) = (mid(i), mid(j));
            let shared = if (i + 1) % 4 == j {
                Some(corners[j])
            } else if (j + 1) % 4 == i {
                Some(corners[i])
            } else {
                None
            };
            let probe = match shared {
                Some(c) if neg[c] => c,
                Some(c) => *corners.iter().find(|&&k| k != c && neg[k]).expect("a negative corner exists"),
                None => *corners.iter().find(|&&k| neg[k]).expect("a negative corner exists"),
            };
            let ei = edge_of(corners[i], corners[(i + 1) % 4]);
            let ej = edge_of(corners[j], corners[(j + 1) % 4]);
            if (b - a).cross(&normal).dot(&(pos(probe) - a)) > 0.0 {
                (ei, ej)
            } else {
                (ej, ei)
            }
        })
        .collect()
}

struct Grid {
    dims: [usize; 3],
    points: Vec<Vec3>,
    values: Vec<f64>,
}

impl Grid {
    fn new(field: &dyn DistanceField, aabb: &Aabb, res: usize) -> Self {
        let dims = grid_dims(aabb.dim(), res.max(2));
        let points = grid_points(aabb, dims);
        let values = field.distance_batch(&points);
        Self { dims, points, values }
    }

    fn node(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }
}

fn interpolate(p0: &Vec3, p1: &Vec3, v0: f64, v1: f64) -> Vec3 {
    let t = (v0 / (v0 - v1)).clamp(0.0, 1.0);
    p0 + (p1 - p0) * t
}

/// Triangulates the zero isosurface of `field` sampled at `res` points per axis.
pub fn marching_cubes(field: &dyn DistanceField, aabb: &Aabb, res: usize) -> TriangleMesh {
    let grid = Grid::new(field, aabb, res);
    let [nx, ny, nz] = grid.dims;
    let mut mesh = TriangleMesh::default();
    if nz < 2 {
        return mesh;
    }
    let mut vertex_of_edge: HashMap<usize, u32> = HashMap::new();
    let mut face_center: HashMap<(usize, usize), bool> = HashMap::new();
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let nodes: [usize; 8] = std::array::from_fn(|c| {
                    let o = corner_offset(c);
                    grid.node(i + o[0], j + o[1], k + o[2])
                });
                let neg: [bool; 8] = std::array::from_fn(|c| grid.values[nodes[c]] < 0.0);
                if neg.iter().all(|&b| b) || neg.iter().all(|&b| !b) {
                    continue;
                }
                let mut next: [Option<usize>; 12] = [None; 12];
                for &(axis, side, corners) in &FACES {
                    let mut normal = Vec3::zeros();
                    normal[axis] = if side == 1 { 1.0 } else { -1.0 };
                    let saddle = neg[corners[0]] == neg[corners[2]]
                        && neg[corners[1]] == neg[corners[3]]
                        && neg[corners[0]] != neg[corners[1]];
                    let center_negative = saddle && {
                        let key = (nodes[corners[0]], axis);
                        *face_center.entry(key).or_insert_with(|| {
                            let c = corners.iter().fold(Vec3::zeros(), |acc, &c| acc + grid.points[nodes[c]]) / 4.0;
                            field.distance(&c) < 0.0
                        })
                    };
                    for (a, b) in face_segments(&corners, &neg, center_negative, edge_between, corner_ref, normal) {
                        next[a] = Some(b);
                    }
                }
                let mut visited = [false; 12];
                for start in 0..12 {
                    if visited[start] || next[start].is_none() {
                        continue;
                    }
                    let mut loop_edges = Vec::new();
                    let mut e = start;
                    while !visited[e] {
                        visited[e] = true;
                        loop_edges.push(e);
                        e = next[e].expect("face segments form closed loops");
                    }
                    let ids: Vec<u32> = loop_edges
                        .iter()
                        .map(|&e| {
                            let (c0, c1) = EDGES[e];
                            let axis = (c0 ^ c1).trailing_zeros() as usize;
                            let key = 3 * nodes[c0] + axis;
                            *vertex_of_edge.entry(key).or_insert_with(|| {
                                let (n0, n1) = (nodes[c0], nodes[c1]);
                                mesh.vertices.push(interpolate(
                                    &grid.points[n0],
                                    &grid.points[n1],
                                    grid.values[n0],
                                    grid.values[n1],
                                ));
                                (mesh.vertices.len() - 1) as u32
                            })
                        })
                        .collect();
                    for t in 1..ids.len().saturating_sub(1) {
                        let tri = [ids[0], ids[t], ids[t + 1]];
                        let [a, b, c] = tri.map(|v| mesh.vertices[v as usize]);
                        if (b - a).cross(&(c - a)).norm() * 0.5 > 1e-12 {
                            mesh.triangles.push(tri);
                        }
                    }
                }
            }
        }
    }
    mesh
}

/// Square corner `c` has offset `(c & 1, c >> 1)`; edges 0..4 are
/// (0,1) bottom, (2,3) top, (0,2) left, (1,3) right.
const SQUARE_EDGES: [(usize, usize); 4] = [(0, 1), (2, 3), (0, 2), (1, 3)];

/// Segments of the zero level set of a 2D `field` sampled at `res` points per axis.
pub fn marching_squares(field: &dyn DistanceField, aabb: &Aabb, res: usize) -> PolylineSet {
    let flat = Aabb::new(
        Dim::Two.project(aabb.min()),
        Dim::Two.project(aabb.max()),
        Dim::Two,
    )
    .expect("projection of a valid box is valid");
    let grid = Grid::new(field, &flat, res);
    let [nx, ny, _] = grid.dims;
    let mut out = PolylineSet::default();
    let mut vertex_of_edge: HashMap<usize, u32> = HashMap::new();
    let square_edge = |a: usize, b: usize| {
        SQUARE_EDGES
            .iter()
            .position(|&(u, v)| (u == a && v == b) || (u == b && v == a))
            .expect("corners share an edge")
    };
    let square_ref = |c: usize| Vec3::new((c & 1) as f64, (c >> 1) as f64, 0.0);
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let nodes: [usize; 4] = std::array::from_fn(|c| grid.node(i + (c & 1), j + (c >> 1), 0));
            let mut neg = [false; 8];
            for c in 0..4 {
                neg[c] = grid.values[nodes[c]] < 0.0;
            }
            let corners = [0, 1, 3, 2];
            let saddle = neg[0] == neg[3] && neg[1] == neg[2] && neg[0] != neg[1];
            let center_negative = saddle && {
                let c = nodes.iter().fold(Vec3::zeros(), |acc, &n| acc + grid.points[n]) / 4.0;
                field.distance(&c) < 0.0
            };
            // Viewing the square from -z puts the negative side on the left.
            for (a, b) in face_segments(&corners, &neg, center_negative, square_edge, square_ref, -Vec3::z()) {
                let ids = [a, b].map(|e| {
                    let (c0, c1) = SQUARE_EDGES[e];
                    let axis = if c0 ^ c1 == 1 { 0 } else { 1 };
                    let key = 2 * nodes[c0] + axis;
                    *vertex_of_edge.entry(key).or_insert_with(|| {
                        let (n0, n1) = (nodes[c0], nodes[c1]);
                        out.vertices.push(interpolate(
                            &grid.points[n0],
                            &grid.points[n1],
                            grid.values[n0],
                            grid.values[n1],
                        ));
                        (out.vertices.len() - 1) as u32
                    })
                });
                if ids[0] != ids[1] && (out.vertices[ids[0] as usize] - out.vertices[ids[1] as usize]).norm() > 1e-12 {
                    out.segments.push(ids);
                }
            }
        }
    }
    out
}
