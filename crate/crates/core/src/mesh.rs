//! Structured triangulations of the disk and of axis-aligned rectangles.
//!
//! The disk mesh is built from concentric vertex rings whose vertices all sit on
//! the mirror lines of its dihedral symmetry group. Outer rings carry `C`
//! vertices (C divisible by 4) and are joined by quads with alternating
//! diagonals; inner rings carry `C/2` vertices and are joined by crossed quads
//! whose centre vertices land on the remaining mirror lines. Because every vertex
//! is fixed by some reflection, nodal fields that are odd under all reflections
//! vanish identically, which keeps azimuthal vector fields exactly decoupled
//! from scalar unknowns at the discrete level.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MeshError {
    #[error("invalid mesh parameter: {0}")]
    InvalidParameter(String),
    #[error("resolution too coarse: {0}")]
    DegenerateResolution(String),
    #[error("triangle {0} has non-positive signed area")]
    NonPositiveArea(usize),
    #[error("vertex index {0} out of range")]
    IndexOutOfRange(usize),
    #[error("edge ({0}, {1}) is shared by more than two triangles")]
    NonManifoldEdge(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Geometry {
    Disk { radius: f64 },
    Rectangle { lx: f64, ly: f64 },
}

impl Geometry {
    pub fn centroid(&self) -> [f64; 2] {
        match *self {
            Geometry::Disk { .. } => [0.0, 0.0],
            Geometry::Rectangle { lx, ly } => [0.5 * lx, 0.5 * ly],
        }
    }

    pub fn area(&self) -> f64 {
        match *self {
            Geometry::Disk { radius } => PI * radius * radius,
            Geometry::Rectangle { lx, ly } => lx * ly,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    /// Counterclockwise vertex triples.
    pub triangles: Vec<[usize; 3]>,
    /// Sorted indices of vertices on the boundary.
    pub boundary_vertices: Vec<usize>,
    /// Maximum edge length.
    pub h: f64,
    pub geometry: Geometry,
    is_boundary: Vec<bool>,
}

impl Mesh {
    /// Builds a mesh and checks its invariants; boundary vertices and `h` are derived.
    pub fn new(
        vertices: Vec<[f64; 2]>,
        triangles: Vec<[usize; 3]>,
        geometry: Geometry,
    ) -> Result<Self, MeshError> {
        let n = vertices.len();
        let mut edges: HashMap<(usize, usize), u8> = HashMap::new();
        let mut h: f64 = 0.0;
        for (t, tri) in triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&i| i >= n) {
                return Err(MeshError::IndexOutOfRange(bad));
            }
            if signed_area(&vertices, tri) <= 0.0 {
                return Err(MeshError::NonPositiveArea(t));
            }
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let c = edges.entry(key).or_insert(0);
                *c += 1;
                if *c > 2 {
                    return Err(MeshError::NonManifoldEdge(key.0, key.1));
                }
                h = h.max(dist(vertices[a], vertices[b]));
            }
        }
        let mut is_boundary = vec![false; n];
        for (&(a, b), &c) in &edges {
            if c == 1 {
                is_boundary[a] = true;
                is_boundary[b] = true;
            }
        }
        let boundary_vertices: Vec<usize> = (0..n).filter(|&i| is_boundary[i]).collect();
        if boundary_vertices.len() < 3 {
            return Err(MeshError::DegenerateResolution(format!(
                "{} boundary vertices",
                boundary_vertices.len()
            )));
        }
        Ok(Mesh { vertices, triangles, boundary_vertices, h, geometry, is_boundary })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_boundary(&self, i: usize) -> bool {
        self.is_boundary[i]
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.is_boundary
    }

    pub fn interior_vertices(&self) -> Vec<usize> {
        (0..self.n_vertices()).filter(|&i| !self.is_boundary[i]).collect()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        signed_area(&self.vertices, &self.triangles[t])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Longest edge over 2*sqrt(3)*inradius; equals 1 for equilateral triangles.
    pub fn aspect_ratio(&self, t: usize) -> f64 {
        let tri = &self.triangles[t];
        let e: Vec<f64> =
            (0..3).map(|k| dist(self.vertices[tri[k]], self.vertices[tri[(k + 1) % 3]])).collect();
        let s = 0.5 * (e[0] + e[1] + e[2]);
        let rin = self.triangle_area(t) / s;
        e.iter().cloned().fold(0.0, f64::max) / (2.0 * 3f64.sqrt() * rin)
    }

    pub fn max_aspect_ratio(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.aspect_ratio(t)).fold(0.0, f64::max)
    }

    /// Edges that belong to a single triangle, oriented counterclockwise.
    pub fn boundary_edges(&self) -> Vec<[usize; 2]> {
        let mut count: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *count.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        let mut out = Vec::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                if count[&(a.min(b), a.max(b))] == 1 {
                    out.push([a, b]);
                }
            }
        }
        out
    }

    pub fn radial_coordinate(&self, vertex: usize) -> Result<f64, MeshError> {
        let p = self.vertices.get(vertex).ok_or(MeshError::IndexOutOfRange(vertex))?;
        Ok(dist(*p, self.geometry.centroid()))
    }

    /// Plain-text dump with `vertices`, `triangles` and `boundary` sections.
    pub fn to_text(&self) -> String {
        let mut s = String::from("vertices\n");
        for (i, v) in self.vertices.iter().enumerate() {
            let _ = writeln!(s, "{i} {:.16e} {:.16e}", v[0], v[1]);
        }
        s.push_str("triangles\n");
        for (i, t) in self.triangles.iter().enumerate() {
            let _ = writeln!(s, "{i} {} {} {}", t[0], t[1], t[2]);
        }
        s.push_str("boundary\n");
        for i in &self.boundary_vertices {
            let _ = writeln!(s, "{i}");
        }
        s
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn signed_area(v: &[[f64; 2]], t: &[usize; 3]) -> f64 {
    let (a, b, c) = (v[t[0]], v[t[1]], v[t[2]]);
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

const ARC_FACTOR: f64 = 1.25;
const RADIAL_FACTOR: f64 = 0.8;
const GRADING: f64 = 3.0;

#[derive(Clone, Copy, PartialEq)]
enum Ring {
    Full,
    Half,
}

/// Disk of the given radius centred at the origin.
///
/// Arc spacing on the outer rings is at most 1.25 h and ring spacing at most
/// 0.8 h, so every edge stays below 1.5 h. Towards the centre the ring spacing
/// is graded with the arc length to keep triangles well shaped.
pub fn mesh_disk(radius: f64, h_target: f64) -> Result<Mesh, MeshError> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(MeshError::InvalidParameter(format!("radius {radius}")));
    }
    if !(h_target > 0.0 && h_target.is_finite()) {
        return Err(MeshError::InvalidParameter(format!("h_target {h_target}")));
    }
    if h_target >= radius {
        return Err(MeshError::DegenerateResolution(format!(
            "h_target {h_target} >= radius {radius}"
        )));
    }
    let count = 4 * (PI * radius / (2.0 * ARC_FACTOR * h_target) - 1e-12).ceil() as usize;
    let half = count / 2;
    let dr_max = radius / (radius / (RADIAL_FACTOR * h_target) - 1e-12).ceil();

    let mut rings = vec![(radius, Ring::Full)];
    let (mut r, mut kind) = (radius, Ring::Full);
    loop {
        let n = if kind == Ring::Full { count } else { half };
        let dr = dr_max.min(GRADING * 2.0 * PI * r / n as f64);
        let rn = r - dr;
        if rn < 0.75 * dr_max {
            break;
        }
        if kind == Ring::Full && 2.0 * PI * rn / half as f64 <= ARC_FACTOR * h_target {
            kind = Ring::Half;
        }
        rings.push((rn, kind));
        r = rn;
    }
    rings.reverse();

    let mut vertices = vec![[0.0, 0.0]];
    let mut ids: Vec<Vec<usize>> = Vec::with_capacity(rings.len());
    for &(r, kind) in &rings {
        let n = if kind == Ring::Full { count } else { half };
        let mut ring = Vec::with_capacity(n);
        for j in 0..n {
            let a = 2.0 * PI * j as f64 / n as f64;
            ring.push(vertices.len());
            vertices.push([r * a.cos(), r * a.sin()]);
        }
        ids.push(ring);
    }

    let mut triangles = Vec::new();
    let first = &ids[0];
    for j in 0..first.len() {
        triangles.push([0, first[j], first[(j + 1) % first.len()]]);
    }
    for g in 0..rings.len() - 1 {
        let (ri, ki) = rings[g];
        let (ro, ko) = rings[g + 1];
        let (inn, out) = (&ids[g], &ids[g + 1]);
        let ni = inn.len();
        match (ki, ko) {
            (Ring::Half, Ring::Half) => {
                let rm = 0.5 * (ri + ro);
                for j in 0..ni {
                    let a = 2.0 * PI * (j as f64 + 0.5) / ni as f64;
                    let m = vertices.len();
                    vertices.push([rm * a.cos(), rm * a.sin()]);
                    let j1 = (j + 1) % ni;
                    triangles.push([inn[j], inn[j1], m]);
                    triangles.push([inn[j1], out[j1], m]);
                    triangles.push([out[j1], out[j], m]);
                    triangles.push([out[j], inn[j], m]);
                }
            }
            (Ring::Full, Ring::Full) => {
                for j in 0..ni {
                    let j1 = (j + 1) % ni;
                    if j % 2 == 0 {
                        triangles.push([inn[j], out[j], out[j1]]);
                        triangles.push([inn[j], out[j1], inn[j1]]);
                    } else {
                        triangles.push([inn[j], out[j], inn[j1]]);
                        triangles.push([inn[j1], out[j], out[j1]]);
                    }
                }
            }
            (Ring::Half, Ring::Full) => {
                let no = out.len();
                for j in 0..ni {
                    let j1 = (j + 1) % ni;
                    triangles.push([inn[j], out[2 * j], out[2 * j + 1]]);
                    triangles.push([inn[j], out[2 * j + 1], inn[j1]]);
                    triangles.push([inn[j1], out[2 * j + 1], out[(2 * j + 2) % no]]);
                }
            }
            (Ring::Full, Ring::Half) => unreachable!("rings only coarsen towards the centre"),
        }
    }
    for t in triangles.iter_mut() {
        if signed_area(&vertices, t) < 0.0 {
            t.swap(1, 2);
        }
    }
    Mesh::new(vertices, triangles, Geometry::Disk { radius })
}

/// Rectangle [0, lx] x [0, ly] on a uniform grid of nx x ny cells with
/// nx = ceil(lx / h), each cell split into four triangles through its centroid.
pub fn mesh_rectangle(lx: f64, ly: f64, h_target: f64) -> Result<Mesh, MeshError> {
    for (name, x) in [("lx", lx), ("ly", ly), ("h_target", h_target)] {
        if !(x > 0.0 && x.is_finite()) {
            return Err(MeshError::InvalidParameter(format!("{name} {x}")));
        }
    }
    let nx = ((lx / h_target) - 1e-12).ceil().max(1.0) as usize;
    let ny = ((ly / h_target) - 1e-12).ceil().max(1.0) as usize;
    let (hx, hy) = (lx / nx as f64, ly / ny as f64);
    let grid = |i: usize, j: usize| j * (nx + 1) + i;
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1) + nx * ny);
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([i as f64 * hx, j as f64 * hy]);
        }
    }
    let mut triangles = Vec::with_capacity(4 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let c = vertices.len();
            vertices.push([(i as f64 + 0.5) * hx, (j as f64 + 0.5) * hy]);
            let (a, b, d, e) = (grid(i, j), grid(i + 1, j), grid(i + 1, j + 1), grid(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([b, d, c]);
            triangles.push([d, e, c]);
            triangles.push([e, a, c]);
        }
    }
    Mesh::new(vertices, triangles, Geometry::Rectangle { lx, ly })
}
