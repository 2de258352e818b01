//! Macro-triangulations, their uniform refinement, and the structured
//! lattices living inside every macro-element.

mod lattice;
mod topology;

pub use lattice::{
    classify_point, lattice_coords, num_interior_points, num_lattice_points, Direction,
    LatticeIndex, PointClass,
};
pub use topology::LevelTopology;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Slivers beyond this aspect ratio (diameter / inradius) are rejected.
pub const MAX_ASPECT_RATIO: f64 = 1e3;

/// Affine map `x = A x̂ + b` from the reference triangle `{(0,0), (1,0), (0,1)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineMap {
    pub a: [[f64; 2]; 2],
    pub b: Point,
}

impl AffineMap {
    pub fn from_vertices(p0: Point, p1: Point, p2: Point) -> Self {
        Self {
            a: [[p1[0] - p0[0], p2[0] - p0[0]], [p1[1] - p0[1], p2[1] - p0[1]]],
            b: p0,
        }
    }

    pub fn identity() -> Self {
        Self {
            a: [[1.0, 0.0], [0.0, 1.0]],
            b: [0.0, 0.0],
        }
    }

    #[inline]
    pub fn apply(&self, xi: Point) -> Point {
        [
            self.a[0][0] * xi[0] + self.a[0][1] * xi[1] + self.b[0],
            self.a[1][0] * xi[0] + self.a[1][1] * xi[1] + self.b[1],
        ]
    }

    #[inline]
    pub fn det(&self) -> f64 {
        self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[1][0]
    }

    /// `A^{-T}`, the map taking reference gradients to physical gradients.
    pub fn inverse_transpose(&self) -> [[f64; 2]; 2] {
        let d = self.det();
        [
            [self.a[1][1] / d, -self.a[1][0] / d],
            [-self.a[0][1] / d, self.a[0][0] / d],
        ]
    }
}

/// A conforming coarse triangulation. Every triangle is a macro-element that
/// carries its own structured lattice at each refinement level.
#[derive(Debug, Clone)]
pub struct MacroMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    maps: Vec<AffineMap>,
    /// Local edge `k` joins local vertices `k` and `(k + 1) % 3`.
    boundary_edges: Vec<[bool; 3]>,
    diameters: Vec<f64>,
    h_max: f64,
    reoriented: Vec<usize>,
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl MacroMesh {
    /// Validates and builds a macro-mesh. Clockwise triangles are flipped to
    /// counter-clockwise order; their ids are reported by [`MacroMesh::reoriented`].
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let nv = vertices.len();
        let mut triangles = triangles;
        let mut reoriented = Vec::new();
        let mut maps = Vec::with_capacity(triangles.len());
        let mut diameters = Vec::with_capacity(triangles.len());

        for (t, tri) in triangles.iter_mut().enumerate() {
            for &v in tri.iter() {
                if v >= nv {
                    return Err(Error::InvalidVertexIndex {
                        triangle: t,
                        vertex: v,
                        num_vertices: nv,
                    });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::DegenerateTriangle { triangle: t });
            }
            let [p0, p1, p2] = tri.map(|v| vertices[v]);
            let edges = [dist(p0, p1), dist(p1, p2), dist(p2, p0)];
            let diam = edges.iter().cloned().fold(0.0, f64::max);
            let mut map = AffineMap::from_vertices(p0, p1, p2);
            let det = map.det();
            if det.abs() <= 1e-14 * diam * diam {
                return Err(Error::DegenerateTriangle { triangle: t });
            }
            if det < 0.0 {
                tri.swap(1, 2);
                map = AffineMap::from_vertices(vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]);
                reoriented.push(t);
            }
            let area = 0.5 * map.det();
            let perimeter: f64 = edges.iter().sum();
            let inradius = 2.0 * area / perimeter;
            let aspect_ratio = diam / inradius;
            if aspect_ratio > MAX_ASPECT_RATIO {
                return Err(Error::SliverTriangle {
                    triangle: t,
                    aspect_ratio,
                    limit: MAX_ASPECT_RATIO,
                });
            }
            maps.push(map);
            diameters.push(diam);
        }

        // Edge incidence: key is the sorted vertex pair, value the directed uses.
        let mut edge_uses: HashMap<(usize, usize), Vec<(usize, usize, bool)>> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                edge_uses
                    .entry((a.min(b), a.max(b)))
                    .or_default()
                    .push((t, k, a < b));
            }
        }
        let mut boundary_edges = vec![[false; 3]; triangles.len()];
        for (&(a, b), uses) in &edge_uses {
            match uses.as_slice() {
                [(t, k, _)] => boundary_edges[*t][*k] = true,
                [(_, _, d0), (_, _, d1)] => {
                    if d0 == d1 {
                        return Err(Error::NonConforming(format!(
                            "triangles sharing edge ({a}, {b}) overlap"
                        )));
                    }
                }
                _ => {
                    return Err(Error::NonConforming(format!(
                        "edge ({a}, {b}) is shared by {} triangles",
                        uses.len()
                    )))
                }
            }
        }

        // Only vertices used by some triangle take part in the geometric checks.
        let mut used = vec![false; nv];
        for tri in &triangles {
            for &v in tri {
                used[v] = true;
            }
        }
        let h_max = diameters.iter().cloned().fold(0.0, f64::max);
        let tol = 1e-12 * h_max;
        let mut coords: HashMap<(i64, i64), usize> = HashMap::new();
        let scale = 1.0 / tol.max(f64::MIN_POSITIVE);
        for (v, p) in vertices.iter().enumerate().filter(|(v, _)| used[*v]) {
            let key = ((p[0] * scale).round() as i64, (p[1] * scale).round() as i64);
            if let Some(other) = coords.insert(key, v) {
                return Err(Error::NonConforming(format!(
                    "vertices {other} and {v} coincide"
                )));
            }
        }
        // Hanging nodes: a vertex strictly inside some edge.
        for &(a, b) in edge_uses.keys() {
            let (pa, pb) = (vertices[a], vertices[b]);
            let len = dist(pa, pb);
            for (v, p) in vertices.iter().enumerate() {
                if !used[v] || v == a || v == b {
                    continue;
                }
                let cross = (pb[0] - pa[0]) * (p[1] - pa[1]) - (pb[1] - pa[1]) * (p[0] - pa[0]);
                if cross.abs() > tol * len {
                    continue;
                }
                let s = ((p[0] - pa[0]) * (pb[0] - pa[0]) + (p[1] - pa[1]) * (pb[1] - pa[1]))
                    / (len * len);
                if s > 1e-12 && s < 1.0 - 1e-12 {
                    return Err(Error::NonConforming(format!(
                        "vertex {v} lies inside edge ({a}, {b})"
                    )));
                }
            }
        }

        Ok(Self {
            vertices,
            triangles,
            maps,
            boundary_edges,
            diameters,
            h_max,
            reoriented,
        })
    }

    /// Parses the plain-text mesh format: `v <x> <y>` and `t <i0> <i1> <i2>`
    /// records (0-based indices), `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut triangles = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::MeshParse {
                line: lineno + 1,
                message,
            };
            let mut fields = line.split_whitespace();
            let tag = fields.next().unwrap_or_default();
            let rest: Vec<&str> = fields.collect();
            match tag {
                "v" => {
                    if rest.len() != 2 {
                        return Err(err(format!("expected 2 coordinates, found {}", rest.len())));
                    }
                    let x = rest[0].parse::<f64>().map_err(|e| err(e.to_string()))?;
                    let y = rest[1].parse::<f64>().map_err(|e| err(e.to_string()))?;
                    vertices.push([x, y]);
                }
                "t" => {
                    if rest.len() != 3 {
                        return Err(err(format!("expected 3 vertex indices, found {}", rest.len())));
                    }
                    let mut tri = [0usize; 3];
                    for (slot, s) in tri.iter_mut().zip(&rest) {
                        *slot = s.parse::<usize>().map_err(|e| err(e.to_string()))?;
                    }
                    triangles.push(tri);
                }
                other => return Err(err(format!("unknown record `{other}`"))),
            }
        }
        Self::new(vertices, triangles)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Serializes to the text format accepted by [`MacroMesh::parse`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for p in &self.vertices {
            let _ = writeln!(out, "v {:?} {:?}", p[0], p[1]);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "t {} {} {}", t[0], t[1], t[2]);
        }
        out
    }

    /// Splits every triangle into four congruent children.
    pub fn refine_uniform(&self) -> Self {
        self.refine_uniform_with(|p| p)
    }

    /// Uniform refinement where midpoints of boundary edges are passed
    /// through `project` (e.g. onto a curved boundary).
    pub fn refine_uniform_with(&self, project: impl Fn(Point) -> Point) -> Self {
        let mut vertices = self.vertices.clone();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for (t, tri) in self.triangles.iter().enumerate() {
            let mut mids = [0usize; 3];
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                mids[k] = *midpoint.entry(key).or_insert_with(|| {
                    let (pa, pb) = (self.vertices[a], self.vertices[b]);
                    let mut m = [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])];
                    if self.boundary_edges[t][k] {
                        m = project(m);
                    }
                    vertices.push(m);
                    vertices.len() - 1
                });
            }
            let [v0, v1, v2] = *tri;
            let [m01, m12, m20] = mids;
            triangles.push([v0, m01, m20]);
            triangles.push([m01, v1, m12]);
            triangles.push([m20, m12, v2]);
            triangles.push([m01, m12, m20]);
        }
        Self::new(vertices, triangles).expect("uniform refinement of a valid mesh is valid")
    }

    pub fn refine_times(&self, times: u32) -> Self {
        let mut mesh = self.clone();
        for _ in 0..times {
            mesh = mesh.refine_uniform();
        }
        mesh
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle(&self, t: usize) -> [usize; 3] {
        self.triangles[t]
    }

    pub fn map(&self, t: usize) -> &AffineMap {
        &self.maps[t]
    }

    pub fn is_boundary_edge(&self, t: usize, local_edge: usize) -> bool {
        self.boundary_edges[t][local_edge]
    }

    pub fn num_boundary_edges(&self) -> usize {
        self.boundary_edges
            .iter()
            .map(|e| e.iter().filter(|&&b| b).count())
            .sum()
    }

    /// Diameter `H_T` of macro-element `t`.
    pub fn diameter(&self, t: usize) -> f64 {
        self.diameters[t]
    }

    /// Mesh size `H = max_T H_T`.
    pub fn mesh_size(&self) -> f64 {
        self.h_max
    }

    /// Triangles whose vertex order was flipped during construction.
    pub fn reoriented(&self) -> &[usize] {
        &self.reoriented
    }
}
