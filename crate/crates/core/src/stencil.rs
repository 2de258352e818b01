//! True stencil functions: local assembly over the six fine triangles around
//! a lattice point.

use crate::coefficients::{CoefficientField, Tensor2};
use crate::error::{Error, Result};
use crate::mesh::{AffineMap, Direction, LatticeIndex, MacroMesh, Point};
use crate::quadrature::QuadratureRule;

/// Seven stencil values indexed by [`Direction::index`].
pub type Stencil = [f64; 7];

/// Bilinear form whose stencil is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Form {
    /// `∫ K ∇φ_j · ∇φ_i`; with an element-wise field this is the
    /// p-Laplacian stiffness.
    Stiffness,
    /// `∫ φ_j φ_i`.
    Mass,
}

/// A fine triangle of the level-`m` subdivision of a macro-element. Upward
/// triangle `(i, j)` has vertices `(i,j), (i+1,j), (i,j+1)`; downward triangle
/// `(i, j)` has `(i+1,j), (i+1,j+1), (i,j+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FineTri {
    pub up: bool,
    pub i: usize,
    pub j: usize,
}

impl FineTri {
    pub fn vertices(&self) -> [(usize, usize); 3] {
        let (i, j) = (self.i, self.j);
        if self.up {
            [(i, j), (i + 1, j), (i, j + 1)]
        } else {
            [(i + 1, j), (i + 1, j + 1), (i, j + 1)]
        }
    }

    /// The four children one level up, in refinement order (corner
    /// triangles first, then the middle one).
    pub fn children(&self) -> [FineTri; 4] {
        let (a, b) = (2 * self.i, 2 * self.j);
        let up = |i, j| FineTri { up: true, i, j };
        let down = |i, j| FineTri { up: false, i, j };
        if self.up {
            [up(a, b), up(a + 1, b), up(a, b + 1), down(a, b)]
        } else {
            [down(a + 1, b), down(a + 1, b + 1), down(a, b + 1), up(a + 1, b + 1)]
        }
    }
}

/// Indexing of the `4^m` fine triangles of a macro-element: upward
/// triangles row by row, then downward ones.
#[derive(Debug, Clone, Copy)]
pub struct FineTriangles {
    n: usize,
}

impl FineTriangles {
    pub fn new(level: u32) -> Self {
        Self { n: 1 << level }
    }

    pub fn len(&self) -> usize {
        self.n * self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, t: FineTri) -> usize {
        let (n, i, j) = (self.n, t.i, t.j);
        if t.up {
            j * n - j * j.saturating_sub(1) / 2 + i
        } else {
            n * (n + 1) / 2 + j * (n - 1) - j * j.saturating_sub(1) / 2 + i
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = FineTri> {
        let n = self.n;
        let ups = (0..n).flat_map(move |j| (0..n - j).map(move |i| FineTri { up: true, i, j }));
        let downs = (0..n.saturating_sub(1))
            .flat_map(move |j| (0..n - 1 - j).map(move |i| FineTri { up: false, i, j }));
        ups.chain(downs)
    }
}

/// The six triangles around an interior point, as (orientation, anchor
/// offset, direction of each local vertex). Fixed order: E-N, N-NW, NW-W,
/// W-S, S-SE, SE-E.
const FAN: [(bool, (isize, isize), [Direction; 3]); 6] = {
    use Direction::*;
    [
        (true, (0, 0), [C, E, N]),
        (false, (-1, 0), [C, N, NW]),
        (true, (-1, 0), [W, C, NW]),
        (false, (-1, -1), [S, C, W]),
        (true, (0, -1), [S, SE, C]),
        (false, (0, -1), [SE, E, C]),
    ]
};

/// Triangles incident to lattice point `(i, j)` with the local index of the
/// point in each, for any point (interior or not).
pub fn incident_triangles(n: usize, i: usize, j: usize) -> impl Iterator<Item = (FineTri, usize)> {
    FAN.iter().filter_map(move |&(up, (di, dj), roles)| {
        let (a, b) = (i as isize + di, j as isize + dj);
        if a < 0 || b < 0 {
            return None;
        }
        let (a, b) = (a as usize, b as usize);
        let limit = if up { n } else { n.saturating_sub(1) };
        if a + b + 1 > limit {
            return None;
        }
        let local = roles.iter().position(|&d| d == Direction::C).unwrap();
        Some((FineTri { up, i: a, j: b }, local))
    })
}

/// Per-macro-element, per-level geometry shared by all fine triangles.
#[derive(Debug, Clone, Copy)]
pub struct FineGeometry {
    pub map: AffineMap,
    pub n: usize,
    pub h: f64,
    /// Physical area of every fine triangle.
    pub area: f64,
    pub grad_up: [[f64; 2]; 3],
    pub grad_down: [[f64; 2]; 3],
}

impl FineGeometry {
    pub fn new(map: &AffineMap, level: u32) -> Self {
        let n = 1usize << level;
        let h = 1.0 / n as f64;
        let it = map.inverse_transpose();
        let phys = |g: [f64; 2]| {
            [
                (it[0][0] * g[0] + it[0][1] * g[1]) / h,
                (it[1][0] * g[0] + it[1][1] * g[1]) / h,
            ]
        };
        Self {
            map: *map,
            n,
            h,
            area: 0.5 * map.det() * h * h,
            grad_up: [phys([-1.0, -1.0]), phys([1.0, 0.0]), phys([0.0, 1.0])],
            grad_down: [phys([0.0, -1.0]), phys([1.0, 1.0]), phys([-1.0, 0.0])],
        }
    }

    pub fn grads(&self, tri: FineTri) -> &[[f64; 2]; 3] {
        if tri.up {
            &self.grad_up
        } else {
            &self.grad_down
        }
    }

    /// Physical point of reference-lattice coordinates `(i + s, j + t)`.
    #[inline]
    pub fn point(&self, i: f64, j: f64) -> Point {
        self.map.apply([i * self.h, j * self.h])
    }

    /// Physical position of the barycentric point `(1 - x - y, x, y)` of `tri`.
    #[inline]
    pub fn tri_point(&self, tri: FineTri, xi: Point) -> Point {
        let (i, j) = (tri.i as f64, tri.j as f64);
        if tri.up {
            self.point(i + xi[0], j + xi[1])
        } else {
            self.point(i + 1.0 - xi[1], j + xi[0] + xi[1])
        }
    }
}

/// `∫_t K` over fine triangle `tri` of macro-element `t`.
pub fn integrated_coefficient(
    field: &CoefficientField,
    quad: &QuadratureRule,
    geom: &FineGeometry,
    t: usize,
    tri: FineTri,
) -> Tensor2 {
    if let CoefficientField::Elementwise(e) = field {
        debug_assert_eq!(1usize << e.level(), geom.n, "element-wise field level");
        let v = e.value(t, FineTriangles { n: geom.n }.index(tri)) * geom.area;
        return [[v, 0.0], [0.0, v]];
    }
    let mut k = [[0.0; 2]; 2];
    for (xi, w) in quad.points.iter().zip(&quad.weights) {
        let kx = field.eval(geom.tri_point(tri, *xi)).expect("analytic field");
        for r in 0..2 {
            for c in 0..2 {
                k[r][c] += w * kx[r][c];
            }
        }
    }
    let scale = 2.0 * geom.area;
    for row in &mut k {
        for v in row {
            *v *= scale;
        }
    }
    k
}

/// `S_ab = ∇φ_aᵀ K̄ ∇φ_b` with `K̄ = ∫_t K` and constant P1 gradients.
pub fn local_stiffness(grads: &[[f64; 2]; 3], kbar: &Tensor2) -> [[f64; 3]; 3] {
    let mut s = [[0.0; 3]; 3];
    for a in 0..3 {
        let ka = [
            kbar[0][0] * grads[a][0] + kbar[0][1] * grads[a][1],
            kbar[1][0] * grads[a][0] + kbar[1][1] * grads[a][1],
        ];
        for b in a + 1..3 {
            s[a][b] = ka[0] * grads[b][0] + ka[1] * grads[b][1];
            s[b][a] = s[a][b];
        }
    }
    // Rows sum to zero in exact arithmetic; closing the diagonal keeps that
    // true in floating point.
    for a in 0..3 {
        s[a][a] = -(0..3).filter(|&b| b != a).map(|b| s[a][b]).sum::<f64>();
    }
    s
}

/// Exact P1 mass matrix `|t|/12 [[2,1,1],[1,2,1],[1,1,2]]`.
pub fn local_mass(area: f64) -> [[f64; 3]; 3] {
    let d = area / 6.0;
    let o = area / 12.0;
    [[d, o, o], [o, d, o], [o, o, d]]
}

/// Evaluates true stencils and element matrices of one form on a macro-mesh.
#[derive(Debug, Clone)]
pub struct StencilComputer {
    pub field: CoefficientField,
    pub form: Form,
    pub quad: QuadratureRule,
}

impl StencilComputer {
    pub fn new(field: CoefficientField, form: Form, quad_degree: usize) -> Self {
        Self {
            field,
            form,
            quad: QuadratureRule::with_degree(quad_degree),
        }
    }

    pub fn element_matrix(&self, geom: &FineGeometry, t: usize, tri: FineTri) -> [[f64; 3]; 3] {
        match self.form {
            Form::Mass => local_mass(geom.area),
            Form::Stiffness => {
                let kbar = integrated_coefficient(&self.field, &self.quad, geom, t, tri);
                local_stiffness(geom.grads(tri), &kbar)
            }
        }
    }

    /// Stencil at an interior lattice point, assembled from the six incident
    /// element matrices.
    pub fn stencil(&self, geom: &FineGeometry, t: usize, i: usize, j: usize) -> Stencil {
        let mut s = [0.0; 7];
        for &(up, (di, dj), roles) in FAN.iter() {
            let tri = FineTri {
                up,
                i: (i as isize + di) as usize,
                j: (j as isize + dj) as usize,
            };
            let e = self.element_matrix(geom, t, tri);
            let c = roles.iter().position(|&d| d == Direction::C).unwrap();
            for (b, d) in roles.iter().enumerate() {
                s[d.index()] += e[c][b];
            }
        }
        s
    }

    /// All interior stencils of macro-element `t` in storage order. Each fine
    /// triangle is integrated once.
    pub fn macro_stencils(&self, mesh: &MacroMesh, level: u32, t: usize) -> Vec<Stencil> {
        let geom = FineGeometry::new(mesh.map(t), level);
        let lattice = LatticeIndex::new(level);
        let tris = FineTriangles::new(level);
        let elems: Vec<[[f64; 3]; 3]> = tris.iter().map(|tri| self.element_matrix(&geom, t, tri)).collect();
        lattice
            .interior_points()
            .map(|(i, j)| {
                let mut s = [0.0; 7];
                for &(up, (di, dj), roles) in FAN.iter() {
                    let tri = FineTri {
                        up,
                        i: (i as isize + di) as usize,
                        j: (j as isize + dj) as usize,
                    };
                    let e = &elems[tris.index(tri)];
                    let c = roles.iter().position(|&d| d == Direction::C).unwrap();
                    for (b, d) in roles.iter().enumerate() {
                        s[d.index()] += e[c][b];
                    }
                }
                s
            })
            .collect()
    }

    /// Checked variant of [`StencilComputer::stencil`].
    pub fn true_stencil(&self, mesh: &MacroMesh, t: usize, level: u32, i: usize, j: usize) -> Result<Stencil> {
        let lattice = LatticeIndex::new(level);
        lattice.checked_index(i, j)?;
        if !lattice.is_interior(i, j) {
            return Err(Error::NotInterior { level, i, j });
        }
        Ok(self.stencil(&FineGeometry::new(mesh.map(t), level), t, i, j))
    }
}

/// One least-squares sample: reference coordinates of the point and the
/// stencil value there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub xi: Point,
    pub value: f64,
}

/// Sampling points at level `m_eval` for direction `delta`: `(i, j)` and the
/// fine-level neighbour `(i, j) + δ` both interior. For `m_eval = m` this is
/// the interior `(i, j)` with `(i, j) + δ` interior at the same level.
pub fn sampling_points(m_eval: u32, level: u32, delta: Direction) -> Vec<(usize, usize)> {
    assert!(m_eval <= level);
    let coarse = LatticeIndex::new(m_eval);
    let fine = LatticeIndex::new(level);
    let stride = 1usize << (level - m_eval);
    let (di, dj) = delta.offset();
    coarse
        .interior_points()
        .filter(|&(i, j)| {
            let (fi, fj) = ((i * stride) as i64 + di, (j * stride) as i64 + dj);
            fi >= 1 && fj >= 1 && fine.is_interior(fi as usize, fj as usize)
        })
        .collect()
}

/// Samples of `Φ^δ_T` (fine level `level` geometry) at the sampling points of
/// level `m_eval`, in reference coordinates of macro-element `t`.
pub fn stencil_field_samples(
    comp: &StencilComputer,
    mesh: &MacroMesh,
    t: usize,
    level: u32,
    m_eval: u32,
    delta: Direction,
) -> Vec<Sample> {
    let geom = FineGeometry::new(mesh.map(t), level);
    let stride = 1usize << (level - m_eval);
    let h = 1.0 / (1usize << m_eval) as f64;
    sampling_points(m_eval, level, delta)
        .into_iter()
        .map(|(i, j)| Sample {
            xi: [i as f64 * h, j as f64 * h],
            value: comp.stencil(&geom, t, i * stride, j * stride)[delta.index()],
        })
        .collect()
}
