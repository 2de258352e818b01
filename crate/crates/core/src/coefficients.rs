//! Scalar, tensor and element-wise constant diffusion coefficients.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::mesh::Point;
use crate::stencil::{FineGeometry, FineTriangles};

/// Symmetric 2x2 tensor stored as a full matrix.
pub type Tensor2 = [[f64; 2]; 2];

pub const IDENTITY: Tensor2 = [[1.0, 0.0], [0.0, 1.0]];

pub fn scaled_identity(k: f64) -> Tensor2 {
    [[k, 0.0], [0.0, k]]
}

/// Smallest eigenvalue of a symmetric 2x2 tensor.
pub fn lambda_min(k: &Tensor2) -> f64 {
    let mean = 0.5 * (k[0][0] + k[1][1]);
    let diff = 0.5 * (k[0][0] - k[1][1]);
    mean - (diff * diff + k[0][1] * k[0][1]).sqrt()
}

/// A smooth bijection of the plane with an analytic Jacobian.
pub trait DomainMap: Send + Sync {
    fn apply(&self, x: Point) -> Point;
    fn jacobian(&self, x: Point) -> Tensor2;
}

/// The identity map.
pub struct IdentityMap;

impl DomainMap for IdentityMap {
    fn apply(&self, x: Point) -> Point {
        x
    }

    fn jacobian(&self, _x: Point) -> Tensor2 {
        IDENTITY
    }
}

/// `φ(x, y) = (x, (2ay - a) sin²(2πx) + y)`, a wavy perturbation of the unit square.
#[derive(Debug, Clone, Copy)]
pub struct WavyMap {
    pub amplitude: f64,
}

impl DomainMap for WavyMap {
    fn apply(&self, x: Point) -> Point {
        let a = self.amplitude;
        let s = (2.0 * PI * x[0]).sin();
        [x[0], (2.0 * a * x[1] - a) * s * s + x[1]]
    }

    fn jacobian(&self, x: Point) -> Tensor2 {
        let a = self.amplitude;
        let s = (2.0 * PI * x[0]).sin();
        [
            [1.0, 0.0],
            [
                (2.0 * a * x[1] - a) * 2.0 * PI * (4.0 * PI * x[0]).sin(),
                1.0 + 2.0 * a * s * s,
            ],
        ]
    }
}

/// Uniform scaling `x ↦ s x`.
#[derive(Debug, Clone, Copy)]
pub struct ScalingMap(pub f64);

impl DomainMap for ScalingMap {
    fn apply(&self, x: Point) -> Point {
        [self.0 * x[0], self.0 * x[1]]
    }

    fn jacobian(&self, _x: Point) -> Tensor2 {
        scaled_identity(self.0)
    }
}

type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
type TensorFn = Arc<dyn Fn(Point) -> Tensor2 + Send + Sync>;

/// Element-wise constant scalar coefficient, one value per fine triangle of
/// every macro-element at a fixed lattice level.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementwiseField {
    level: u32,
    values: Vec<f64>,
}

impl ElementwiseField {
    /// `values` is macro-major with `4^level` entries per macro-element, in
    /// fine-triangle order (all upward triangles first).
    pub fn new(level: u32, values: Vec<f64>) -> Result<Self> {
        let per = 1usize << (2 * level);
        if values.len() % per != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} element values is not a multiple of {per}",
                values.len()
            )));
        }
        Ok(Self { level, values })
    }

    pub fn constant(level: u32, num_macros: usize, value: f64) -> Self {
        Self {
            level,
            values: vec![value; num_macros << (2 * level)],
        }
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn per_macro(&self) -> usize {
        1 << (2 * self.level)
    }

    #[inline]
    pub fn value(&self, t: usize, tri: usize) -> f64 {
        self.values[t * self.per_macro() + tri]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Field one level down: each coarse triangle takes the mean of its four children.
    pub fn coarsen(&self) -> Self {
        assert!(self.level > 0, "cannot coarsen below level 0");
        let fine = FineTriangles::new(self.level);
        let coarse = FineTriangles::new(self.level - 1);
        let macros = self.values.len() / self.per_macro();
        let mut values = Vec::with_capacity(macros * coarse.len());
        for t in 0..macros {
            for tri in coarse.iter() {
                let sum: f64 = tri.children().iter().map(|c| self.value(t, fine.index(*c))).sum();
                values.push(0.25 * sum);
            }
        }
        Self {
            level: self.level - 1,
            values,
        }
    }
}

/// A diffusion coefficient `K`.
#[derive(Clone)]
pub enum CoefficientField {
    Scalar {
        name: String,
        smoothness: Option<u32>,
        f: ScalarFn,
    },
    Tensor {
        name: String,
        smoothness: Option<u32>,
        f: TensorFn,
    },
    /// `K0 = Dφ⁻¹ (K∘φ) Dφ⁻ᵀ det Dφ`.
    Pullback {
        inner: Box<CoefficientField>,
        map: Arc<dyn DomainMap>,
    },
    Elementwise(Arc<ElementwiseField>),
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Elementwise(e) => write!(f, "Elementwise(level {})", e.level),
            other => write!(f, "{}", other.name()),
        }
    }
}

impl CoefficientField {
    pub fn scalar(name: &str, f: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        Self::Scalar {
            name: name.to_string(),
            smoothness: None,
            f: Arc::new(f),
        }
    }

    pub fn tensor(name: &str, f: impl Fn(Point) -> Tensor2 + Send + Sync + 'static) -> Self {
        Self::Tensor {
            name: name.to_string(),
            smoothness: None,
            f: Arc::new(f),
        }
    }

    pub fn constant(k: f64) -> Self {
        Self::scalar("constant", move |_| k)
    }

    pub fn identity_tensor() -> Self {
        Self::tensor("identity-tensor", |_| IDENTITY)
    }

    /// `k(x, y) = Σ c x^a y^b` from `(a, b, c)` terms.
    pub fn polynomial(terms: Vec<(u32, u32, f64)>) -> Self {
        Self::scalar("polynomial", move |p| {
            terms
                .iter()
                .map(|&(a, b, c)| c * p[0].powi(a as i32) * p[1].powi(b as i32))
                .sum()
        })
    }

    /// Symmetric tensor with polynomial entries `(K11, K12, K22)`.
    pub fn polynomial_tensor(
        k11: Vec<(u32, u32, f64)>,
        k12: Vec<(u32, u32, f64)>,
        k22: Vec<(u32, u32, f64)>,
    ) -> Self {
        let eval = |terms: &[(u32, u32, f64)], p: Point| -> f64 {
            terms
                .iter()
                .map(|&(a, b, c)| c * p[0].powi(a as i32) * p[1].powi(b as i32))
                .sum()
        };
        Self::tensor("polynomial-tensor", move |p| {
            let off = eval(&k12, p);
            [[eval(&k11, p), off], [off, eval(&k22, p)]]
        })
    }

    /// `k = exp(xy) + sin(3πxy) + cos(πx²y) + 1`.
    pub fn benchmark_scalar() -> Self {
        Self::scalar("poisson-scalar", benchmark_scalar_value)
    }

    /// `K = [[3x² + 2y² + 1, -x² - y²], [-x² - y², 4x² + 5y² + 1]]`.
    pub fn benchmark_tensor() -> Self {
        Self::tensor("poisson-tensor", benchmark_tensor_value)
    }

    pub fn elementwise(field: ElementwiseField) -> Self {
        Self::Elementwise(Arc::new(field))
    }

    pub fn with_smoothness(mut self, r: u32) -> Self {
        match &mut self {
            Self::Scalar { smoothness, .. } | Self::Tensor { smoothness, .. } => *smoothness = Some(r),
            _ => {}
        }
        self
    }

    pub fn smoothness(&self) -> Option<u32> {
        match self {
            Self::Scalar { smoothness, .. } | Self::Tensor { smoothness, .. } => *smoothness,
            Self::Pullback { inner, .. } => inner.smoothness(),
            Self::Elementwise(_) => Some(0),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Scalar { name, .. } | Self::Tensor { name, .. } => name.clone(),
            Self::Pullback { inner, .. } => format!("pullback({})", inner.name()),
            Self::Elementwise(_) => "elementwise".to_string(),
        }
    }

    pub fn is_elementwise(&self) -> bool {
        matches!(self, Self::Elementwise(_))
    }

    /// `K(x)`. Element-wise fields have no point values and return `None`.
    #[inline]
    pub fn eval(&self, x: Point) -> Option<Tensor2> {
        match self {
            Self::Scalar { f, .. } => Some(scaled_identity(f(x))),
            Self::Tensor { f, .. } => Some(f(x)),
            Self::Pullback { inner, map } => {
                let k = inner.eval(map.apply(x))?;
                Some(pull_back(&k, &map.jacobian(x)))
            }
            Self::Elementwise(_) => None,
        }
    }

    /// Scalar value for scalar fields.
    pub fn eval_scalar(&self, x: Point) -> Option<f64> {
        match self {
            Self::Scalar { f, .. } => Some(f(x)),
            _ => None,
        }
    }

    /// Checked evaluation: rejects singular domain-map Jacobians.
    pub fn try_eval(&self, x: Point) -> Result<Tensor2> {
        if let Self::Pullback { inner, map } = self {
            let jac = map.jacobian(x);
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            if det.abs() <= 1e-14 || !det.is_finite() {
                return Err(Error::SingularJacobian { point: x });
            }
            let k = inner.try_eval(map.apply(x))?;
            return Ok(pull_back(&k, &jac));
        }
        self.eval(x).ok_or_else(|| Error::InvalidParameter {
            name: "coefficient",
            message: "element-wise fields have no point values".to_string(),
        })
    }

    /// Spot-checks `det Dφ > 0` and `λ_min(K) > 0` at the given points.
    pub fn validate(&self, points: &[Point]) -> Result<()> {
        if self.is_elementwise() {
            return Ok(());
        }
        for &x in points {
            if let Self::Pullback { map, .. } = self {
                let jac = map.jacobian(x);
                if jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0] <= 0.0 {
                    return Err(Error::SingularJacobian { point: x });
                }
            }
            let k = self.try_eval(x)?;
            let lambda = lambda_min(&k);
            if !(lambda > 0.0) {
                return Err(Error::NotPositiveDefinite {
                    point: x,
                    lambda_min: lambda,
                });
            }
        }
        Ok(())
    }
}

/// `J⁻¹ K J⁻ᵀ det J`, written so that the result is exactly symmetric.
fn pull_back(k: &Tensor2, jac: &Tensor2) -> Tensor2 {
    let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
    // det J · J⁻¹ = adj J.
    let adj = [[jac[1][1], -jac[0][1]], [-jac[1][0], jac[0][0]]];
    let k_sym = [[k[0][0], 0.5 * (k[0][1] + k[1][0])], [0.5 * (k[0][1] + k[1][0]), k[1][1]]];
    let mut out = [[0.0; 2]; 2];
    for r in 0..2 {
        for c in r..2 {
            let mut s = 0.0;
            for a in 0..2 {
                for b in 0..2 {
                    s += adj[r][a] * k_sym[a][b] * adj[c][b];
                }
            }
            out[r][c] = s / det;
        }
    }
    out[1][0] = out[0][1];
    out
}

/// Pulls a tensor (or scalar) field back through `φ`.
pub fn pullback_tensor(k: CoefficientField, map: Arc<dyn DomainMap>) -> CoefficientField {
    CoefficientField::Pullback {
        inner: Box::new(k),
        map,
    }
}

pub fn benchmark_scalar_value(p: Point) -> f64 {
    let (x, y) = (p[0], p[1]);
    (x * y).exp() + (3.0 * PI * x * y).sin() + (PI * x * x * y).cos() + 1.0
}

/// `∇k` of [`benchmark_scalar_value`].
pub fn benchmark_scalar_gradient(p: Point) -> [f64; 2] {
    let (x, y) = (p[0], p[1]);
    let e = (x * y).exp();
    let c3 = (3.0 * PI * x * y).cos();
    let s2 = (PI * x * x * y).sin();
    [
        y * e + 3.0 * PI * y * c3 - 2.0 * PI * x * y * s2,
        x * e + 3.0 * PI * x * c3 - PI * x * x * s2,
    ]
}

pub fn benchmark_tensor_value(p: Point) -> Tensor2 {
    let (x2, y2) = (p[0] * p[0], p[1] * p[1]);
    let off = -x2 - y2;
    [[3.0 * x2 + 2.0 * y2 + 1.0, off], [off, 4.0 * x2 + 5.0 * y2 + 1.0]]
}

/// Floor on `|∇u|²` before raising it to a negative power (`p < 2`).
pub const GRADIENT_FLOOR: f64 = 1e-12;

/// `|∇u_h|^{p-2}` on every fine triangle, at the level of `u_h`.
///
/// For `p < 2` the squared gradient is floored at [`GRADIENT_FLOOR`] so that
/// flat regions give a large finite value instead of infinity. For `p ≥ 2`
/// the power is well defined at zero and no floor is applied.
pub fn gradient_magnitude_field(u_h: &GridFunction, p: f64) -> Result<ElementwiseField> {
    if !(p > 1.0) {
        return Err(Error::InvalidParameter {
            name: "p",
            message: format!("must exceed 1, got {p}"),
        });
    }
    u_h.ensure_synced()?;
    let topo = u_h.topology();
    let level = topo.level();
    let lattice = topo.lattice();
    let tris = FineTriangles::new(level);
    let exponent = 0.5 * (p - 2.0);
    let values: Vec<f64> = (0..topo.num_triangles())
        .into_par_iter()
        .flat_map_iter(|t| {
            let geom = FineGeometry::new(topo.mesh().map(t), level);
            let block = u_h.block(t);
            tris.iter()
                .map(|tri| {
                    let g = geom.grads(tri);
                    let v = tri.vertices().map(|(i, j)| block[lattice.index(i, j)]);
                    let gx = v[0] * g[0][0] + v[1] * g[1][0] + v[2] * g[2][0];
                    let gy = v[0] * g[0][1] + v[1] * g[1][1] + v[2] * g[2][1];
                    let mut sq = gx * gx + gy * gy;
                    if p < 2.0 {
                        sq = sq.max(GRADIENT_FLOOR);
                    }
                    sq.powf(exponent)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    ElementwiseField::new(level, values)
}
