//! Benchmark problems: manufactured Poisson problems with scalar and tensor
//! coefficients, and the time-dependent p-Laplacian.

mod plaplacian;

pub use plaplacian::{
    default_relaxation, plaplacian_run, relative_l2_difference, stationary_rhs, PLaplacianParams, PLaplacianRun, PLaplacianStep,
};

use std::f64::consts::PI;
use std::sync::Arc;
use std::time::Instant;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::analysis::{convergence_rows, error_norms, ConvergenceRow, ErrorNorms};
use crate::coefficients::{
    benchmark_scalar_gradient, benchmark_scalar_value, benchmark_tensor_value, pullback_tensor, CoefficientField, DomainMap,
    Tensor2, WavyMap,
};
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::mesh::{LevelTopology, MacroMesh, Point};
use crate::multigrid::{Multigrid, MultigridConfig, SolveStats};
use crate::operator::{dirichlet_lift, load_vector, Operator, SurrogateOperator, TrueOperator};
use crate::stencil::{Form, StencilComputer};
use crate::surrogate::SurrogateConfig;

type ScalarFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;

/// The unit square split along its diagonal into two triangles.
pub fn unit_square() -> MacroMesh {
    MacroMesh::new(
        vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .expect("unit square mesh")
}

/// Inscribed hexagon of the unit disk, refined `refinements` times with new
/// boundary vertices projected onto the circle.
pub fn unit_disk(refinements: u32) -> MacroMesh {
    let mut vertices = vec![[0.0, 0.0]];
    vertices.extend((0..6).map(|k| {
        let a = k as f64 * PI / 3.0;
        [a.cos(), a.sin()]
    }));
    let triangles = (0..6).map(|k| [0, 1 + k, 1 + (k + 1) % 6]).collect();
    let mut mesh = MacroMesh::new(vertices, triangles).expect("hexagon mesh");
    for _ in 0..refinements {
        mesh = mesh.refine_uniform_with(|p| {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            [p[0] / r, p[1] / r]
        });
    }
    mesh
}

/// A Dirichlet problem `-div(K ∇u) = f` with known solution.
#[derive(Clone)]
pub struct PoissonBenchmark {
    pub name: String,
    pub field: CoefficientField,
    pub u: ScalarFn,
    pub grad_u: VectorFn,
    pub f: ScalarFn,
    /// `K ∇u`, used to check `f` by differencing.
    pub flux: VectorFn,
}

fn harmonic_u(p: Point) -> f64 {
    p[0].sin() * p[1].sinh()
}

fn harmonic_grad(p: Point) -> [f64; 2] {
    [p[0].cos() * p[1].sinh(), p[0].sin() * p[1].cosh()]
}

fn mat_vec(k: &Tensor2, v: [f64; 2]) -> [f64; 2] {
    [k[0][0] * v[0] + k[0][1] * v[1], k[1][0] * v[0] + k[1][1] * v[1]]
}

impl PoissonBenchmark {
    /// Scalar coefficient `k = exp(xy) + sin(3πxy) + cos(πx²y) + 1` with
    /// `u = sin(x) sinh(y)`. Since `u` is harmonic, `f = -∇k · ∇u`.
    pub fn scalar() -> Self {
        Self {
            name: "scalar".into(),
            field: CoefficientField::benchmark_scalar(),
            u: Arc::new(harmonic_u),
            grad_u: Arc::new(harmonic_grad),
            f: Arc::new(|p| {
                let gk = benchmark_scalar_gradient(p);
                let gu = harmonic_grad(p);
                -(gk[0] * gu[0] + gk[1] * gu[1])
            }),
            flux: Arc::new(|p| {
                let k = benchmark_scalar_value(p);
                let g = harmonic_grad(p);
                [k * g[0], k * g[1]]
            }),
        }
    }

    /// Polynomial scalar coefficient from `(a, b, c)` terms `c x^a y^b` with
    /// the same harmonic solution.
    pub fn polynomial_scalar(terms: Vec<(u32, u32, f64)>) -> Self {
        let terms = Arc::new(terms);
        let t1 = terms.clone();
        let t2 = terms.clone();
        let value = move |p: Point| -> f64 {
            t1.iter().map(|&(a, b, c)| c * p[0].powi(a as i32) * p[1].powi(b as i32)).sum()
        };
        let grad = move |p: Point| -> [f64; 2] {
            let mut g = [0.0; 2];
            for &(a, b, c) in t2.iter() {
                if a > 0 {
                    g[0] += c * a as f64 * p[0].powi(a as i32 - 1) * p[1].powi(b as i32);
                }
                if b > 0 {
                    g[1] += c * b as f64 * p[0].powi(a as i32) * p[1].powi(b as i32 - 1);
                }
            }
            g
        };
        let v2 = value.clone();
        Self {
            name: "polynomial".into(),
            field: CoefficientField::scalar("polynomial", value),
            u: Arc::new(harmonic_u),
            grad_u: Arc::new(harmonic_grad),
            f: Arc::new(move |p| {
                let gk = grad(p);
                let gu = harmonic_grad(p);
                -(gk[0] * gu[0] + gk[1] * gu[1])
            }),
            flux: Arc::new(move |p| {
                let k = v2(p);
                let g = harmonic_grad(p);
                [k * g[0], k * g[1]]
            }),
        }
    }

    /// Tensor coefficient `K = [[3x²+2y²+1, -x²-y²], [-x²-y², 4x²+5y²+1]]`
    /// on the unit square with `u = sin(x) sinh(y)`.
    pub fn plain_tensor() -> Self {
        Self {
            name: "tensor".into(),
            field: CoefficientField::benchmark_tensor(),
            u: Arc::new(harmonic_u),
            grad_u: Arc::new(harmonic_grad),
            f: Arc::new(tensor_rhs),
            flux: Arc::new(|p| mat_vec(&benchmark_tensor_value(p), harmonic_grad(p))),
        }
    }

    /// The tensor problem on the perturbed domain `φ((0,1)²)` with
    /// `φ(x, y) = (x, (2ay - a) sin²(2πx) + y)`, pulled back to the unit
    /// square: `K₀ = Dφ⁻¹ (K∘φ) Dφ⁻ᵀ det Dφ`, `û = u∘φ`, `f₀ = (f∘φ) det Dφ`.
    pub fn tensor(amplitude: f64) -> Self {
        let map: Arc<dyn DomainMap> = Arc::new(WavyMap { amplitude });
        let (m1, m2, m3) = (map.clone(), map.clone(), map.clone());
        let field = pullback_tensor(CoefficientField::benchmark_tensor(), map);
        let f2 = field.clone();
        let grad_hat = move |p: Point| -> [f64; 2] {
            let j = m2.jacobian(p);
            let g = harmonic_grad(m2.apply(p));
            [j[0][0] * g[0] + j[1][0] * g[1], j[0][1] * g[0] + j[1][1] * g[1]]
        };
        let g2 = grad_hat.clone();
        Self {
            name: format!("tensor-wavy-{amplitude}"),
            field,
            u: Arc::new(move |p| harmonic_u(m1.apply(p))),
            grad_u: Arc::new(grad_hat),
            f: Arc::new(move |p| {
                let j = m3.jacobian(p);
                tensor_rhs(m3.apply(p)) * (j[0][0] * j[1][1] - j[0][1] * j[1][0])
            }),
            flux: Arc::new(move |p| mat_vec(&f2.eval(p).expect("analytic field"), g2(p))),
        }
    }

    /// Largest relative deviation of `f` from `-div(K ∇u)` by central
    /// differences of the flux with step `step`, at `samples` seeded random
    /// points of `[margin, 1 - margin]²`.
    pub fn check_rhs(&self, samples: usize, seed: u64, step: f64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let p = [rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95)];
            let fx = (self.flux)([p[0] + step, p[1]])[0] - (self.flux)([p[0] - step, p[1]])[0];
            let fy = (self.flux)([p[0], p[1] + step])[1] - (self.flux)([p[0], p[1] - step])[1];
            let fd = -(fx + fy) / (2.0 * step);
            let f = (self.f)(p);
            worst = worst.max((fd - f).abs() / f.abs().max(1.0));
        }
        worst
    }
}

/// `-div(K ∇u)` for the tensor coefficient and `u = sin(x) sinh(y)`.
fn tensor_rhs(p: Point) -> f64 {
    let (x, y) = (p[0], p[1]);
    let k = benchmark_tensor_value(p);
    let (ux, uy) = (x.cos() * y.sinh(), x.sin() * y.cosh());
    let (uxx, uyy, uxy) = (-x.sin() * y.sinh(), x.sin() * y.sinh(), x.cos() * y.cosh());
    -((6.0 * x - 2.0 * y) * ux + (-2.0 * x + 10.0 * y) * uy + k[0][0] * uxx + 2.0 * k[0][1] * uxy + k[1][1] * uyy)
}

/// How the stiffness operator of a solve is realized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Quadrature stencils, stored once per level.
    Standard,
    /// Quadrature stencils recomputed on every application.
    StandardOnTheFly,
    Surrogate(SurrogateConfig),
}

/// Discretization and solver settings shared by the Poisson drivers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveParams {
    /// Fine lattice level inside every macro-element.
    pub level: u32,
    pub m_coarse: u32,
    /// Exactness degree of the coefficient quadrature.
    pub quad_degree: usize,
    pub mg: MultigridConfig,
}

impl SolveParams {
    pub fn new(level: u32) -> Self {
        Self {
            level,
            m_coarse: 2,
            quad_degree: 4,
            mg: MultigridConfig {
                rel_tol: 1e-11,
                max_cycles: 60,
                ..MultigridConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m_coarse < 2 || self.m_coarse > self.level {
            return Err(Error::InvalidParameter {
                name: "m_coarse",
                message: format!("need 2 <= m_coarse <= m, got m_coarse = {} and m = {}", self.m_coarse, self.level),
            });
        }
        self.mg.validate()
    }
}

/// Level topologies `m_coarse..=level`.
pub fn build_topologies(mesh: &Arc<MacroMesh>, m_coarse: u32, level: u32) -> Result<Vec<Arc<LevelTopology>>> {
    (m_coarse..=level)
        .map(|l| LevelTopology::new(mesh.clone(), l).map(Arc::new))
        .collect()
}

/// One operator per level. Surrogate levels sample at `min(m_ls, level)`;
/// a coarse level whose fit is impossible (too few samples) uses the true
/// operator, while the finest level propagates the error.
pub fn build_operators(
    topos: &[Arc<LevelTopology>],
    comp: &Arc<StencilComputer>,
    method: Method,
) -> Result<Vec<Arc<dyn Operator>>> {
    let finest = topos.len().saturating_sub(1);
    topos
        .iter()
        .enumerate()
        .map(|(k, topo)| build_operator(topo, comp, method, k < finest))
        .collect()
}

/// The operator of one level; see [`build_operators`].
pub fn build_operator(
    topo: &Arc<LevelTopology>,
    comp: &Arc<StencilComputer>,
    method: Method,
    coarse: bool,
) -> Result<Arc<dyn Operator>> {
    Ok(match method {
        Method::Standard => Arc::new(TrueOperator::new(topo, comp.clone())),
        Method::StandardOnTheFly => Arc::new(TrueOperator::on_the_fly(topo, comp.clone())),
        Method::Surrogate(config) => match SurrogateOperator::new(topo, comp, &config) {
            Ok(op) => Arc::new(op),
            Err(e @ (Error::Underdetermined { .. } | Error::RankDeficient { .. })) if coarse => {
                debug!("level {}: true operator instead of surrogate ({e})", topo.level());
                Arc::new(TrueOperator::new(topo, comp.clone()))
            }
            Err(e) => return Err(e),
        },
    })
}

/// Result of one Poisson solve.
#[derive(Debug, Clone)]
pub struct PoissonSolution {
    pub u: GridFunction,
    pub stats: SolveStats,
    pub errors: ErrorNorms,
    /// Operator construction, including sampling and fitting.
    pub setup_secs: f64,
    pub solve_secs: f64,
    pub dofs: usize,
}

impl PoissonSolution {
    pub fn total_secs(&self) -> f64 {
        self.setup_secs + self.solve_secs
    }
}

/// Solves `bench` on `mesh` refined to `params.level` inside every
/// macro-element, starting from the Dirichlet lift of the exact solution.
pub fn solve_poisson(
    bench: &PoissonBenchmark,
    mesh: &Arc<MacroMesh>,
    params: &SolveParams,
    method: Method,
) -> Result<PoissonSolution> {
    params.validate()?;
    let topos = build_topologies(mesh, params.m_coarse, params.level)?;
    let comp = Arc::new(StencilComputer::new(bench.field.clone(), Form::Stiffness, params.quad_degree));
    let start = Instant::now();
    let ops = build_operators(&topos, &comp, method)?;
    let mg = Multigrid::new(ops, params.mg)?;
    let setup_secs = start.elapsed().as_secs_f64();

    let fine = topos.last().unwrap();
    let b = load_vector(fine, |p| (bench.f)(p), 6);
    let mut u = dirichlet_lift(fine, |p| (bench.u)(p));
    let start = Instant::now();
    let stats = mg.solve(&mut u, &b)?;
    let solve_secs = start.elapsed().as_secs_f64();
    let errors = error_norms(&u, |p| (bench.u)(p), |p| (bench.grad_u)(p))?;
    info!(
        "{} level {} on {} macros: {} cycles, rel H1 {:.3e}, rel L2 {:.3e}",
        bench.name,
        params.level,
        mesh.num_triangles(),
        stats.cycles(),
        errors.rel_h1,
        errors.rel_l2
    );
    Ok(PoissonSolution {
        dofs: fine.num_global(),
        u,
        stats,
        errors,
        setup_secs,
        solve_secs,
    })
}

/// Settings of an H-convergence study: the base mesh is refined
/// `0..macro_levels` times while the lattice level inside each macro-element
/// stays fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceParams {
    pub macro_levels: u32,
    pub solve: SolveParams,
    pub surrogate: SurrogateConfig,
    /// Baseline method for `rtts` and the classical errors.
    pub standard: Method,
    /// Size of the base mesh relative to the reference mesh `H0`.
    pub base_h_ratio: f64,
}

impl ConvergenceParams {
    pub fn new(macro_levels: u32, solve: SolveParams, surrogate: SurrogateConfig) -> Self {
        Self {
            macro_levels,
            solve,
            surrogate,
            standard: Method::Standard,
            base_h_ratio: 1.0,
        }
    }
}

/// Results of an H-convergence study, one entry per macro level.
#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    /// Surrogate errors against the exact solution.
    pub rows: Vec<ConvergenceRow>,
    /// Standard rows (no rtts).
    pub standard_rows: Vec<ConvergenceRow>,
    pub surrogate: Vec<ErrorNorms>,
    pub standard: Vec<ErrorNorms>,
    /// `‖ũ_h - u_h‖ / ‖u‖` in L2 and H1.
    pub discrete_difference: Vec<(f64, f64)>,
    pub surrogate_cycles: Vec<usize>,
    pub standard_cycles: Vec<usize>,
    /// `(setup, solve)` seconds per macro level.
    pub surrogate_secs: Vec<(f64, f64)>,
    pub standard_secs: Vec<(f64, f64)>,
    pub dofs: Vec<usize>,
    pub h_ratios: Vec<f64>,
}

pub fn convergence_study(bench: &PoissonBenchmark, base: &MacroMesh, params: &ConvergenceParams) -> Result<ConvergenceStudy> {
    params.surrogate.validate()?;
    if params.macro_levels == 0 {
        return Err(Error::InvalidParameter {
            name: "macro_levels",
            message: "at least one macro level is required".into(),
        });
    }
    let mut out = ConvergenceStudy {
        rows: Vec::new(),
        standard_rows: Vec::new(),
        surrogate: Vec::new(),
        standard: Vec::new(),
        discrete_difference: Vec::new(),
        surrogate_cycles: Vec::new(),
        standard_cycles: Vec::new(),
        surrogate_secs: Vec::new(),
        standard_secs: Vec::new(),
        dofs: Vec::new(),
        h_ratios: Vec::new(),
    };
    let mut rtts = Vec::new();
    for k in 0..params.macro_levels {
        let mesh = Arc::new(base.refine_times(k));
        let std = solve_poisson(bench, &mesh, &params.solve, params.standard)?;
        let sur = solve_poisson(bench, &mesh, &params.solve, Method::Surrogate(params.surrogate))?;
        let mut diff = sur.u.clone();
        diff.axpy(-1.0, &std.u);
        let d = error_norms(&diff, |_| 0.0, |_| [0.0, 0.0])?;
        out.discrete_difference.push((d.l2 / std.errors.norm_l2, d.h1 / std.errors.norm_h1));
        out.h_ratios.push(params.base_h_ratio * 0.5f64.powi(k as i32));
        out.surrogate.push(sur.errors);
        out.standard.push(std.errors);
        out.surrogate_cycles.push(sur.stats.cycles());
        out.standard_cycles.push(std.stats.cycles());
        out.surrogate_secs.push((sur.setup_secs, sur.solve_secs));
        out.standard_secs.push((std.setup_secs, std.solve_secs));
        out.dofs.push(sur.dofs);
        rtts.push(Some(sur.total_secs() / std.total_secs()));
    }
    out.rows = convergence_rows(&out.h_ratios, &out.surrogate, &out.dofs, &rtts)?;
    out.standard_rows = convergence_rows(&out.h_ratios, &out.standard, &out.dofs, &vec![None; out.dofs.len()])?;
    Ok(out)
}

/// One row of a sampling-level study.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SamplingRow {
    /// `H_LS / h`.
    pub h_ls_ratio: f64,
    #[serde(rename = "H_ratio")]
    pub h_ratio: f64,
    pub rel_l2: f64,
    pub eoc_l2: Option<f64>,
    pub rel_l2_standard: f64,
}

/// Repeats the surrogate solves of a convergence study for the sampling
/// levels `m - offset`, one per entry of `ls_offsets`, so that
/// `H_LS = 2^offset h`. The standard solves are shared by all offsets.
/// Rows are grouped by offset.
pub fn sampling_level_study(
    bench: &PoissonBenchmark,
    base: &MacroMesh,
    params: &ConvergenceParams,
    ls_offsets: &[u32],
) -> Result<Vec<SamplingRow>> {
    let m = params.solve.level;
    if let Some(&off) = ls_offsets.iter().find(|&&off| off + 2 > m) {
        return Err(Error::InvalidParameter {
            name: "m_ls",
            message: format!("sampling offset {off} leaves fewer than 2 levels below m = {m}"),
        });
    }
    let mut errors = vec![Vec::new(); ls_offsets.len()];
    let mut standard = Vec::new();
    let mut h_ratios = Vec::new();
    for k in 0..params.macro_levels {
        let mesh = Arc::new(base.refine_times(k));
        standard.push(solve_poisson(bench, &mesh, &params.solve, params.standard)?.errors.rel_l2);
        h_ratios.push(params.base_h_ratio * 0.5f64.powi(k as i32));
        for (e, &off) in errors.iter_mut().zip(ls_offsets) {
            let config = SurrogateConfig {
                m_ls: m - off,
                ..params.surrogate
            };
            e.push(solve_poisson(bench, &mesh, &params.solve, Method::Surrogate(config))?.errors.rel_l2);
        }
    }
    let mut rows = Vec::new();
    for (e, &off) in errors.iter().zip(ls_offsets) {
        let rates = if e.len() > 1 { crate::analysis::eoc(e, &h_ratios)? } else { Vec::new() };
        for k in 0..e.len() {
            rows.push(SamplingRow {
                h_ls_ratio: (1u64 << off) as f64,
                h_ratio: h_ratios[k],
                rel_l2: e[k],
                eoc_l2: (k > 0).then(|| rates[k - 1]),
                rel_l2_standard: standard[k],
            });
        }
    }
    Ok(rows)
}
