//! Time-dependent p-Laplacian diffusion `∂u/∂t - div(|∇u|^{p-2} ∇u) = f` with
//! homogeneous Dirichlet data, backward Euler in time and Picard iterations
//! `(M + dt A(u^{l-1})) u^l = M u_prev + dt b` in every step.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use log::{debug, info, warn};

use super::{build_operator, build_operators, build_topologies, Method};
use crate::analysis::error_norms;
use crate::coefficients::{gradient_magnitude_field, CoefficientField};
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::mesh::{LevelTopology, MacroMesh};
use crate::multigrid::{Multigrid, MultigridConfig};
use crate::operator::{apply_new, load_vector, CombinedOperator, Operator};
use crate::stencil::{Form, StencilComputer};
use crate::surrogate::{InterfaceMode, SurrogateConfig, SurrogateStencilSet};

#[derive(Debug, Clone, PartialEq)]
pub struct PLaplacianParams {
    pub p: f64,
    pub dt: f64,
    pub t_end: f64,
    /// Constant right-hand side.
    pub f: f64,
    pub level: u32,
    pub m_coarse: u32,
    /// V-cycles per linear solve.
    pub cycles_per_solve: usize,
    /// Stop when `‖ũ^l - u^{l-1}‖ / ‖ũ^l‖` falls below this, where `ũ^l` is
    /// the unrelaxed solution of the frozen-coefficient system.
    pub increment_tol: f64,
    /// `u^l = u^{l-1} + ω (ũ^l - u^{l-1})`.
    pub relaxation: f64,
    pub max_picard: usize,
    pub mg: MultigridConfig,
    pub quad_degree: usize,
    /// Polynomial degree and sampling level of the surrogate run, if any.
    /// The interface and closure switches are fixed by the run.
    pub surrogate: Option<SurrogateConfig>,
    /// Where to write a point dump of the last iterate when Picard fails.
    pub dump_dir: Option<PathBuf>,
}

impl PLaplacianParams {
    /// `p = 3`, `dt = 1e-2` up to `T = 1`, and `f = 2 q̂^{p/q̂}` with
    /// `q̂ = p/(p-1)`, for which the stationary solution on the unit disk is
    /// `1 - |x|^{q̂}`.
    pub fn new(level: u32) -> Self {
        let p = 3.0;
        Self {
            p,
            dt: 1e-2,
            t_end: 1.0,
            f: stationary_rhs(p),
            level,
            m_coarse: 2,
            cycles_per_solve: 5,
            increment_tol: 1e-3,
            relaxation: default_relaxation(p),
            max_picard: 50,
            mg: MultigridConfig::default(),
            quad_degree: 2,
            surrogate: None,
            dump_dir: None,
        }
    }

    pub fn num_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, message: String| Err(Error::InvalidParameter { name, message });
        if !(self.p > 1.0) {
            return bad("p", format!("must exceed 1, got {}", self.p));
        }
        if !(self.dt > 0.0) {
            return bad("dt", format!("must be positive, got {}", self.dt));
        }
        if !(self.t_end > 0.0) {
            return bad("t_end", format!("must be positive, got {}", self.t_end));
        }
        if self.m_coarse < 2 || self.m_coarse > self.level {
            return bad("m_coarse", format!("need 2 <= m_coarse <= m = {}", self.level));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return bad("relaxation", format!("must be in (0, 1], got {}", self.relaxation));
        }
        if self.cycles_per_solve == 0 {
            return bad("cycles_per_solve", "must be positive".into());
        }
        if self.max_picard == 0 {
            return bad("max_picard", "must be positive".into());
        }
        if let Some(s) = &self.surrogate {
            s.validate()?;
        }
        self.mg.validate()
    }
}

/// `ω = min(1, 1/(p-1))`. For `p > 2` the undamped iteration has
/// amplification factors close to `-(p-2)` on stiff error modes, so it
/// stagnates at `p = 3`; this choice maps them into `[0, 1)`.
pub fn default_relaxation(p: f64) -> f64 {
    (1.0 / (p - 1.0)).min(1.0)
}

/// `2 q̂^{p/q̂}` with `q̂ = p/(p-1)`.
pub fn stationary_rhs(p: f64) -> f64 {
    let qh = p / (p - 1.0);
    2.0 * qh.powf(p / qh)
}

/// Record of one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct PLaplacianStep {
    pub time: f64,
    pub picard_iterations: usize,
    /// Relative increment of the last Picard iteration.
    pub last_increment: f64,
    pub center_value: f64,
    pub l2_norm: f64,
}

/// One trajectory.
#[derive(Debug, Clone)]
pub struct PLaplacianRun {
    pub label: String,
    pub steps: Vec<PLaplacianStep>,
    pub u: GridFunction,
    pub secs: f64,
}

impl PLaplacianRun {
    pub fn center_values(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.center_value).collect()
    }

    pub fn max_increment(&self) -> f64 {
        self.steps.iter().map(|s| s.last_increment).fold(0.0, f64::max)
    }
}

/// Builds the per-level `M + dt A(u)` operators.
struct Discretization {
    topos: Vec<Arc<LevelTopology>>,
    mass: Vec<Arc<dyn Operator>>,
    stiffness_method: Method,
    quad_degree: usize,
    dt: f64,
    mg: MultigridConfig,
}

impl Discretization {
    fn new(mesh: &Arc<MacroMesh>, params: &PLaplacianParams, surrogate: Option<SurrogateConfig>) -> Result<Self> {
        let topos = build_topologies(mesh, params.m_coarse, params.level)?;
        let mass_comp = Arc::new(StencilComputer::new(CoefficientField::constant(1.0), Form::Mass, 2));
        let (mass_method, stiffness_method) = match surrogate {
            None => (Method::Standard, Method::Standard),
            Some(cfg) => {
                // The mass matrix has no kernel, so the center gets its own polynomial.
                let mass = SurrogateConfig {
                    zero_row_sum: false,
                    symmetric_pairing: false,
                    interface_mode: InterfaceMode::ExactOnMacroBoundary,
                    ..cfg
                };
                let stiffness = SurrogateConfig {
                    zero_row_sum: true,
                    symmetric_pairing: false,
                    interface_mode: InterfaceMode::ExactOnMacroBoundary,
                    ..cfg
                };
                (Method::Surrogate(mass), Method::Surrogate(stiffness))
            }
        };
        let mass = build_operators(&topos, &mass_comp, mass_method)?;
        Ok(Self {
            topos,
            mass,
            stiffness_method,
            quad_degree: params.quad_degree,
            dt: params.dt,
            mg: params.mg,
        })
    }

    fn fine(&self) -> &Arc<LevelTopology> {
        self.topos.last().unwrap()
    }

    /// Multigrid for `M + dt A(u)` with the coefficient `|∇u|^{p-2}` frozen.
    fn system(&self, u: &GridFunction, p: f64) -> Result<Multigrid> {
        let mut field = gradient_magnitude_field(u, p)?;
        let mut ops: Vec<Arc<dyn Operator>> = Vec::with_capacity(self.topos.len());
        for (k, topo) in self.topos.iter().enumerate().rev() {
            if k + 1 < self.topos.len() {
                field = field.coarsen();
            }
            let comp = Arc::new(StencilComputer::new(
                CoefficientField::elementwise(field.clone()),
                Form::Stiffness,
                self.quad_degree,
            ));
            let a = build_operator(topo, &comp, self.stiffness_method, k + 1 < self.topos.len())?;
            if k + 1 == self.topos.len() && log::log_enabled!(log::Level::Debug) {
                if let Method::Surrogate(cfg) = self.stiffness_method {
                    let set = SurrogateStencilSet::fit(&comp, topo.mesh(), topo.level(), &cfg)?;
                    let positive = set.count_positive_off_diagonals();
                    if positive > 0 {
                        debug!("surrogate stiffness has {positive} positive off-diagonal values");
                    }
                }
            }
            ops.push(Arc::new(CombinedOperator::new(self.mass[k].clone(), 1.0, a, self.dt)?));
        }
        ops.reverse();
        Multigrid::new(ops, self.mg)
    }
}

/// Runs the standard discretization and, when `params.surrogate` is set, the
/// surrogate one. Returns `(standard, surrogate)`.
pub fn plaplacian_run(mesh: &Arc<MacroMesh>, params: &PLaplacianParams) -> Result<(PLaplacianRun, Option<PLaplacianRun>)> {
    params.validate()?;
    let standard = trajectory(mesh, params, None)?;
    let surrogate = match params.surrogate {
        Some(cfg) => Some(trajectory(mesh, params, Some(cfg))?),
        None => None,
    };
    Ok((standard, surrogate))
}

/// `‖a - b‖_{L2} / ‖b‖_{L2}` for two functions on the same level.
pub fn relative_l2_difference(a: &GridFunction, b: &GridFunction) -> Result<f64> {
    let mut d = a.clone();
    d.axpy(-1.0, b);
    let num = error_norms(&d, |_| 0.0, |_| [0.0, 0.0])?.l2;
    let den = error_norms(b, |_| 0.0, |_| [0.0, 0.0])?.l2;
    Ok(if den > 0.0 { num / den } else { num })
}

fn center_flat(topo: &LevelTopology) -> Option<usize> {
    (0..topo.num_flat()).find(|&f| {
        let x = topo.coords(f);
        x[0].abs() < 1e-12 && x[1].abs() < 1e-12
    })
}

fn trajectory(mesh: &Arc<MacroMesh>, params: &PLaplacianParams, surrogate: Option<SurrogateConfig>) -> Result<PLaplacianRun> {
    let label = if surrogate.is_some() { "surrogate" } else { "standard" };
    let start = Instant::now();
    let disc = Discretization::new(mesh, params, surrogate)?;
    let fine = disc.fine().clone();
    let center = center_flat(&fine);
    let b = load_vector(&fine, |_| params.f, 2);
    let mut u_prev = GridFunction::from_fn(&fine, |x| 0.1 * (1.0 - x[0] * x[0] - x[1] * x[1]));
    u_prev.zero_dirichlet();
    let mut steps = Vec::with_capacity(params.num_steps());

    for k in 1..=params.num_steps() {
        let mut rhs = apply_new(disc.mass[disc.mass.len() - 1].as_ref(), &u_prev)?;
        rhs.axpy(params.dt, &b);
        rhs.zero_dirichlet();
        let mut u = u_prev.clone();
        let mut increment = f64::INFINITY;
        let mut iterations = 0;
        while increment > params.increment_tol {
            if iterations == params.max_picard {
                dump_state(params, label, k, &u);
                return Err(Error::PicardDivergence {
                    step: k,
                    iterations,
                    increment,
                });
            }
            let mg = disc.system(&u, params.p)?;
            let mut next = u.clone();
            mg.solve_cycles(&mut next, &rhs, params.cycles_per_solve, None)?;
            let mut d = next.clone();
            d.axpy(-1.0, &u);
            let norm = next.norm();
            increment = if norm > 0.0 { d.norm() / norm } else { d.norm() };
            u.axpy(params.relaxation, &d);
            iterations += 1;
        }
        let l2 = error_norms(&u, |_| 0.0, |_| [0.0, 0.0])?.l2;
        let step = PLaplacianStep {
            time: k as f64 * params.dt,
            picard_iterations: iterations,
            last_increment: increment,
            center_value: center.map_or(f64::NAN, |f| u.values()[f]),
            l2_norm: l2,
        };
        if k % 10 == 0 || k == params.num_steps() {
            info!(
                "{label} t = {:.3}: {} Picard iterations, center {:.6}",
                step.time, step.picard_iterations, step.center_value
            );
        }
        steps.push(step);
        u_prev = u;
    }
    Ok(PLaplacianRun {
        label: label.into(),
        steps,
        u: u_prev,
        secs: start.elapsed().as_secs_f64(),
    })
}

fn dump_state(params: &PLaplacianParams, label: &str, step: usize, u: &GridFunction) {
    let Some(dir) = &params.dump_dir else { return };
    let path = dir.join(format!("plaplacian_{label}_step{step}.txt"));
    match std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, u.to_point_dump())) {
        Ok(()) => warn!("Picard failure state written to {}", path.display()),
        Err(e) => warn!("could not write Picard failure state to {}: {e}", path.display()),
    }
}
