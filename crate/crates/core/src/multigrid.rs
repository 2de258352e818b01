//! Geometric multigrid over the nested lattice levels of a macro-mesh.

use std::sync::Arc;

use log::debug;
use nalgebra::{DVector, LU, Dyn};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::mesh::LevelTopology;
use crate::operator::{apply, assemble, residual, stencil_offsets, Operator};

/// Solver for the coarsest level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoarseSolver {
    /// Dense LU of the assembled free-DoF block.
    DenseLu,
    /// Matrix-free conjugate gradients to a relative residual tolerance.
    Cg { tol: f64, max_iter: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultigridConfig {
    pub pre_smooth: usize,
    pub post_smooth: usize,
    pub coarse: CoarseSolver,
    /// Stop once `‖r‖ ≤ rel_tol ‖r_0‖`.
    pub rel_tol: f64,
    pub max_cycles: usize,
}

impl Default for MultigridConfig {
    fn default() -> Self {
        Self {
            pre_smooth: 2,
            post_smooth: 2,
            coarse: CoarseSolver::DenseLu,
            rel_tol: 1e-10,
            max_cycles: 50,
        }
    }
}

impl MultigridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pre_smooth + self.post_smooth == 0 {
            return Err(Error::InvalidParameter {
                name: "smoothing_steps",
                message: "at least one smoothing step is required".into(),
            });
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter {
                name: "tolerance",
                message: format!("must be positive, got {}", self.rel_tol),
            });
        }
        Ok(())
    }
}

/// Convergence record of one solve.
#[derive(Debug, Clone, Default)]
pub struct SolveStats {
    /// Free-DoF residual norms, starting with the initial one.
    pub residuals: Vec<f64>,
    pub converged: bool,
}

impl SolveStats {
    pub fn cycles(&self) -> usize {
        self.residuals.len().saturating_sub(1)
    }

    /// Per-cycle contraction factors `‖r_k‖ / ‖r_{k-1}‖`.
    pub fn contraction_factors(&self) -> Vec<f64> {
        self.residuals.windows(2).map(|w| w[1] / w[0]).collect()
    }

    /// Geometric mean of the contraction factors.
    pub fn mean_contraction(&self) -> f64 {
        let k = self.cycles();
        if k == 0 || self.residuals[0] == 0.0 {
            return 0.0;
        }
        (self.residuals[k] / self.residuals[0]).powf(1.0 / k as f64)
    }
}

/// `u_f = P u_c` by linear interpolation within each macro-element.
pub fn prolongate(coarse: &GridFunction, fine_topo: &Arc<LevelTopology>) -> Result<GridFunction> {
    coarse.ensure_synced()?;
    check_pair(coarse.topology(), fine_topo)?;
    let cl = coarse.topology().lattice();
    let fl = fine_topo.lattice();
    let mut fine = GridFunction::zeros(fine_topo);
    fine.values_mut()
        .par_chunks_mut(fine_topo.block_len())
        .enumerate()
        .for_each(|(t, fb)| {
            let cb = coarse.block(t);
            for (k, (i, j)) in fl.points().enumerate() {
                fb[k] = match (i % 2, j % 2) {
                    (0, 0) => cb[cl.index(i / 2, j / 2)],
                    (1, 0) => 0.5 * (cb[cl.index(i / 2, j / 2)] + cb[cl.index(i / 2 + 1, j / 2)]),
                    (0, _) => 0.5 * (cb[cl.index(i / 2, j / 2)] + cb[cl.index(i / 2, j / 2 + 1)]),
                    _ => 0.5 * (cb[cl.index(i / 2 + 1, j / 2)] + cb[cl.index(i / 2, j / 2 + 1)]),
                };
            }
        });
    fine.sync();
    Ok(fine)
}

/// `r_c = Pᵀ r_f`, with Dirichlet DoFs zeroed.
pub fn restrict(fine: &GridFunction, coarse_topo: &Arc<LevelTopology>) -> Result<GridFunction> {
    fine.ensure_synced()?;
    check_pair(coarse_topo, fine.topology())?;
    let ftopo = fine.topology().clone();
    let cl = coarse_topo.lattice();
    let fl = ftopo.lattice();
    let fblock = ftopo.block_len();
    let mut coarse = GridFunction::zeros(coarse_topo);
    coarse
        .values_mut()
        .par_chunks_mut(coarse_topo.block_len())
        .enumerate()
        .for_each(|(t, cb)| {
            let fb = fine.block(t);
            for (k, (i, j)) in fl.points().enumerate() {
                if !ftopo.is_owned(t * fblock + k) {
                    continue;
                }
                let v = fb[k];
                match (i % 2, j % 2) {
                    (0, 0) => cb[cl.index(i / 2, j / 2)] += v,
                    (1, 0) => {
                        cb[cl.index(i / 2, j / 2)] += 0.5 * v;
                        cb[cl.index(i / 2 + 1, j / 2)] += 0.5 * v;
                    }
                    (0, _) => {
                        cb[cl.index(i / 2, j / 2)] += 0.5 * v;
                        cb[cl.index(i / 2, j / 2 + 1)] += 0.5 * v;
                    }
                    _ => {
                        cb[cl.index(i / 2 + 1, j / 2)] += 0.5 * v;
                        cb[cl.index(i / 2, j / 2 + 1)] += 0.5 * v;
                    }
                }
            }
        });
    coarse_topo.sum_aliases(coarse.values_mut());
    coarse.assume_synced();
    coarse.zero_dirichlet();
    Ok(coarse)
}

fn check_pair(coarse: &LevelTopology, fine: &LevelTopology) -> Result<()> {
    if !Arc::ptr_eq(coarse.mesh(), fine.mesh()) || coarse.level() + 1 != fine.level() {
        return Err(Error::LevelMismatch {
            expected: coarse.level() + 1,
            found: fine.level(),
        });
    }
    Ok(())
}

/// One hybrid Gauss-Seidel sweep: lexicographic within the interior of every
/// macro-element (in parallel), then a Jacobi update of the macro-boundary
/// rows from the freshly smoothed interior. Dirichlet values are left
/// untouched.
pub fn smooth(op: &dyn Operator, u: &mut GridFunction, f: &GridFunction) -> Result<()> {
    u.ensure_synced()?;
    f.ensure_synced()?;
    let topo = op.topology().clone();
    let lattice = topo.lattice();
    let n = lattice.n;
    let block = topo.block_len();
    let fv = f.values();
    let data = u.values_mut();
    data.par_chunks_mut(block).enumerate().for_each(|(t, ub)| {
        let fb = &fv[t * block..(t + 1) * block];
        let mut buf = Vec::new();
        for j in 1..n.saturating_sub(1) {
            let row = op.row_stencils(t, j, &mut buf);
            let off = stencil_offsets(n, j);
            let base = lattice.row_offset(j) + 1;
            for (k, s) in row.iter().enumerate() {
                let idx = base + k;
                let mut acc = fb[idx];
                for d in 1..7 {
                    acc -= s[d] * ub[(idx as isize + off[d]) as usize];
                }
                ub[idx] = acc / s[0];
            }
        }
    });
    let rows = &op.interface().rows;
    let updates: Vec<f64> = rows
        .iter()
        .map(|row| {
            let mut acc = fv[row.flat];
            for e in &row.entries {
                acc -= e.value * data[e.col_flat];
            }
            acc / row.diag
        })
        .collect();
    for (row, v) in rows.iter().zip(updates) {
        data[row.flat] = v;
    }
    u.sync();
    Ok(())
}

/// Fails on a vanishing diagonal entry, which the smoother divides by.
pub fn check_diagonal(op: &dyn Operator) -> Result<()> {
    let topo = op.topology();
    let n = topo.lattice().n;
    let mut buf = Vec::new();
    for t in 0..topo.num_triangles() {
        for j in 1..n.saturating_sub(1) {
            if let Some(k) = op.row_stencils(t, j, &mut buf).iter().position(|s| s[0] == 0.0) {
                return Err(Error::ZeroDiagonal { triangle: t, i: k + 1, j });
            }
        }
    }
    if let Some(row) = op.interface().rows.iter().find(|r| r.diag == 0.0) {
        let (t, i, j) = topo.locate(row.flat);
        return Err(Error::ZeroDiagonal { triangle: t, i, j });
    }
    Ok(())
}

enum CoarseFactor {
    Lu { free: Vec<usize>, lu: LU<f64, Dyn, Dyn> },
    Cg { tol: f64, max_iter: usize },
}

/// Operators on consecutive levels, coarsest first, and the V-cycle built on
/// them.
pub struct Multigrid {
    ops: Vec<Arc<dyn Operator>>,
    config: MultigridConfig,
    coarse: CoarseFactor,
}

impl Multigrid {
    pub fn new(ops: Vec<Arc<dyn Operator>>, config: MultigridConfig) -> Result<Self> {
        config.validate()?;
        if ops.is_empty() {
            return Err(Error::InvalidParameter {
                name: "levels",
                message: "no operators given".into(),
            });
        }
        for pair in ops.windows(2) {
            check_pair(pair[0].topology(), pair[1].topology())?;
        }
        for op in &ops {
            check_diagonal(op.as_ref())?;
        }
        let coarse = match config.coarse {
            CoarseSolver::DenseLu => {
                let a = assemble(ops[0].as_ref())?;
                let topo = ops[0].topology();
                let free: Vec<usize> = (0..topo.num_global()).filter(|&g| !topo.is_dirichlet(g)).collect();
                let dense = a.principal_submatrix(&free).to_dense();
                let lu = dense.lu();
                if !lu.is_invertible() {
                    return Err(Error::CoarseSolve("coarse matrix is singular".into()));
                }
                CoarseFactor::Lu { free, lu }
            }
            CoarseSolver::Cg { tol, max_iter } => CoarseFactor::Cg { tol, max_iter },
        };
        Ok(Self { ops, config, coarse })
    }

    pub fn num_levels(&self) -> usize {
        self.ops.len()
    }

    pub fn finest(&self) -> &Arc<dyn Operator> {
        self.ops.last().unwrap()
    }

    pub fn operators(&self) -> &[Arc<dyn Operator>] {
        &self.ops
    }

    pub fn config(&self) -> &MultigridConfig {
        &self.config
    }

    fn coarse_solve(&self, u: &mut GridFunction, f: &GridFunction) -> Result<()> {
        match &self.coarse {
            CoarseFactor::Lu { free, lu } => {
                let b = DVector::from_iterator(free.len(), free.iter().map(|&g| f.global_value(g)));
                let x = lu.solve(&b).ok_or_else(|| Error::CoarseSolve("LU solve failed".into()))?;
                let topo = u.topology().clone();
                let data = u.values_mut();
                for (k, &g) in free.iter().enumerate() {
                    for &slot in topo.aliases(g) {
                        data[slot] = x[k];
                    }
                }
                u.assume_synced();
                Ok(())
            }
            CoarseFactor::Cg { tol, max_iter } => {
                let stats = conjugate_gradient(self.ops[0].as_ref(), u, f, *tol, *max_iter)?;
                if !stats.converged {
                    return Err(Error::CoarseSolve(format!(
                        "CG stopped after {} iterations at residual {:.3e}",
                        stats.cycles(),
                        stats.residuals.last().copied().unwrap_or(f64::NAN)
                    )));
                }
                Ok(())
            }
        }
    }

    fn cycle(&self, level: usize, u: &mut GridFunction, f: &GridFunction) -> Result<()> {
        let op = self.ops[level].as_ref();
        if level == 0 {
            return self.coarse_solve(u, f);
        }
        for _ in 0..self.config.pre_smooth {
            smooth(op, u, f)?;
        }
        let r = residual(op, u, f)?;
        let coarse_topo = self.ops[level - 1].topology();
        let rc = restrict(&r, coarse_topo)?;
        let mut ec = GridFunction::zeros(coarse_topo);
        self.cycle(level - 1, &mut ec, &rc)?;
        let ef = prolongate(&ec, op.topology())?;
        u.axpy(1.0, &ef);
        for _ in 0..self.config.post_smooth {
            smooth(op, u, f)?;
        }
        Ok(())
    }

    /// One V-cycle on the finest level.
    pub fn v_cycle(&self, u: &mut GridFunction, f: &GridFunction) -> Result<()> {
        self.cycle(self.ops.len() - 1, u, f)
    }

    /// V-cycles until the relative residual tolerance or the cycle limit. The
    /// Dirichlet values of `u` are kept; the rows of `f` there are ignored.
    pub fn solve(&self, u: &mut GridFunction, f: &GridFunction) -> Result<SolveStats> {
        self.solve_cycles(u, f, self.config.max_cycles, Some(self.config.rel_tol))
    }

    /// Exactly `cycles` V-cycles unless `rel_tol` is reached first.
    pub fn solve_cycles(
        &self,
        u: &mut GridFunction,
        f: &GridFunction,
        cycles: usize,
        rel_tol: Option<f64>,
    ) -> Result<SolveStats> {
        let op = self.finest().as_ref();
        let mut stats = SolveStats::default();
        let r0 = residual(op, u, f)?.free_norm();
        stats.residuals.push(r0);
        if r0 == 0.0 {
            stats.converged = true;
            return Ok(stats);
        }
        for k in 0..cycles {
            self.v_cycle(u, f)?;
            let r = residual(op, u, f)?.free_norm();
            debug!("cycle {}: residual {:.3e} (factor {:.3})", k + 1, r, r / stats.residuals[k]);
            stats.residuals.push(r);
            if let Some(tol) = rel_tol {
                if r <= tol * r0 {
                    stats.converged = true;
                    break;
                }
            }
        }
        Ok(stats)
    }
}

/// Conjugate gradients on the free DoFs of a symmetric positive definite
/// operator. Dirichlet values of `u` are kept.
pub fn conjugate_gradient(
    op: &dyn Operator,
    u: &mut GridFunction,
    f: &GridFunction,
    rel_tol: f64,
    max_iter: usize,
) -> Result<SolveStats> {
    let mut r = residual(op, u, f)?;
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    let r0 = rr.sqrt();
    let mut stats = SolveStats {
        residuals: vec![r0],
        converged: r0 == 0.0,
    };
    let mut ap = GridFunction::zeros(op.topology());
    for _ in 0..max_iter {
        if stats.converged {
            break;
        }
        apply(op, &p, &mut ap)?;
        ap.zero_dirichlet();
        let pap = p.dot(&ap);
        if pap <= 0.0 {
            return Err(Error::CoarseSolve(format!("operator is not positive definite (pᵀAp = {pap:.3e})")));
        }
        let alpha = rr / pap;
        u.axpy(alpha, &p);
        r.axpy(-alpha, &ap);
        let rr_new = r.dot(&r);
        stats.residuals.push(rr_new.sqrt());
        if rr_new.sqrt() <= rel_tol * r0 {
            stats.converged = true;
        }
        p.scale(rr_new / rr);
        p.axpy(1.0, &r);
        rr = rr_new;
    }
    Ok(stats)
}

/// `‖A u - f‖` on free DoFs.
pub fn residual_norm(op: &dyn Operator, u: &GridFunction, f: &GridFunction) -> Result<f64> {
    Ok(residual(op, u, f)?.free_norm())
}
