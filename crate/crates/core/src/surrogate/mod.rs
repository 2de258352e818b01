//! Polynomial surrogates of stencil functions.
//!
//! For every macro-element and stencil direction the true stencil function is
//! sampled on a (possibly coarser) lattice and replaced by its least-squares
//! polynomial fit in the macro-element's reference coordinates.

mod forward;
mod lstsq;
mod poly;

pub use forward::{RowEvaluator, MAX_DEGREE};
pub use lstsq::{first_order_optimality, fit_polynomial, qrcp_solve, Fit, LeastSquares, RANK_TOLERANCE};
pub use poly::{monomial_index, monomials, num_coeffs, Poly2};

use std::str::FromStr;

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{Direction, LatticeIndex, MacroMesh, Point};
use crate::stencil::{sampling_points, FineGeometry, Form, Sample, Stencil, StencilComputer};

/// How rows and couplings on macro-element boundaries are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InterfaceMode {
    /// Couplings between two macro-boundary points are exact; any coupling
    /// involving a macro-interior point uses the surrogate of that element.
    SurrogateCoupling,
    /// Every row of a macro-boundary point is exact.
    ExactOnMacroBoundary,
}

impl InterfaceMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::SurrogateCoupling => "surrogate-coupling",
            Self::ExactOnMacroBoundary => "exact-on-macro-boundary",
        }
    }
}

impl FromStr for InterfaceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "surrogate-coupling" => Ok(Self::SurrogateCoupling),
            "exact-on-macro-boundary" => Ok(Self::ExactOnMacroBoundary),
            other => Err(Error::InvalidParameter {
                name: "interface_mode",
                message: format!("unknown mode `{other}`"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurrogateConfig {
    /// Polynomial degree, `1..=8`.
    pub q: usize,
    /// Sampling level; clamped to the operator level.
    pub m_ls: u32,
    /// Define the center entry as minus the sum of the off-diagonals.
    pub zero_row_sum: bool,
    /// Fit only `E, N, NW` and derive the opposite directions by shifting.
    pub symmetric_pairing: bool,
    pub interface_mode: InterfaceMode,
}

impl SurrogateConfig {
    pub fn new(q: usize, m_ls: u32) -> Self {
        Self {
            q,
            m_ls,
            zero_row_sum: true,
            symmetric_pairing: true,
            interface_mode: InterfaceMode::SurrogateCoupling,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_DEGREE).contains(&self.q) {
            return Err(Error::InvalidParameter {
                name: "q",
                message: format!("must be in 1..={MAX_DEGREE}, got {}", self.q),
            });
        }
        if self.m_ls < 2 {
            return Err(Error::InvalidParameter {
                name: "m_ls",
                message: format!("must be at least 2, got {}", self.m_ls),
            });
        }
        Ok(())
    }

    /// Directions whose stencil functions are fitted.
    pub fn fitted_directions(&self) -> Vec<Direction> {
        let mut dirs = if self.symmetric_pairing {
            Direction::FORWARD.to_vec()
        } else {
            Direction::OFF_DIAGONAL.to_vec()
        };
        if !self.zero_row_sum {
            dirs.insert(0, Direction::C);
        }
        dirs
    }
}

/// `Φ̃^{-δ}(ξ) = Φ̃^{δ}(ξ - δ h)`: the polynomial of the opposite direction
/// that makes the surrogate matrix symmetric.
pub fn symmetric_pair(poly: &Poly2, delta: Direction, h: f64) -> Poly2 {
    let (di, dj) = delta.offset();
    poly.shifted([-(di as f64) * h, -(dj as f64) * h])
}

/// Negated coefficient-wise sum of the six off-diagonal polynomials.
pub fn zero_row_sum_close(off_diagonals: &[&Poly2]) -> Poly2 {
    let mut c = Poly2::zero(off_diagonals[0].degree());
    for p in off_diagonals {
        c.add_assign_scaled(-1.0, p);
    }
    c
}

/// Diagnostics of one polynomial fit.
#[derive(Debug, Clone)]
pub struct FitReport {
    pub triangle: usize,
    pub direction: Direction,
    pub samples: usize,
    pub condition: f64,
    pub residual_norm: f64,
    /// `|Σ (Φ - Φ̃)|` over the fitting samples.
    pub optimality: f64,
}

/// Surrogate polynomials of all seven directions on one macro-element.
#[derive(Debug, Clone)]
pub struct MacroSurrogate {
    /// Indexed by [`Direction::index`]. With zero-row-sum closure the center
    /// entry holds the closure polynomial (for inspection only; evaluation
    /// closes on the evaluated values).
    pub polys: Vec<Poly2>,
}

/// Fitted surrogate stencils for one form on one lattice level.
#[derive(Debug, Clone)]
pub struct SurrogateStencilSet {
    level: u32,
    m_ls: u32,
    config: SurrogateConfig,
    macros: Vec<MacroSurrogate>,
    reports: Vec<FitReport>,
}

impl SurrogateStencilSet {
    /// Samples and fits every macro-element. The sampling level is
    /// `min(config.m_ls, level)`.
    pub fn fit(comp: &StencilComputer, mesh: &MacroMesh, level: u32, config: &SurrogateConfig) -> Result<Self> {
        config.validate()?;
        if level < 2 {
            return Err(Error::InvalidParameter {
                name: "m",
                message: format!("surrogates need interior points (level >= 2), got {level}"),
            });
        }
        let m_ls = config.m_ls.min(level);
        let dirs = config.fitted_directions();
        let n = (1usize << level) as f64;
        let per_macro: Vec<(MacroSurrogate, Vec<FitReport>)> = (0..mesh.num_triangles())
            .into_par_iter()
            .map(|t| -> Result<_> {
                let stencils = sample_stencils(comp, mesh, t, level, m_ls);
                let mut polys: Vec<Option<Poly2>> = vec![None; 7];
                let mut reports = Vec::new();
                for &d in &dirs {
                    let samples = extract_samples(&stencils, level, m_ls, d);
                    let fit = fit_polynomial(&samples, config.q)?;
                    reports.push(FitReport {
                        triangle: t,
                        direction: d,
                        samples: fit.samples,
                        condition: fit.condition,
                        residual_norm: fit.residual_norm,
                        optimality: first_order_optimality(&samples, &fit.poly),
                    });
                    polys[d.index()] = Some(fit.poly);
                }
                if config.symmetric_pairing {
                    for d in Direction::FORWARD {
                        let p = symmetric_pair(polys[d.index()].as_ref().unwrap(), d, 1.0 / n);
                        polys[d.opposite().index()] = Some(p);
                    }
                }
                if config.zero_row_sum {
                    let off: Vec<&Poly2> = Direction::OFF_DIAGONAL
                        .iter()
                        .map(|d| polys[d.index()].as_ref().unwrap())
                        .collect();
                    polys[0] = Some(zero_row_sum_close(&off));
                }
                let polys = polys.into_iter().map(Option::unwrap).collect();
                Ok((MacroSurrogate { polys }, reports))
            })
            .collect::<Result<_>>()?;
        let mut macros = Vec::with_capacity(per_macro.len());
        let mut reports = Vec::new();
        for (m, r) in per_macro {
            macros.push(m);
            reports.extend(r);
        }
        let set = Self {
            level,
            m_ls,
            config: *config,
            macros,
            reports,
        };
        if comp.form == Form::Stiffness {
            let positive = set.count_positive_off_diagonals();
            if positive > 0 {
                warn!("{positive} off-diagonal surrogate stencil values are positive at level {level}");
            }
        }
        Ok(set)
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn sampling_level(&self) -> u32 {
        self.m_ls
    }

    pub fn config(&self) -> &SurrogateConfig {
        &self.config
    }

    pub fn reports(&self) -> &[FitReport] {
        &self.reports
    }

    pub fn macro_surrogate(&self, t: usize) -> &MacroSurrogate {
        &self.macros[t]
    }

    pub fn num_triangles(&self) -> usize {
        self.macros.len()
    }

    /// `Φ̃^δ_T` at reference point `xi`. The center value under zero-row-sum
    /// closure is minus the sum of the evaluated off-diagonals.
    pub fn eval_direction(&self, t: usize, d: Direction, xi: Point) -> f64 {
        let polys = &self.macros[t].polys;
        if d == Direction::C && self.config.zero_row_sum {
            -Direction::OFF_DIAGONAL.iter().map(|o| polys[o.index()].eval(xi)).sum::<f64>()
        } else {
            polys[d.index()].eval(xi)
        }
    }

    /// Surrogate stencil at lattice point `(i, j)` by direct evaluation.
    pub fn stencil_at(&self, t: usize, i: usize, j: usize) -> Stencil {
        let h = 1.0 / (1usize << self.level) as f64;
        let xi = [i as f64 * h, j as f64 * h];
        let polys = &self.macros[t].polys;
        let mut s = [0.0; 7];
        for d in Direction::OFF_DIAGONAL {
            s[d.index()] = polys[d.index()].eval(xi);
        }
        s[0] = if self.config.zero_row_sum {
            -s[1..].iter().sum::<f64>()
        } else {
            polys[0].eval(xi)
        };
        s
    }

    /// Checked variant of [`SurrogateStencilSet::stencil_at`].
    pub fn surrogate_stencil_at(&self, t: usize, i: usize, j: usize) -> Result<Stencil> {
        let lattice = LatticeIndex::new(self.level);
        lattice.checked_index(i, j)?;
        if !lattice.is_interior(i, j) {
            return Err(Error::NotInterior {
                level: self.level,
                i,
                j,
            });
        }
        Ok(self.stencil_at(t, i, j))
    }

    /// Stencils of the interior points `i = 1..n-1-j` of row `j`, by forward
    /// differences.
    pub fn row_stencils(&self, t: usize, j: usize, out: &mut [Stencil]) {
        let n = 1usize << self.level;
        let len = n - 1 - j;
        debug_assert!(out.len() >= len);
        if len == 0 {
            return;
        }
        let h = 1.0 / n as f64;
        let y = j as f64 * h;
        let q = self.config.q;
        let polys = &self.macros[t].polys;
        let mut e = [0.0; MAX_DEGREE + 1];
        let first = if self.config.zero_row_sum { 1 } else { 0 };
        for d in first..7 {
            polys[d].restrict_to_row(y, &mut e[..=q]);
            let mut ev = RowEvaluator::new(&e[..=q], h, h);
            out[0][d] = ev.value();
            for s in out[1..len].iter_mut() {
                s[d] = ev.step();
            }
        }
        if self.config.zero_row_sum {
            for s in out[..len].iter_mut() {
                s[0] = -(s[1] + s[2] + s[3] + s[4] + s[5] + s[6]);
            }
        }
    }

    /// Number of interior stencil values `> 0` in off-diagonal directions.
    pub fn count_positive_off_diagonals(&self) -> usize {
        let n = 1usize << self.level;
        let mut row = vec![[0.0; 7]; n];
        let mut count = 0;
        for t in 0..self.macros.len() {
            for j in 1..n.saturating_sub(1) {
                self.row_stencils(t, j, &mut row);
                for s in &row[..n - 1 - j] {
                    let tol = 1e-12 * s[0].abs();
                    count += s[1..].iter().filter(|&&v| v > tol).count();
                }
            }
        }
        count
    }
}

/// True stencils at every interior point of the sampling lattice, in its
/// storage order, evaluated with the fine-level geometry.
fn sample_stencils(comp: &StencilComputer, mesh: &MacroMesh, t: usize, level: u32, m_ls: u32) -> Vec<Stencil> {
    if m_ls == level {
        return comp.macro_stencils(mesh, level, t);
    }
    let geom = FineGeometry::new(mesh.map(t), level);
    let stride = 1usize << (level - m_ls);
    LatticeIndex::new(m_ls)
        .interior_points()
        .map(|(i, j)| comp.stencil(&geom, t, i * stride, j * stride))
        .collect()
}

fn extract_samples(stencils: &[Stencil], level: u32, m_ls: u32, d: Direction) -> Vec<Sample> {
    let coarse = LatticeIndex::new(m_ls);
    let h = 1.0 / coarse.n as f64;
    // Position of each interior point in the interior storage order.
    let interior_rank = |i: usize, j: usize| -> usize {
        // Rows 1..j hold (n - 1 - r) interior points each.
        let before: usize = (1..j).map(|r| coarse.n - 1 - r).sum();
        before + i - 1
    };
    sampling_points(m_ls, level, d)
        .into_iter()
        .map(|(i, j)| Sample {
            xi: [i as f64 * h, j as f64 * h],
            value: stencils[interior_rank(i, j)][d.index()],
        })
        .collect()
}
