//! Measurements: stencil consistency, eigenvalue perturbation, discretization
//! errors and convergence orders.

use std::io::Write;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::mesh::Direction;
use crate::operator::{apply, assemble, Operator};
use crate::quadrature::QuadratureRule;
use crate::sparse::CsrMatrix;
use crate::stencil::{FineGeometry, FineTriangles};

/// Largest dense matrix handed to the eigenvalue solver.
pub const EIGEN_DIMENSION_CAP: usize = 2000;

/// Location and size of the largest stencil difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StencilDiff {
    pub value: f64,
    pub triangle: usize,
    pub i: usize,
    pub j: usize,
    pub direction: Direction,
    /// Largest absolute interior stencil entry of the first operator.
    pub reference: f64,
}

/// `max |Φ^δ_T(x_i) - Φ̃^δ_T(x_i)|` over all macro-interior points and
/// directions. Macro-boundary rows are not compared.
pub fn max_norm_diff(a: &dyn Operator, b: &dyn Operator) -> Result<StencilDiff> {
    if a.level() != b.level() || a.topology().num_triangles() != b.topology().num_triangles() {
        return Err(Error::LevelMismatch {
            expected: a.level(),
            found: b.level(),
        });
    }
    let topo = a.topology();
    let n = topo.lattice().n;
    let per_macro: Vec<StencilDiff> = (0..topo.num_triangles())
        .into_par_iter()
        .map(|t| {
            let (mut ba, mut bb) = (Vec::new(), Vec::new());
            let mut best = StencilDiff {
                value: 0.0,
                triangle: t,
                i: 0,
                j: 0,
                direction: Direction::C,
                reference: 0.0,
            };
            for j in 1..n.saturating_sub(1) {
                let ra = a.row_stencils(t, j, &mut ba);
                let rb = b.row_stencils(t, j, &mut bb);
                for (k, (sa, sb)) in ra.iter().zip(rb).enumerate() {
                    for d in Direction::ALL {
                        let x = d.index();
                        best.reference = best.reference.max(sa[x].abs());
                        let diff = (sa[x] - sb[x]).abs();
                        if diff > best.value {
                            best = StencilDiff {
                                value: diff,
                                i: k + 1,
                                j,
                                direction: d,
                                ..best
                            };
                        }
                    }
                }
            }
            best
        })
        .collect();
    let reference = per_macro.iter().map(|d| d.reference).fold(0.0, f64::max);
    let best = per_macro
        .into_iter()
        .reduce(|x, y| if y.value > x.value { y } else { x })
        .unwrap();
    Ok(StencilDiff { reference, ..best })
}

/// Eigenvalues (ascending) and orthonormal eigenvectors (columns) of a
/// symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigen(m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::DimensionMismatch(format!("{}x{} is not square", n, m.ncols())));
    }
    if n > EIGEN_DIMENSION_CAP {
        return Err(Error::DimensionCap {
            dim: n,
            cap: EIGEN_DIMENSION_CAP,
        });
    }
    let scale = m.amax();
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    // Row-major working copy.
    let mut a: Vec<f64> = (0..n * n).map(|k| 0.5 * (m[(k / n, k % n)] + m[(k % n, k / n)])).collect();
    let mut v = vec![0.0; n * n];
    for k in 0..n {
        v[k * n + k] = 1.0;
    }
    let frob: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q] * a[p * n + q])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * frob || frob == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[x * n + x].total_cmp(&a[y * n + y]));
    let values = order.iter().map(|&k| a[k * n + k]).collect();
    let vectors = DMatrix::from_fn(n, n, |r, c| v[r * n + order[c]]);
    Ok((values, vectors))
}

pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    Ok(symmetric_eigen(m)?.0)
}

/// Eigenvalue perturbation measurements for a symmetric pair `(M, N)`.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    pub eig_m: Vec<f64>,
    pub eig_n: Vec<f64>,
    /// `|λ_k(M) - λ_k(N)|`.
    pub gaps: Vec<f64>,
    pub inf_norm_diff: f64,
    pub max_norm_diff: f64,
    /// Largest number of nonzeros in a row of `M - N`.
    pub ell: usize,
    pub slack: f64,
}

impl SpectralReport {
    pub fn max_gap(&self) -> f64 {
        self.gaps.iter().copied().fold(0.0, f64::max)
    }

    /// `max_k |λ_k(M) - λ_k(N)| ≤ ‖M - N‖_∞` up to the slack.
    pub fn infinity_bound_holds(&self) -> bool {
        self.max_gap() <= self.inf_norm_diff + self.slack
    }

    /// `max_k |λ_k(M) - λ_k(N)| ≤ ℓ(M - N) ‖M - N‖_max` up to the slack.
    pub fn sparsity_bound_holds(&self) -> bool {
        self.max_gap() <= self.ell as f64 * self.max_norm_diff + self.slack
    }

    pub fn passes(&self) -> bool {
        self.infinity_bound_holds() && self.sparsity_bound_holds()
    }
}

/// Compares the spectra of two symmetric matrices of equal size against the
/// row-sum and sparsity bounds. The slack is `1e-10 ‖M‖_∞`.
pub fn spectral_bound_check(m: &DMatrix<f64>, n: &DMatrix<f64>) -> Result<SpectralReport> {
    if m.shape() != n.shape() {
        return Err(Error::DimensionMismatch(format!("{:?} vs {:?}", m.shape(), n.shape())));
    }
    let eig_m = symmetric_eigenvalues(m)?;
    let eig_n = symmetric_eigenvalues(n)?;
    let d = m - n;
    let row_sums = |x: &DMatrix<f64>| x.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let ell = d.row_iter().map(|r| r.iter().filter(|&&v| v != 0.0).count()).max().unwrap_or(0);
    Ok(SpectralReport {
        gaps: eig_m.iter().zip(&eig_n).map(|(a, b)| (a - b).abs()).collect(),
        eig_m,
        eig_n,
        inf_norm_diff: row_sums(&d),
        max_norm_diff: d.amax(),
        ell,
        slack: 1e-10 * row_sums(m),
    })
}

/// [`spectral_bound_check`] on assembled sparse matrices.
pub fn spectral_bound_check_sparse(m: &CsrMatrix, n: &CsrMatrix) -> Result<SpectralReport> {
    for x in [m, n] {
        if x.nrows() > EIGEN_DIMENSION_CAP {
            return Err(Error::DimensionCap {
                dim: x.nrows(),
                cap: EIGEN_DIMENSION_CAP,
            });
        }
    }
    spectral_bound_check(&m.to_dense(), &n.to_dense())
}

/// The assembled operator restricted to the free (non-Dirichlet) DoFs.
pub fn assemble_free(op: &dyn Operator) -> Result<CsrMatrix> {
    let topo = op.topology();
    let free: Vec<usize> = (0..topo.num_global()).filter(|&g| !topo.is_dirichlet(g)).collect();
    Ok(assemble(op)?.principal_submatrix(&free))
}

/// A random symmetric pair `(M, M + E)` of size `dim`: entries of `M` are
/// uniform in `[-1, 1]`, and `E` is a symmetric perturbation with a random
/// sparsity pattern and magnitude `10^u`, `u` uniform in `[-8, 0]`.
pub fn random_symmetric_pair(rng: &mut impl Rng, dim: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut m = DMatrix::zeros(dim, dim);
    let mut e = DMatrix::zeros(dim, dim);
    let scale = 10f64.powf(rng.gen_range(-8.0..=0.0));
    let density: f64 = rng.gen_range(0.1..=1.0);
    for i in 0..dim {
        for j in 0..=i {
            let a = rng.gen_range(-1.0..=1.0);
            m[(i, j)] = a;
            m[(j, i)] = a;
            if rng.gen_bool(density) {
                let b = scale * rng.gen_range(-1.0..=1.0);
                e[(i, j)] = b;
                e[(j, i)] = b;
            }
        }
    }
    let n = &m + e;
    (m, n)
}

/// Wall-clock times of repeated operator applications.
#[derive(Debug, Clone, PartialEq)]
pub struct ApplyTiming {
    /// Seconds per application, warm-up excluded.
    pub samples: Vec<f64>,
    pub dofs: usize,
}

impl ApplyTiming {
    pub fn median(&self) -> f64 {
        let mut s = self.samples.clone();
        s.sort_by(f64::total_cmp);
        let k = s.len() / 2;
        if s.len() % 2 == 1 {
            s[k]
        } else {
            0.5 * (s[k - 1] + s[k])
        }
    }

    /// DoFs per second at the median time.
    pub fn throughput(&self) -> f64 {
        self.dofs as f64 / self.median()
    }
}

/// Times `reps` applications of `op` to `u` after `warmup` untimed ones.
pub fn time_applies(op: &dyn Operator, u: &GridFunction, warmup: usize, reps: usize) -> Result<ApplyTiming> {
    if reps == 0 {
        return Err(Error::InvalidParameter {
            name: "reps",
            message: "at least one repetition is required".into(),
        });
    }
    let mut v = u.clone();
    for _ in 0..warmup {
        apply(op, u, &mut v)?;
    }
    let samples = (0..reps)
        .map(|_| {
            let start = Instant::now();
            apply(op, u, &mut v).map(|_| start.elapsed().as_secs_f64())
        })
        .collect::<Result<_>>()?;
    Ok(ApplyTiming {
        samples,
        dofs: op.topology().num_global(),
    })
}

/// Absolute and relative errors of a discrete function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorNorms {
    pub l2: f64,
    pub h1: f64,
    pub rel_l2: f64,
    pub rel_h1: f64,
    /// Norms of the exact solution.
    pub norm_l2: f64,
    pub norm_h1: f64,
}

/// `‖u_h - u‖` in L2 and H1 (full norm), absolute and relative to the norms
/// of `u`, with the degree-4 rule on every fine triangle.
pub fn error_norms(
    u_h: &GridFunction,
    u: impl Fn([f64; 2]) -> f64 + Sync,
    grad_u: impl Fn([f64; 2]) -> [f64; 2] + Sync,
) -> Result<ErrorNorms> {
    u_h.ensure_synced()?;
    let topo = u_h.topology();
    let quad = QuadratureRule::with_degree(4);
    let lattice = topo.lattice();
    let tris = FineTriangles::new(topo.level());
    let sums = (0..topo.num_triangles())
        .into_par_iter()
        .map(|t| {
            let geom = FineGeometry::new(topo.mesh().map(t), topo.level());
            let block = u_h.block(t);
            let mut s = [0.0; 4];
            for tri in tris.iter() {
                let vals = tri.vertices().map(|(i, j)| block[lattice.index(i, j)]);
                let grads = geom.grads(tri);
                let gh = [
                    vals[0] * grads[0][0] + vals[1] * grads[1][0] + vals[2] * grads[2][0],
                    vals[0] * grads[0][1] + vals[1] * grads[1][1] + vals[2] * grads[2][1],
                ];
                for (k, (xi, w)) in quad.points.iter().zip(&quad.weights).enumerate() {
                    let x = geom.tri_point(tri, *xi);
                    let b = quad.barycentric(k);
                    let uh = b[0] * vals[0] + b[1] * vals[1] + b[2] * vals[2];
                    let ue = u(x);
                    let ge = grad_u(x);
                    let wa = w * 2.0 * geom.area;
                    s[0] += wa * (uh - ue).powi(2);
                    s[1] += wa * ((gh[0] - ge[0]).powi(2) + (gh[1] - ge[1]).powi(2));
                    s[2] += wa * ue * ue;
                    s[3] += wa * (ge[0] * ge[0] + ge[1] * ge[1]);
                }
            }
            s
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold([0.0; 4], |acc, s| [acc[0] + s[0], acc[1] + s[1], acc[2] + s[2], acc[3] + s[3]]);
    let l2 = sums[0].sqrt();
    let h1 = (sums[0] + sums[1]).sqrt();
    let rel = |e: f64, r: f64| if r > 0.0 { e / r } else { e };
    Ok(ErrorNorms {
        l2,
        h1,
        rel_l2: rel(l2, sums[2].sqrt()),
        rel_h1: rel(h1, (sums[2] + sums[3]).sqrt()),
        norm_l2: sums[2].sqrt(),
        norm_h1: (sums[2] + sums[3]).sqrt(),
    })
}

/// `rate_k = log(e_{k-1}/e_k) / log(s_{k-1}/s_k)` for `k ≥ 1`.
pub fn eoc(errors: &[f64], sizes: &[f64]) -> Result<Vec<f64>> {
    if errors.len() != sizes.len() {
        return Err(Error::DimensionMismatch(format!("{} errors for {} sizes", errors.len(), sizes.len())));
    }
    if sizes.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "sizes",
            message: "at least two rows are needed".into(),
        });
    }
    if sizes.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::NonMonotoneSizes);
    }
    Ok(errors
        .windows(2)
        .zip(sizes.windows(2))
        .map(|(e, s)| (e[0] / e[1]).ln() / (s[0] / s[1]).ln())
        .collect())
}

/// One row of a convergence table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    #[serde(rename = "H_ratio")]
    pub h_ratio: f64,
    pub rel_l2: f64,
    pub eoc_l2: Option<f64>,
    pub rel_h1: f64,
    pub eoc_h1: Option<f64>,
    pub dofs: usize,
    pub rtts: Option<f64>,
}

/// Rows with eoc columns filled from consecutive errors.
pub fn convergence_rows(
    h_ratios: &[f64],
    errors: &[ErrorNorms],
    dofs: &[usize],
    rtts: &[Option<f64>],
) -> Result<Vec<ConvergenceRow>> {
    let n = h_ratios.len();
    if errors.len() != n || dofs.len() != n || rtts.len() != n {
        return Err(Error::DimensionMismatch("convergence table columns differ in length".into()));
    }
    let (eoc_l2, eoc_h1) = if n >= 2 {
        (
            eoc(&errors.iter().map(|e| e.rel_l2).collect::<Vec<_>>(), h_ratios)?,
            eoc(&errors.iter().map(|e| e.rel_h1).collect::<Vec<_>>(), h_ratios)?,
        )
    } else {
        (Vec::new(), Vec::new())
    };
    Ok((0..n)
        .map(|k| ConvergenceRow {
            h_ratio: h_ratios[k],
            rel_l2: errors[k].rel_l2,
            eoc_l2: k.checked_sub(1).map(|p| eoc_l2[p]),
            rel_h1: errors[k].rel_h1,
            eoc_h1: k.checked_sub(1).map(|p| eoc_h1[p]),
            dofs: dofs[k],
            rtts: rtts[k],
        })
        .collect())
}

/// Writes rows as CSV with the header
/// `H_ratio,rel_l2,eoc_l2,rel_h1,eoc_h1,dofs,rtts`; missing values are empty.
pub fn write_convergence_csv(out: impl Write, rows: &[ConvergenceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record(["H_ratio", "rel_l2", "eoc_l2", "rel_h1", "eoc_h1", "dofs", "rtts"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalue_examples() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![3.0, 1.0, 2.0]));
        assert_eq!(symmetric_eigenvalues(&d).unwrap(), vec![1.0, 2.0, 3.0]);
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let ev = symmetric_eigenvalues(&swap).unwrap();
        assert!((ev[0] + 1.0).abs() < 1e-15 && (ev[1] - 1.0).abs() < 1e-15);
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(matches!(symmetric_eigenvalues(&asym), Err(Error::NotSymmetric { .. })));
        assert!(matches!(
            symmetric_eigenvalues(&DMatrix::zeros(2001, 2001)),
            Err(Error::DimensionCap { dim: 2001, cap: 2000 })
        ));
    }

    #[test]
    fn diagonal_pair() {
        let m = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0]));
        let n = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.1, 2.05]));
        let r = spectral_bound_check(&m, &n).unwrap();
        assert!((r.gaps[0] - 0.1).abs() < 1e-15 && (r.gaps[1] - 0.05).abs() < 1e-15);
        assert!((r.inf_norm_diff - 0.1).abs() < 1e-15);
        assert_eq!(r.ell, 1);
        assert!(r.passes());
        assert_eq!(spectral_bound_check(&m, &m).unwrap().max_gap(), 0.0);
    }

    #[test]
    fn eoc_examples() {
        assert!((eoc(&[1e-2, 2.5e-3], &[1.0, 0.5]).unwrap()[0] - 2.0).abs() < 1e-14);
        assert_eq!(eoc(&[1.0, 1.0], &[1.0, 0.5]).unwrap()[0], 0.0);
        let s = [1.0, 0.5, 0.25, 0.125];
        let e: Vec<f64> = s.iter().map(|x: &f64| 7.0 * x.powi(3)).collect();
        for r in eoc(&e, &s).unwrap() {
            assert!((r - 3.0).abs() < 1e-12);
        }
        assert!(matches!(eoc(&[1.0, 1.0], &[0.5, 0.5]), Err(Error::NonMonotoneSizes)));
    }

    #[test]
    fn csv_layout() {
        let e = ErrorNorms {
            l2: 0.0,
            h1: 0.0,
            rel_l2: 0.25,
            rel_h1: 0.5,
            norm_l2: 1.0,
            norm_h1: 1.0,
        };
        let e2 = ErrorNorms {
            rel_l2: 0.0625,
            rel_h1: 0.25,
            ..e
        };
        let rows = convergence_rows(&[1.0, 0.5], &[e, e2], &[9, 25], &[None, Some(0.5)]).unwrap();
        let mut buf = Vec::new();
        write_convergence_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "H_ratio,rel_l2,eoc_l2,rel_h1,eoc_h1,dofs,rtts");
        assert_eq!(lines[1], "1.0,0.25,,0.5,,9,");
        assert_eq!(lines[2], "0.5,0.0625,2.0,0.25,1.0,25,0.5");
    }
}
