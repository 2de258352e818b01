//! Polynomial least squares by Householder QR with column pivoting.

use crate::error::{Error, Result};
use crate::mesh::Point;
use crate::stencil::Sample;

use super::poly::{monomials, num_coeffs, Poly2};

/// Diagonal entries of `R` below this fraction of the largest one count as
/// numerically zero.
pub const RANK_TOLERANCE: f64 = 1e-13;

/// Solution of a dense least-squares problem `min ‖A x - b‖`.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub x: Vec<f64>,
    pub rank: usize,
    /// `|R_00| / |R_kk|` for the last column kept.
    pub condition: f64,
    pub residual_norm: f64,
}

/// Businger-Golub QR with column pivoting on the largest remaining column
/// norm. `a` is row-major with `ncols` columns.
pub fn qrcp_solve(a: &[f64], ncols: usize, b: &[f64]) -> Result<LeastSquares> {
    let nrows = b.len();
    assert_eq!(a.len(), nrows * ncols);
    if nrows < ncols {
        return Err(Error::Underdetermined {
            samples: nrows,
            unknowns: ncols,
        });
    }
    // Column-major copy for cache-friendly Householder updates.
    let mut m: Vec<Vec<f64>> = (0..ncols).map(|c| (0..nrows).map(|r| a[r * ncols + c]).collect()).collect();
    let mut rhs = b.to_vec();
    let mut perm: Vec<usize> = (0..ncols).collect();
    let mut norms: Vec<f64> = m.iter().map(|col| col.iter().map(|v| v * v).sum()).collect();
    let mut diag = vec![0.0; ncols];

    for k in 0..ncols {
        let p = (k..ncols)
            .max_by(|&x, &y| norms[x].partial_cmp(&norms[y]).unwrap())
            .unwrap();
        m.swap(k, p);
        norms.swap(k, p);
        perm.swap(k, p);

        let col = &m[k];
        let alpha = col[k..].iter().map(|v| v * v).sum::<f64>().sqrt();
        if alpha == 0.0 {
            diag[k] = 0.0;
            continue;
        }
        let beta = if col[k] > 0.0 { -alpha } else { alpha };
        let mut v: Vec<f64> = col[k..].to_vec();
        v[0] -= beta;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        diag[k] = beta;
        m[k][k] = beta;
        for r in k + 1..nrows {
            m[k][r] = 0.0;
        }
        if vnorm2 == 0.0 {
            continue;
        }
        for c in m.iter_mut().skip(k + 1) {
            let s: f64 = v.iter().zip(&c[k..]).map(|(a, b)| a * b).sum::<f64>() * 2.0 / vnorm2;
            for (x, vi) in c[k..].iter_mut().zip(&v) {
                *x -= s * vi;
            }
        }
        let s: f64 = v.iter().zip(&rhs[k..]).map(|(a, b)| a * b).sum::<f64>() * 2.0 / vnorm2;
        for (x, vi) in rhs[k..].iter_mut().zip(&v) {
            *x -= s * vi;
        }
        for (c, norm) in m.iter().zip(norms.iter_mut()).skip(k + 1) {
            *norm = c[k + 1..].iter().map(|v| v * v).sum();
        }
    }

    let r00 = diag[0].abs();
    let rank = diag.iter().take_while(|d| d.abs() > RANK_TOLERANCE * r00).count();
    let condition = if rank == 0 { f64::INFINITY } else { r00 / diag[rank - 1].abs() };
    if rank < ncols {
        let last = diag[ncols - 1].abs();
        return Err(Error::RankDeficient {
            rank,
            unknowns: ncols,
            condition: if last == 0.0 { f64::INFINITY } else { r00 / last },
        });
    }
    let mut z = vec![0.0; ncols];
    for k in (0..ncols).rev() {
        let mut s = rhs[k];
        for c in k + 1..ncols {
            s -= m[c][k] * z[c];
        }
        z[k] = s / m[k][k];
    }
    let mut x = vec![0.0; ncols];
    for (k, &p) in perm.iter().enumerate() {
        x[p] = z[k];
    }
    let residual_norm = rhs[ncols..].iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(LeastSquares {
        x,
        rank,
        condition,
        residual_norm,
    })
}

/// Outcome of a polynomial fit.
#[derive(Debug, Clone)]
pub struct Fit {
    pub poly: Poly2,
    pub samples: usize,
    pub condition: f64,
    pub residual_norm: f64,
}

/// Least-squares fit of a degree-`q` polynomial to `samples`. Coordinates are
/// mapped affinely onto the unit box of the samples before regression and the
/// coefficients mapped back afterwards.
pub fn fit_polynomial(samples: &[Sample], q: usize) -> Result<Fit> {
    let ncols = num_coeffs(q);
    if samples.len() < ncols {
        return Err(Error::Underdetermined {
            samples: samples.len(),
            unknowns: ncols,
        });
    }
    let (lo, scale) = bounding_box(samples.iter().map(|s| s.xi));
    let mut a = Vec::with_capacity(samples.len() * ncols);
    let mut b = Vec::with_capacity(samples.len());
    for s in samples {
        let u = [(s.xi[0] - lo[0]) / scale, (s.xi[1] - lo[1]) / scale];
        a.extend(monomials(q).map(|(i, j)| u[0].powi(i as i32) * u[1].powi(j as i32)));
        b.push(s.value);
    }
    let ls = qrcp_solve(&a, ncols, &b)?;
    let poly = Poly2::new(q, ls.x).scaled(scale).shifted([-lo[0], -lo[1]]);
    Ok(Fit {
        poly,
        samples: samples.len(),
        condition: ls.condition,
        residual_norm: ls.residual_norm,
    })
}

fn bounding_box(points: impl Iterator<Item = Point>) -> (Point, f64) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let scale = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    (lo, if scale > 0.0 { scale } else { 1.0 })
}

/// `|Σ (Φ - Φ̃)(x_i)|`, which vanishes for a least-squares fit whose basis
/// contains the constants.
pub fn first_order_optimality(samples: &[Sample], poly: &Poly2) -> f64 {
    samples.iter().map(|s| s.value - poly.eval(s.xi)).sum::<f64>().abs()
}
