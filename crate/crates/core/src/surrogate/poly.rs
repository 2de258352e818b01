use crate::mesh::Point;

/// Bivariate polynomial `Σ c_ab x^a y^b` of total degree at most `q`.
///
/// Coefficients are ordered by total degree, then by descending power of
/// `x`: `1, x, y, x², xy, y², x³, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly2 {
    degree: usize,
    coeffs: Vec<f64>,
}

/// Number of monomials of total degree `≤ q`.
pub const fn num_coeffs(q: usize) -> usize {
    (q + 1) * (q + 2) / 2
}

/// Position of `x^a y^b` in the coefficient vector.
#[inline]
pub const fn monomial_index(a: usize, b: usize) -> usize {
    let d = a + b;
    d * (d + 1) / 2 + b
}

/// Exponents `(a, b)` in coefficient order.
pub fn monomials(q: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..=q).flat_map(|d| (0..=d).map(move |b| (d - b, b)))
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

impl Poly2 {
    pub fn new(degree: usize, coeffs: Vec<f64>) -> Self {
        assert_eq!(coeffs.len(), num_coeffs(degree), "coefficient count for degree {degree}");
        Self { degree, coeffs }
    }

    pub fn zero(degree: usize) -> Self {
        Self::new(degree, vec![0.0; num_coeffs(degree)])
    }

    pub fn constant(degree: usize, c: f64) -> Self {
        let mut p = Self::zero(degree);
        p.coeffs[0] = c;
        p
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, a: usize, b: usize) -> f64 {
        self.coeffs[monomial_index(a, b)]
    }

    pub fn eval(&self, p: Point) -> f64 {
        // Horner in x over coefficients that are themselves polynomials in y.
        let q = self.degree;
        let mut acc = 0.0;
        for a in (0..=q).rev() {
            let mut cy = 0.0;
            for b in (0..=q - a).rev() {
                cy = cy * p[1] + self.coeffs[monomial_index(a, b)];
            }
            acc = acc * p[0] + cy;
        }
        acc
    }

    /// Coefficients `e_a` of the univariate restriction `x ↦ p(x, y)`.
    pub fn restrict_to_row(&self, y: f64, out: &mut [f64]) {
        let q = self.degree;
        for (a, slot) in out.iter_mut().enumerate().take(q + 1) {
            let mut cy = 0.0;
            for b in (0..=q - a).rev() {
                cy = cy * y + self.coeffs[monomial_index(a, b)];
            }
            *slot = cy;
        }
    }

    /// `x ↦ p(x + offset)`, expanded exactly in coefficient space.
    pub fn shifted(&self, offset: Point) -> Self {
        let q = self.degree;
        let mut out = vec![0.0; self.coeffs.len()];
        let pow = |base: f64, e: usize| base.powi(e as i32);
        for (a, b) in monomials(q) {
            let c = self.coeff(a, b);
            if c == 0.0 {
                continue;
            }
            for i in 0..=a {
                let cx = binomial(a, i) * pow(offset[0], a - i);
                for j in 0..=b {
                    out[monomial_index(i, j)] += c * cx * binomial(b, j) * pow(offset[1], b - j);
                }
            }
        }
        Self::new(q, out)
    }

    /// `x ↦ p(x / s)`.
    pub fn scaled(&self, s: f64) -> Self {
        let coeffs = monomials(self.degree)
            .zip(&self.coeffs)
            .map(|((a, b), c)| c / s.powi((a + b) as i32))
            .collect();
        Self::new(self.degree, coeffs)
    }

    pub fn add_assign_scaled(&mut self, alpha: f64, other: &Poly2) {
        assert_eq!(self.degree, other.degree);
        for (c, o) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *c += alpha * o;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ordering_and_counts() {
        assert_eq!(num_coeffs(1), 3);
        assert_eq!(num_coeffs(8), 45);
        let order: Vec<_> = monomials(2).collect();
        assert_eq!(order, vec![(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]);
        for (k, (a, b)) in monomials(6).enumerate() {
            assert_eq!(monomial_index(a, b), k);
        }
    }

    #[test]
    fn evaluation() {
        let p = Poly2::new(1, vec![1.0, 2.0, 3.0]);
        assert_eq!(p.eval([0.5, 2.0]), 1.0 + 1.0 + 6.0);
        let mut q = Poly2::zero(2);
        q.coeffs[monomial_index(1, 1)] = 1.0;
        assert_eq!(q.eval([3.0, 4.0]), 12.0);
        let mut row = [0.0; 3];
        q.restrict_to_row(4.0, &mut row);
        assert_eq!(row, [0.0, 4.0, 0.0]);
    }

    #[test]
    fn shift_examples() {
        let c = Poly2::constant(3, 2.5);
        assert_eq!(c.shifted([0.3, -0.2]), c);
        let x = Poly2::new(1, vec![0.0, 1.0, 0.0]);
        let h = 0.125;
        assert_eq!(x.shifted([h, 0.0]).coeffs(), &[h, 1.0, 0.0]);
    }

    #[test]
    fn shift_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = Poly2::new(3, (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let delta = [0.0625, -0.0625];
        let shifted = p.shifted(delta);
        for _ in 0..100 {
            let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let direct = p.eval([x[0] + delta[0], x[1] + delta[1]]);
            assert!((shifted.eval(x) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn scaling() {
        let p = Poly2::new(2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let s = p.scaled(2.0);
        assert!((s.eval([0.6, 0.8]) - p.eval([0.3, 0.4])).abs() < 1e-14);
    }
}
