//! Forward-difference evaluation of a univariate polynomial on an equispaced row.

/// Highest supported degree.
pub const MAX_DEGREE: usize = 8;

/// Stirling numbers of the second kind `S(a, k)` for `a, k ≤ MAX_DEGREE`.
const fn stirling2() -> [[f64; MAX_DEGREE + 1]; MAX_DEGREE + 1] {
    let mut s = [[0.0; MAX_DEGREE + 1]; MAX_DEGREE + 1];
    s[0][0] = 1.0;
    let mut a = 1;
    while a <= MAX_DEGREE {
        let mut k = 1;
        while k <= a {
            s[a][k] = k as f64 * s[a - 1][k] + s[a - 1][k - 1];
            k += 1;
        }
        a += 1;
    }
    s
}

const STIRLING2: [[f64; MAX_DEGREE + 1]; MAX_DEGREE + 1] = stirling2();

/// Forward differences `Δ^(0..=q)` of `p` at `x_0, x_0 + h, ...`. Each
/// [`RowEvaluator::step`] costs `q` additions.
#[derive(Debug, Clone, Copy)]
pub struct RowEvaluator {
    delta: [f64; MAX_DEGREE + 1],
    degree: usize,
}

impl RowEvaluator {
    /// Initializes from the coefficients `e_b` of `p(x) = Σ e_b x^b`.
    ///
    /// The differences are computed from the Taylor expansion of `p` at
    /// `x_0` rather than by differencing `q + 1` point values, which would
    /// lose most significant digits of the high-order differences.
    pub fn new(coeffs: &[f64], x0: f64, h: f64) -> Self {
        let degree = coeffs.len() - 1;
        assert!(degree <= MAX_DEGREE, "degree {degree} exceeds {MAX_DEGREE}");
        // Taylor shift: coefficients of p(x0 + t).
        let mut g = [0.0; MAX_DEGREE + 1];
        g[..=degree].copy_from_slice(coeffs);
        for k in 0..degree {
            for i in (k..degree).rev() {
                g[i] += x0 * g[i + 1];
            }
        }
        // P(s) = p(x0 + s h) = Σ d_a s^a, and Δ^k P(0) = Σ_a d_a k! S(a, k).
        let mut hp = 1.0;
        for ga in g.iter_mut().take(degree + 1) {
            *ga *= hp;
            hp *= h;
        }
        let mut delta = [0.0; MAX_DEGREE + 1];
        let mut fact = 1.0;
        for k in 0..=degree {
            if k > 0 {
                fact *= k as f64;
            }
            delta[k] = fact * (k..=degree).map(|a| g[a] * STIRLING2[a][k]).sum::<f64>();
        }
        Self { delta, degree }
    }

    /// Initializes from `q + 1` consecutive values `p(x_0 + k h)` by repeated
    /// differencing.
    pub fn from_values(values: &[f64]) -> Self {
        let degree = values.len() - 1;
        assert!(degree <= MAX_DEGREE);
        let mut work = [0.0; MAX_DEGREE + 1];
        work[..=degree].copy_from_slice(values);
        let mut delta = [0.0; MAX_DEGREE + 1];
        for k in 0..=degree {
            delta[k] = work[0];
            for i in 0..degree - k {
                work[i] = work[i + 1] - work[i];
            }
        }
        Self { delta, degree }
    }

    pub fn differences(&self) -> &[f64] {
        &self.delta[..=self.degree]
    }

    /// Value at the current point.
    #[inline(always)]
    pub fn value(&self) -> f64 {
        self.delta[0]
    }

    /// Advances one step and returns the value at the new point.
    #[inline(always)]
    pub fn step(&mut self) -> f64 {
        for k in 0..self.degree {
            self.delta[k] += self.delta[k + 1];
        }
        self.delta[0]
    }
}
