//! Quadrature rules on the reference triangle `{(0,0), (1,0), (0,1)}`.

use crate::mesh::Point;

/// Points and weights on the reference triangle. Weights sum to its area, 1/2.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl QuadratureRule {
    /// A rule exact for polynomials of total degree `degree`. Symmetric
    /// Dunavant rules are used up to degree 5, collapsed Gauss-Legendre
    /// products beyond.
    pub fn with_degree(degree: usize) -> Self {
        match degree {
            0 | 1 => Self::from_orbits(degree, &[(1.0, Orbit::Centroid)]),
            2 => Self::from_orbits(2, &[(1.0 / 3.0, Orbit::Two(1.0 / 6.0))]),
            3 | 4 => Self::from_orbits(
                degree,
                &[
                    (0.223_381_589_678_011_465_7, Orbit::Two(0.445_948_490_915_964_886_3)),
                    (0.109_951_743_655_321_867_6, Orbit::Two(0.091_576_213_509_770_743_46)),
                ],
            ),
            5 => {
                let s = 15f64.sqrt();
                Self::from_orbits(
                    5,
                    &[
                        (9.0 / 40.0, Orbit::Centroid),
                        ((155.0 + s) / 1200.0, Orbit::Two((6.0 + s) / 21.0)),
                        ((155.0 - s) / 1200.0, Orbit::Two((6.0 - s) / 21.0)),
                    ],
                )
            }
            d => Self::collapsed_gauss(d),
        }
    }

    fn from_orbits(degree: usize, orbits: &[(f64, Orbit)]) -> Self {
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for &(w, orbit) in orbits {
            match orbit {
                Orbit::Centroid => {
                    points.push([1.0 / 3.0, 1.0 / 3.0]);
                    weights.push(0.5 * w);
                }
                Orbit::Two(a) => {
                    let b = 1.0 - 2.0 * a;
                    for p in [[a, a], [b, a], [a, b]] {
                        points.push(p);
                        weights.push(0.5 * w);
                    }
                }
            }
        }
        Self {
            points,
            weights,
            degree,
        }
    }

    /// Duffy transform of a tensor Gauss-Legendre rule.
    fn collapsed_gauss(degree: usize) -> Self {
        let n = (degree + 2).div_ceil(2);
        let (nodes, gw) = gauss_legendre(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for (&u, &wu) in nodes.iter().zip(&gw) {
            let x = 0.5 * (1.0 + u);
            for (&v, &wv) in nodes.iter().zip(&gw) {
                let y = 0.5 * (1.0 - x) * (1.0 + v);
                points.push([x, y]);
                weights.push(0.25 * (1.0 - x) * wu * wv);
            }
        }
        Self {
            points,
            weights,
            degree,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Barycentric coordinates of point `k`.
    pub fn barycentric(&self, k: usize) -> [f64; 3] {
        let [x, y] = self.points[k];
        [1.0 - x - y, x, y]
    }

    /// `∫_t f` over the triangle with vertices `p0, p1, p2`.
    pub fn integrate(&self, p0: Point, p1: Point, p2: Point, f: impl Fn(Point) -> f64) -> f64 {
        let e1 = [p1[0] - p0[0], p1[1] - p0[1]];
        let e2 = [p2[0] - p0[0], p2[1] - p0[1]];
        let jac = (e1[0] * e2[1] - e1[1] * e2[0]).abs();
        let mut sum = 0.0;
        for (xi, w) in self.points.iter().zip(&self.weights) {
            let x = [p0[0] + e1[0] * xi[0] + e2[0] * xi[1], p0[1] + e1[1] * xi[0] + e2[1] * xi[1]];
            sum += w * f(x);
        }
        sum * jac
    }
}

#[derive(Debug, Clone, Copy)]
enum Orbit {
    Centroid,
    /// Barycentric `(a, a, 1 - 2a)` and permutations.
    Two(f64),
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        dp = if d != 0.0 { d } else { dp };
        nodes[k] = x;
        weights[k] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
