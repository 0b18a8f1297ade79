//! Gauss-Hermite quadrature normalized against the standard normal density:
//! `sum_i w_i g(v_i) ~ E[g(V)]` for `V ~ N(0,1)`.

use crate::scalar::Real;

/// Nodes and weights for `E[g(V)]`, `V ~ N(0,1)`.
#[derive(Debug, Clone)]
pub struct GaussHermite<F> {
    pub nodes: Vec<F>,
    pub weights: Vec<F>,
}

impl<F: Real> GaussHermite<F> {
    /// Build an `n`-point rule. Roots of the physicists' Hermite polynomial
    /// are found by Newton iteration on the orthonormal recurrence, then
    /// rescaled by `sqrt(2)` with weights renormalized by `1/sqrt(pi)`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "quadrature order must be positive");
        let (x, w) = hermite_roots(n);
        let sqrt2 = std::f64::consts::SQRT_2;
        let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            nodes.push(F::lit(x[i] * sqrt2));
            weights.push(F::lit(w[i] * inv_sqrt_pi));
        }
        Self { nodes, weights }
    }

    /// Quadrature estimate of `E[g(V)]`.
    pub fn integrate(&self, mut g: impl FnMut(F) -> F) -> F {
        self.nodes
            .iter()
            .zip(self.weights.iter())
            .map(|(&v, &w)| w * g(v))
            .sum()
    }
}

/// Roots and weights of the n-point physicists' Gauss-Hermite rule
/// (weight function exp(-x^2)), computed in f64.
fn hermite_roots(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0f64; n];
    let mut w = vec![0.0f64; n];
    let nf = n as f64;
    let mut z = 0.0f64;
    // Roots come in +/- pairs; solve the positive half from the outermost in.
    for i in 0..n.div_ceil(2) {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0f64;
        for _ in 0..200 {
            // Orthonormal Hermite recurrence w.r.t. exp(-x^2).
            let mut p1 = std::f64::consts::PI.powf(-0.25);
            let mut p2 = 0.0f64;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    // Midpoint of an odd rule is exactly zero.
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn gaussian_moments_reproduced() {
        for n in [2usize, 4, 8, 16, 32, 64, 96] {
            let gh = GaussHermite::<f64>::new(n);
            let m0 = gh.integrate(|_| 1.0);
            let m1 = gh.integrate(|v| v);
            let m2 = gh.integrate(|v| v * v);
            assert_abs_diff_eq!(m0, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(m1, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(m2, 1.0, epsilon = 1e-10);
            if n >= 4 {
                let m4 = gh.integrate(|v| v.powi(4));
                assert_abs_diff_eq!(m4, 3.0, epsilon = 1e-9);
            }
            if n >= 8 {
                let m6 = gh.integrate(|v| v.powi(6));
                assert_abs_diff_eq!(m6, 15.0, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn integrates_smooth_nonpolynomial() {
        // E[exp(aV)] = exp(a^2/2)
        let gh = GaussHermite::<f64>::new(64);
        let a = 0.7f64;
        let est = gh.integrate(|v| (a * v).exp());
        assert_abs_diff_eq!(est, (a * a / 2.0).exp(), epsilon = 1e-10);
    }
}
