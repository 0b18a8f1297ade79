//! The insider's Hamiltonian `H(z) = sup_{θ in A} [zθ - f(θ)]`, its derivative
//! `∂_z H` (which is the optimal trading rate by the envelope theorem), and
//! the cost `f` itself.
//!
//! Closed forms are used where they exist:
//!
//! - square-root cost `f(θ) = -sqrt(1-θ²)` on `A = [-1, 1]`:
//!   `H(z) = sqrt(1+z²)`, `∂_z H(z) = z / sqrt(1+z²)`;
//! - quadratic cost `f(θ) = λθ²/2` on `[-a, a]`: clipped linear feedback.
//!
//! Tabulated costs are maximized exactly over the table with one local
//! quadratic refinement around the best node; the derivative is the arg-max.

use crate::error::Error;
use crate::scalar::Real;
use crate::Result;

/// Cost variant of the Hamiltonian.
#[derive(Debug, Clone, PartialEq)]
pub enum CostVariant<F> {
    /// `f(θ) = -sqrt(1-θ²)` on `[-1, 1]`.
    SqrtClosedForm,
    /// `f(θ) = λ θ²/2`.
    Quadratic { lambda: F },
    /// Sampled `(θ, f(θ))` pairs, strictly increasing in θ.
    Tabulated { theta: Vec<F>, cost: Vec<F> },
}

/// Hamiltonian specification: cost variant plus the symmetric action interval
/// `[-bound, bound]`, with the certified Lipschitz constant of `∂_z H` and
/// the admissibility growth constant `C` in `f(θ) >= f(0) - C|θ|`.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianSpec<F> {
    pub variant: CostVariant<F>,
    pub bound: F,
    pub lipschitz: F,
    pub growth_const: F,
}

impl<F: Real> HamiltonianSpec<F> {
    pub fn sqrt_closed_form() -> Self {
        Self {
            variant: CostVariant::SqrtClosedForm,
            bound: F::one(),
            // |dH'| = (1+z²)^{-3/2} <= 1.
            lipschitz: F::one(),
            // f(θ) >= f(0) holds outright.
            growth_const: F::zero(),
        }
    }

    pub fn quadratic(lambda: F, bound: F) -> Result<Self> {
        if lambda <= F::zero() || bound <= F::zero() {
            return Err(Error::InvalidArgument(
                "quadratic cost needs lambda > 0 and bound > 0".into(),
            ));
        }
        Ok(Self {
            variant: CostVariant::Quadratic { lambda },
            bound,
            lipschitz: F::one() / lambda,
            growth_const: F::zero(),
        })
    }

    pub fn tabulated(theta: Vec<F>, cost: Vec<F>, bound: F) -> Result<Self> {
        if theta.len() < 3 {
            return Err(Error::InvalidArgument(
                "tabulated cost needs at least 3 grid points".into(),
            ));
        }
        if theta.len() != cost.len() {
            return Err(Error::InvalidArgument(
                "tabulated cost: theta/cost length mismatch".into(),
            ));
        }
        if theta.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "tabulated cost: theta grid must be strictly increasing".into(),
            ));
        }
        if theta[0] < -bound || *theta.last().unwrap() > bound {
            return Err(Error::InvalidArgument(
                "tabulated cost: theta grid exceeds the action interval".into(),
            ));
        }
        let mut spec = Self {
            variant: CostVariant::Tabulated { theta, cost },
            bound,
            lipschitz: F::zero(),
            growth_const: F::zero(),
        };
        spec.lipschitz = spec.estimate_lipschitz();
        spec.growth_const = spec.estimate_growth();
        Ok(spec)
    }

    /// `(H(z), ∂_z H(z))`. The derivative equals the maximizing θ and is
    /// bounded by the action bound.
    pub fn eval(&self, z: F) -> (F, F) {
        match &self.variant {
            CostVariant::SqrtClosedForm => {
                let root = (F::one() + z * z).sqrt();
                (root, z / root)
            }
            CostVariant::Quadratic { lambda } => {
                let arg = (z / *lambda).max(-self.bound).min(self.bound);
                (z * arg - *lambda * arg * arg / F::lit(2.0), arg)
            }
            CostVariant::Tabulated { theta, cost } => {
                let objective = |th: F, fc: F| z * th - fc;
                let mut best = 0usize;
                let mut best_val = objective(theta[0], cost[0]);
                for k in 1..theta.len() {
                    let val = objective(theta[k], cost[k]);
                    if val > best_val {
                        best_val = val;
                        best = k;
                    }
                }
                // Quadratic refinement through the best node and its
                // neighbors; fall back to the node when the parabola is not
                // concave or the vertex leaves the bracket.
                if best > 0 && best + 1 < theta.len() {
                    let (t0, t1, t2) = (theta[best - 1], theta[best], theta[best + 1]);
                    let (g0, g1, g2) = (
                        objective(t0, cost[best - 1]),
                        best_val,
                        objective(t2, cost[best + 1]),
                    );
                    let d10 = (g1 - g0) / (t1 - t0);
                    let d21 = (g2 - g1) / (t2 - t1);
                    let curv = (d21 - d10) / (t2 - t0);
                    if curv < F::zero() {
                        // Vertex of the interpolating parabola in Newton form
                        // p(x) = g0 + d10 (x-t0) + curv (x-t0)(x-t1).
                        let vertex = (t0 + t1) / F::lit(2.0) - d10 / (F::lit(2.0) * curv);
                        if vertex > t0 && vertex < t2 {
                            let p = g0
                                + d10 * (vertex - t0)
                                + curv * (vertex - t0) * (vertex - t1);
                            if p > best_val {
                                return (p, vertex);
                            }
                        }
                    }
                }
                (best_val, theta[best])
            }
        }
    }

    /// Evaluate the cost at θ; errors outside the action interval.
    pub fn cost(&self, theta: F) -> Result<F> {
        if theta < -self.bound || theta > self.bound {
            return Err(Error::InvalidArgument(format!(
                "theta = {theta} outside action interval [-{b}, {b}]",
                b = self.bound
            )));
        }
        Ok(self.cost_unchecked(theta))
    }

    /// Cost evaluation without the interval check (callers on the hot path
    /// guarantee admissibility through `∂_z H`'s range).
    pub fn cost_unchecked(&self, theta: F) -> F {
        match &self.variant {
            CostVariant::SqrtClosedForm => {
                let inside = (F::one() - theta * theta).max(F::zero());
                -inside.sqrt()
            }
            CostVariant::Quadratic { lambda } => *lambda * theta * theta / F::lit(2.0),
            CostVariant::Tabulated { theta: grid, cost } => {
                // Piecewise-linear interpolation, clamped at the ends.
                if theta <= grid[0] {
                    return cost[0];
                }
                if theta >= *grid.last().unwrap() {
                    return *cost.last().unwrap();
                }
                let mut lo = 0usize;
                let mut hi = grid.len() - 1;
                while hi - lo > 1 {
                    let mid = (lo + hi) / 2;
                    if grid[mid] <= theta {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                let w = (theta - grid[lo]) / (grid[hi] - grid[lo]);
                cost[lo] * (F::one() - w) + cost[hi] * w
            }
        }
    }

    pub fn cost_at_zero(&self) -> F {
        self.cost_unchecked(F::zero())
    }

    /// Fenchel gap `H(ẑ) - ẑθ + f(θ)`; zero at θ = ∂_z H(ẑ).
    pub fn fenchel_gap(&self, z_hat: F, theta: F) -> F {
        let (h, _) = self.eval(z_hat);
        h - z_hat * theta + self.cost_unchecked(theta)
    }

    fn estimate_lipschitz(&self) -> F {
        let mut max_ratio = F::zero();
        let lo = F::lit(-10.0);
        let steps = 400usize;
        let dz = (F::lit(10.0) - lo) / F::from_usize(steps).unwrap();
        let mut prev = self.eval(lo).1;
        for k in 1..=steps {
            let z = lo + dz * F::from_usize(k).unwrap();
            let d = self.eval(z).1;
            let ratio = (d - prev).abs() / dz;
            if ratio > max_ratio {
                max_ratio = ratio;
            }
            prev = d;
        }
        max_ratio * F::lit(1.05)
    }

    fn estimate_growth(&self) -> F {
        let f0 = self.cost_unchecked(F::zero());
        if let CostVariant::Tabulated { theta, cost } = &self.variant {
            let mut c = F::zero();
            for (&t, &f) in theta.iter().zip(cost.iter()) {
                if t != F::zero() {
                    let ratio = (f0 - f) / t.abs();
                    if ratio > c {
                        c = ratio;
                    }
                }
            }
            c
        } else {
            F::zero()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn sqrt_closed_form_values() {
        let spec = HamiltonianSpec::<f64>::sqrt_closed_form();
        let (h0, d0) = spec.eval(0.0);
        assert_abs_diff_eq!(h0, 1.0);
        assert_abs_diff_eq!(d0, 0.0);
        let (h1, d1) = spec.eval(1.0);
        assert_abs_diff_eq!(h1, std::f64::consts::SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(d1, 1.0 / std::f64::consts::SQRT_2, epsilon = 1e-15);
    }

    #[test]
    fn sqrt_costs() {
        let spec = HamiltonianSpec::<f64>::sqrt_closed_form();
        assert_abs_diff_eq!(spec.cost(0.0).unwrap(), -1.0);
        assert_abs_diff_eq!(spec.cost(1.0).unwrap(), 0.0);
        assert!(spec.cost(1.5).is_err());
    }

    #[test]
    fn quadratic_clipped_at_bound() {
        let spec = HamiltonianSpec::<f64>::quadratic(1.0, 1.0).unwrap();
        let (h, d) = spec.eval(2.0);
        assert_abs_diff_eq!(h, 1.5);
        assert_abs_diff_eq!(d, 1.0);
        assert_abs_diff_eq!(spec.cost(0.5).unwrap(), 0.125);
        let (h_in, d_in) = spec.eval(0.3);
        assert_abs_diff_eq!(h_in, 0.045, epsilon = 1e-15);
        assert_abs_diff_eq!(d_in, 0.3);
    }

    #[test]
    fn tabulated_requires_three_points() {
        let err = HamiltonianSpec::<f64>::tabulated(vec![0.0, 1.0], vec![0.0, 1.0], 1.0);
        assert!(err.is_err());
    }

    #[test]
    fn tabulated_tracks_quadratic() {
        // Table of the quadratic cost; refinement should land near z/λ.
        let theta: Vec<f64> = (0..41).map(|k| -1.0 + k as f64 * 0.05).collect();
        let cost: Vec<f64> = theta.iter().map(|t| 0.5 * t * t).collect();
        let spec = HamiltonianSpec::tabulated(theta, cost, 1.0).unwrap();
        let quad = HamiltonianSpec::<f64>::quadratic(1.0, 1.0).unwrap();
        for &z in &[-0.9, -0.33, 0.0, 0.21, 0.77] {
            let (h_t, d_t) = spec.eval(z);
            let (h_q, d_q) = quad.eval(z);
            assert_abs_diff_eq!(h_t, h_q, epsilon = 2e-3);
            assert_abs_diff_eq!(d_t, d_q, epsilon = 3e-2);
        }
    }

    #[test]
    fn envelope_consistency_finite_differences() {
        let h = 1e-4f64;
        for spec in [
            HamiltonianSpec::<f64>::sqrt_closed_form(),
            HamiltonianSpec::quadratic(0.8, 2.0).unwrap(),
        ] {
            for k in 0..=100 {
                let z = -10.0 + 0.2 * k as f64;
                let (hp, _) = spec.eval(z + h);
                let (hm, _) = spec.eval(z - h);
                let (_, d) = spec.eval(z);
                // Skip the kink of the clipped quadratic feedback.
                if let CostVariant::Quadratic { lambda } = spec.variant {
                    if ((z / lambda).abs() - spec.bound).abs() < 2.0 * h {
                        continue;
                    }
                }
                assert!(
                    ((hp - hm) / (2.0 * h) - d).abs() < 1e-6,
                    "envelope defect at z={z}"
                );
            }
        }
    }

    #[test]
    fn fenchel_inequality_random_pairs() {
        let spec = HamiltonianSpec::<f64>::sqrt_closed_form();
        let mut rng = crate::rng::SubstreamRng::new(11, 0);
        for _ in 0..1000 {
            let z = rng.uniform_in(-8.0, 8.0);
            let th = rng.uniform_in(-1.0, 1.0);
            let (h, d) = spec.eval(z);
            assert!(h >= z * th - spec.cost_unchecked(th) - 1e-12);
            let gap = h - (z * d - spec.cost_unchecked(d));
            assert!(gap.abs() < 1e-9, "gap {gap} at z={z}");
        }
    }

    #[test]
    fn lipschitz_certificate_random_pairs() {
        for spec in [
            HamiltonianSpec::<f64>::sqrt_closed_form(),
            HamiltonianSpec::quadratic(2.0, 1.5).unwrap(),
        ] {
            let mut rng = crate::rng::SubstreamRng::new(5, 7);
            for _ in 0..1000 {
                let z1 = rng.uniform_in(-10.0, 10.0);
                let z2 = rng.uniform_in(-10.0, 10.0);
                let d1 = spec.eval(z1).1;
                let d2 = spec.eval(z2).1;
                assert!((d1 - d2).abs() <= spec.lipschitz * (z1 - z2).abs() + 1e-12);
                assert!(d1.abs() <= spec.bound + 1e-12);
            }
        }
    }
}
