//! Strategies and pricing rules as evaluable objects.
//!
//! A [`Strategy`] assigns each type its trading rate; a [`PriceMap`] assigns
//! a price to a point of the simplex. Feedback variants are tabulated on a
//! time grid x simplex lattice (multilinear in space, piecewise-constant in
//! time) or given by polynomial regression coefficients.

use crate::basis::PolyBasis;
use crate::scalar::Real;
use crate::simplex::SimplexGrid;

/// Per-type feedback strategy, piecewise-constant in time.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackStrategy<F> {
    /// Step boundaries `t_0 < ... < t_K`; slice `k` applies on `[t_k, t_{k+1})`.
    pub times: Vec<F>,
    pub kind: FeedbackKind<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeedbackKind<F> {
    /// `tables[step][type][node]` on a simplex lattice.
    Grid {
        grid: SimplexGrid<F>,
        tables: Vec<Vec<Vec<F>>>,
    },
    /// `coef[step][type][basis]` polynomial coefficients.
    Basis {
        basis: PolyBasis,
        coef: Vec<Vec<Vec<F>>>,
    },
}

impl<F: Real> FeedbackStrategy<F> {
    pub fn n_types(&self) -> usize {
        match &self.kind {
            FeedbackKind::Grid { tables, .. } => tables[0].len(),
            FeedbackKind::Basis { coef, .. } => coef[0].len(),
        }
    }

    pub fn num_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Rate of type `i` on time slice `k` at simplex point `x`.
    pub fn rate(&self, i: usize, k: usize, x: &[F]) -> F {
        let k = k.min(self.num_steps() - 1);
        match &self.kind {
            FeedbackKind::Grid { grid, tables } => grid.interp(&tables[k][i], x),
            FeedbackKind::Basis { basis, coef } => basis.combine(&coef[k][i], x),
        }
    }

    /// Rate at clock time `t` (locates the slice containing `t`).
    pub fn rate_at_time(&self, i: usize, t: F, x: &[F]) -> F {
        let k = self
            .times
            .windows(2)
            .position(|w| t < w[1])
            .unwrap_or(self.num_steps() - 1);
        self.rate(i, k, x)
    }
}

/// A strategy profile: one trading rate per type.
#[derive(Debug, Clone, PartialEq)]
pub enum Strategy<F> {
    /// Constant rate per type.
    Constant(Vec<F>),
    /// Deterministic open-loop rates, `rates[type][step]`.
    OpenLoop(Vec<Vec<F>>),
    /// State feedback on the simplex.
    Feedback(FeedbackStrategy<F>),
}

impl<F: Real> Strategy<F> {
    pub fn zero(n_types: usize) -> Self {
        Strategy::Constant(vec![F::zero(); n_types])
    }

    pub fn n_types(&self) -> usize {
        match self {
            Strategy::Constant(c) => c.len(),
            Strategy::OpenLoop(r) => r.len(),
            Strategy::Feedback(fb) => fb.n_types(),
        }
    }

    /// Rate of type `i` on step `k` when the filter state is `x`.
    #[inline]
    pub fn rate(&self, i: usize, k: usize, x: &[F]) -> F {
        match self {
            Strategy::Constant(c) => c[i],
            Strategy::OpenLoop(r) => r[i][k.min(r[i].len() - 1)],
            Strategy::Feedback(fb) => fb.rate(i, k, x),
        }
    }

    /// Largest rate magnitude over the tabulated data (feedback tables or
    /// explicit rates). Used for admissibility checks.
    pub fn sup_norm(&self) -> F {
        let fold_abs = |acc: F, v: &F| acc.max(v.abs());
        match self {
            Strategy::Constant(c) => c.iter().fold(F::zero(), fold_abs),
            Strategy::OpenLoop(r) => r
                .iter()
                .flat_map(|row| row.iter())
                .fold(F::zero(), fold_abs),
            Strategy::Feedback(fb) => match &fb.kind {
                FeedbackKind::Grid { tables, .. } => tables
                    .iter()
                    .flat_map(|slice| slice.iter().flat_map(|t| t.iter()))
                    .fold(F::zero(), fold_abs),
                FeedbackKind::Basis { coef, .. } => coef
                    .iter()
                    .flat_map(|slice| slice.iter().flat_map(|c| c.iter()))
                    .fold(F::zero(), fold_abs),
            },
        }
    }
}

/// A pricing rule as feedback on the simplex, piecewise-constant in time for
/// the tabulated variant.
#[derive(Debug, Clone, PartialEq)]
pub enum PriceMap<F> {
    /// Break-even form `P(x) = Σ v_i x_i` (the equilibrium pricing rule).
    Affine(Vec<F>),
    /// Constant price.
    Const(F),
    /// `tables[step][node]` on a simplex lattice.
    Grid {
        grid: SimplexGrid<F>,
        tables: Vec<Vec<F>>,
    },
}

impl<F: Real> PriceMap<F> {
    /// Price on time slice `k` at simplex point `x`.
    #[inline]
    pub fn eval(&self, k: usize, x: &[F]) -> F {
        match self {
            PriceMap::Affine(values) => values
                .iter()
                .zip(x.iter())
                .map(|(&v, &xi)| v * xi)
                .sum(),
            PriceMap::Const(c) => *c,
            PriceMap::Grid { grid, tables } => {
                grid.interp(&tables[k.min(tables.len() - 1)], x)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_strategy_ignores_state() {
        let s = Strategy::Constant(vec![1.0f64, -1.0]);
        assert_eq!(s.rate(0, 3, &[0.3, 0.7]), 1.0);
        assert_eq!(s.rate(1, 0, &[0.9, 0.1]), -1.0);
        assert_eq!(s.sup_norm(), 1.0);
    }

    #[test]
    fn grid_feedback_interpolates() {
        let grid = SimplexGrid::<f64>::new(2, 3);
        // theta_0(x) = x1 on one slice.
        let table: Vec<f64> = (0..grid.num_nodes()).map(|i| grid.coords(i)[0]).collect();
        let fb = FeedbackStrategy {
            times: vec![0.0, 1.0],
            kind: FeedbackKind::Grid {
                grid,
                tables: vec![vec![table]],
            },
        };
        assert!((fb.rate(0, 0, &[0.37, 0.63]) - 0.37).abs() < 1e-14);
        assert!((fb.rate_at_time(0, 0.99, &[0.2, 0.8]) - 0.2).abs() < 1e-14);
    }

    #[test]
    fn price_maps_evaluate() {
        let affine = PriceMap::Affine(vec![1.0f64, -1.0]);
        assert!((affine.eval(0, &[0.75, 0.25]) - 0.5).abs() < 1e-15);
        let constant = PriceMap::Const(0.3f64);
        assert_eq!(constant.eval(5, &[0.1, 0.9]), 0.3);
    }
}
