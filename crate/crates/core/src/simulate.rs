//! Path-level simulation under the reference measure, where the aggregate
//! order flow is a Brownian motion.
//!
//! Everything derives from a [`PathBundle`] of Brownian increments with
//! counter-based per-path substreams: Girsanov weights `M^θ`, the
//! conditional-law filter in exact ratio form (`filter_exact`) and in Euler
//! SDE form (`filter_sde`), and the induced break-even price.
//!
//! Weights are accumulated in log space and the exact filter goes through a
//! log-sum-exp, so long horizons and aggressive strategies do not overflow.
//! Filter states are pinned to unit mass by absorbing the floating-point
//! defect into the largest component, which keeps `Σ_i X^i = 1` exact.

use ndarray::{Array2, Array3, Axis, Zip};

use crate::error::Error;
use crate::feedback::Strategy;
use crate::model::{Discretization, MarketModel};
use crate::rng::SubstreamRng;
use crate::simplex::pin_unit_mass;
use crate::scalar::Real;
use crate::Result;

/// Hard clip threshold of the SDE filter.
pub const EPS_CLIP: f64 = 1e-12;

/// Brownian increments on a time grid, one substream per path.
#[derive(Debug, Clone)]
pub struct PathBundle<F> {
    pub seed: u64,
    /// Grid times `t_0 = 0 < t_1 < ... < t_K`.
    pub times: Vec<F>,
    /// `(num_paths, K)` increments; entry `(j, k)` is `B_{t_{k+1}} - B_{t_k}`
    /// of path `j`.
    pub increments: Array2<F>,
}

impl<F: Real> PathBundle<F> {
    /// Uniform grid on `[0, horizon]` with `disc.num_steps` steps.
    pub fn generate(disc: &Discretization<F>, horizon: F) -> Self {
        let k = disc.num_steps;
        let times = (0..=k)
            .map(|i| horizon * F::from_usize(i).unwrap() / F::from_usize(k).unwrap())
            .collect();
        Self::with_times(disc.seed, disc.num_paths, times)
    }

    /// Arbitrary strictly increasing time grid starting at 0. Path `j` draws
    /// its increments from substream `(seed, j)` in step order, so results
    /// are independent of scheduling and of the total path count.
    pub fn with_times(seed: u64, num_paths: usize, times: Vec<F>) -> Self {
        assert!(times.len() >= 2, "need at least one step");
        assert!(
            times.windows(2).all(|w| w[1] > w[0]),
            "time grid must be strictly increasing"
        );
        let k = times.len() - 1;
        let sqrt_dts: Vec<F> = times.windows(2).map(|w| (w[1] - w[0]).sqrt()).collect();
        let mut increments = Array2::zeros((num_paths, k));
        Zip::indexed(increments.rows_mut()).par_for_each(|j, mut row| {
            let mut rng = SubstreamRng::new(seed, j as u64);
            for (step, slot) in row.iter_mut().enumerate() {
                *slot = rng.standard_normal::<F>() * sqrt_dts[step];
            }
        });
        Self {
            seed,
            times,
            increments,
        }
    }

    pub fn num_paths(&self) -> usize {
        self.increments.nrows()
    }

    pub fn num_steps(&self) -> usize {
        self.increments.ncols()
    }

    pub fn dt(&self, k: usize) -> F {
        self.times[k + 1] - self.times[k]
    }

    pub fn horizon(&self) -> F {
        *self.times.last().unwrap()
    }

    /// Merge consecutive increments in groups of `factor`, producing the same
    /// Brownian paths on a coarser grid. Requires `factor` to divide the step
    /// count.
    pub fn coarsen(&self, factor: usize) -> Self {
        assert!(factor >= 1 && self.num_steps() % factor == 0);
        let coarse_k = self.num_steps() / factor;
        let times: Vec<F> = (0..=coarse_k).map(|i| self.times[i * factor]).collect();
        let mut increments = Array2::zeros((self.num_paths(), coarse_k));
        Zip::indexed(increments.rows_mut()).par_for_each(|j, mut row| {
            for (c, slot) in row.iter_mut().enumerate() {
                let mut acc = F::zero();
                for f in 0..factor {
                    acc += self.increments[(j, c * factor + f)];
                }
                *slot = acc;
            }
        });
        Self {
            seed: self.seed,
            times,
            increments,
        }
    }

    /// Brownian path values at grid times (prefix sums; `B_0 = 0`).
    pub fn brownian_path(&self, path: usize) -> Vec<F> {
        let mut out = Vec::with_capacity(self.num_steps() + 1);
        let mut acc = F::zero();
        out.push(acc);
        for k in 0..self.num_steps() {
            acc += self.increments[(path, k)];
            out.push(acc);
        }
        out
    }
}

/// Generate the Brownian bundle for a discretization (uniform grid over the
/// model horizon).
pub fn gen_paths<F: Real>(model: &MarketModel<F>, disc: &Discretization<F>) -> PathBundle<F> {
    PathBundle::generate(disc, model.horizon)
}

/// Log Girsanov weights `ln M^θ_{t_k}` along one path for a per-step rate
/// process: `ln M_{k+1} = ln M_k + θ_k ΔB_k - θ_k² Δt_k / 2`. Returns `K+1`
/// values starting at zero.
pub fn girsanov_log_weights<F: Real>(theta_path: &[F], increments: &[F], dts: &[F]) -> Vec<F> {
    let k = increments.len();
    debug_assert!(theta_path.len() >= k && dts.len() >= k);
    let mut out = Vec::with_capacity(k + 1);
    let mut acc = F::zero();
    out.push(acc);
    let half = F::lit(0.5);
    for step in 0..k {
        let th = theta_path[step];
        acc = acc + th * increments[step] - half * th * th * dts[step];
        out.push(acc);
    }
    out
}

/// Per-step Girsanov weights `M^θ` of one bundle path (`M_0 = 1`).
pub fn girsanov_weight<F: Real>(
    bundle: &PathBundle<F>,
    path: usize,
    theta_path: &[F],
) -> Vec<F> {
    let incr: Vec<F> = bundle.increments.row(path).to_vec();
    let dts: Vec<F> = (0..bundle.num_steps()).map(|k| bundle.dt(k)).collect();
    girsanov_log_weights(theta_path, &incr, &dts)
        .into_iter()
        .map(|l| l.exp())
        .collect()
}

/// Filtered paths: conditional law on the simplex, break-even price, and the
/// per-type log weights that produced them.
#[derive(Debug, Clone)]
pub struct FilterPath<F> {
    pub times: Vec<F>,
    /// `(paths, K+1, N)` conditional law.
    pub x: Array3<F>,
    /// `(paths, K+1)` price `Σ v_i X^i`.
    pub price: Array2<F>,
    /// `(paths, K+1, N)` log weights `ln M^{θ^i}`.
    pub log_weights: Array3<F>,
    /// Number of hard truncation events (component left `[0, 1]` before
    /// projection); zero for the exact filter.
    pub clip_events: usize,
    /// Largest per-step magnitude of `Σ_i ΔX^i` before projection (SDE
    /// filter only; the Euler increments preserve unit mass analytically).
    pub max_sum_defect: F,
}

/// One path of the exact (ratio-form) filter. `visit` receives
/// `(step, state, log_weights)` for every grid time including `t_0`.
pub fn filter_exact_path<F: Real>(
    model: &MarketModel<F>,
    strategy: &Strategy<F>,
    increments: &[F],
    dts: &[F],
    mut visit: impl FnMut(usize, &[F], &[F]),
) -> Result<()> {
    let n = model.n_types();
    let half = F::lit(0.5);
    let log_prior: Vec<F> = model.prior.iter().map(|&p| p.ln()).collect();
    let mut logm = vec![F::zero(); n];
    let mut x = model.prior.clone();
    let mut scratch = vec![F::zero(); n];
    visit(0, &x, &logm);
    for k in 0..increments.len() {
        let db = increments[k];
        let dt = dts[k];
        for i in 0..n {
            let th = strategy.rate(i, k, &x);
            logm[i] = logm[i] + th * db - half * th * th * dt;
        }
        // Kallianpur-Striebel ratio via log-sum-exp.
        let mut top = F::neg_infinity();
        for i in 0..n {
            scratch[i] = log_prior[i] + logm[i];
            if scratch[i] > top {
                top = scratch[i];
            }
        }
        if !top.is_finite() {
            return Err(Error::WeightUnderflow { path: 0, step: k });
        }
        for i in 0..n {
            x[i] = (scratch[i] - top).exp();
        }
        pin_unit_mass(&mut x);
        visit(k + 1, &x, &logm);
    }
    Ok(())
}

/// One path of the Euler (SDE-form) filter with post-step projection.
/// Returns `(clip_events, max_sum_defect)`.
pub fn filter_sde_path<F: Real>(
    model: &MarketModel<F>,
    strategy: &Strategy<F>,
    increments: &[F],
    dts: &[F],
    mut visit: impl FnMut(usize, &[F]),
) -> (usize, F) {
    let n = model.n_types();
    let eps = F::lit(EPS_CLIP);
    let one_minus = F::one() - eps;
    let mut x = model.prior.clone();
    let mut rates = vec![F::zero(); n];
    let mut clip_events = 0usize;
    let mut max_defect = F::zero();
    visit(0, &x);
    for k in 0..increments.len() {
        let db = increments[k];
        let dt = dts[k];
        for (i, slot) in rates.iter_mut().enumerate() {
            *slot = strategy.rate(i, k, &x);
        }
        let xbar: F = rates.iter().zip(x.iter()).map(|(&t, &xi)| t * xi).sum();
        let shock = db - xbar * dt;
        let mut sum_defect = F::zero();
        for i in 0..n {
            let dx = x[i] * (rates[i] - xbar) * shock;
            sum_defect += dx;
            x[i] += dx;
        }
        if sum_defect.abs() > max_defect {
            max_defect = sum_defect.abs();
        }
        for xi in x.iter_mut() {
            if *xi < F::zero() || *xi > F::one() {
                clip_events += 1;
            }
            *xi = (*xi).max(eps).min(one_minus);
        }
        pin_unit_mass(&mut x);
        visit(k + 1, &x);
    }
    (clip_events, max_defect)
}

fn dts_of<F: Real>(bundle: &PathBundle<F>) -> Vec<F> {
    (0..bundle.num_steps()).map(|k| bundle.dt(k)).collect()
}

/// Exact-formula filter over a whole bundle. Feedback strategies are
/// evaluated at the exact-filter state.
pub fn filter_exact<F: Real>(
    model: &MarketModel<F>,
    strategy: &Strategy<F>,
    bundle: &PathBundle<F>,
) -> Result<FilterPath<F>> {
    run_filter(model, strategy, bundle, FilterScheme::Exact)
}

/// Euler SDE filter with simplex projection over a whole bundle. Feedback
/// strategies are evaluated at the SDE state.
pub fn filter_sde<F: Real>(
    model: &MarketModel<F>,
    strategy: &Strategy<F>,
    bundle: &PathBundle<F>,
) -> Result<FilterPath<F>> {
    run_filter(model, strategy, bundle, FilterScheme::Sde)
}

#[derive(Clone, Copy, PartialEq)]
enum FilterScheme {
    Exact,
    Sde,
}

fn run_filter<F: Real>(
    model: &MarketModel<F>,
    strategy: &Strategy<F>,
    bundle: &PathBundle<F>,
    scheme: FilterScheme,
) -> Result<FilterPath<F>> {
    let n = model.n_types();
    let paths = bundle.num_paths();
    let k = bundle.num_steps();
    let dts = dts_of(bundle);
    let mut x = Array3::zeros((paths, k + 1, n));
    let mut price = Array2::zeros((paths, k + 1));
    let mut log_weights = Array3::zeros((paths, k + 1, n));

    let results: Vec<Result<(usize, F)>> = Zip::indexed(x.outer_iter_mut())
        .and(price.rows_mut())
        .and(log_weights.outer_iter_mut())
        .and(bundle.increments.rows())
        .par_map_collect(|j, mut xj, mut pj, mut lj, incr| {
            let incr = incr.as_slice().expect("contiguous increments");
            match scheme {
                FilterScheme::Exact => {
                    filter_exact_path(model, strategy, incr, &dts, |step, state, logm| {
                        for i in 0..n {
                            xj[(step, i)] = state[i];
                            lj[(step, i)] = logm[i];
                        }
                        pj[step] = model.price_at(state);
                    })
                    .map_err(|e| match e {
                        Error::WeightUnderflow { step, .. } => {
                            Error::WeightUnderflow { path: j, step }
                        }
                        other => other,
                    })?;
                    Ok((0, F::zero()))
                }
                FilterScheme::Sde => {
                    let stats =
                        filter_sde_path(model, strategy, incr, &dts, |step, state| {
                            for i in 0..n {
                                xj[(step, i)] = state[i];
                            }
                            pj[step] = model.price_at(state);
                        });
                    // The SDE filter does not track weights; they stay zero.
                    let _ = &mut lj;
                    Ok(stats)
                }
            }
        })
        .into_iter()
        .collect();

    let mut clip_events = 0usize;
    let mut max_sum_defect = F::zero();
    for r in results {
        let (c, d) = r?;
        clip_events += c;
        if d > max_sum_defect {
            max_sum_defect = d;
        }
    }
    Ok(FilterPath {
        times: bundle.times.clone(),
        x,
        price,
        log_weights,
        clip_events,
        max_sum_defect,
    })
}

/// RMS difference per time step between the SDE filter and the exact filter
/// run on the same paths (first coordinate). Memory-light: nothing is stored
/// per path.
pub fn filter_scheme_rms<F: Real>(
    model: &MarketModel<F>,
    strategy: &Strategy<F>,
    bundle: &PathBundle<F>,
) -> Result<Vec<F>> {
    let k = bundle.num_steps();
    let dts = dts_of(bundle);
    let per_path: Vec<Result<Vec<F>>> = bundle
        .increments
        .axis_iter(Axis(0))
        .into_par_iter()
        .map(|incr| {
            let incr = incr.as_slice().expect("contiguous increments");
            let mut sde_states = vec![F::zero(); k + 1];
            filter_sde_path(model, strategy, incr, &dts, |step, state| {
                sde_states[step] = state[0];
            });
            let mut sq = vec![F::zero(); k + 1];
            filter_exact_path(model, strategy, incr, &dts, |step, state, _| {
                let d = sde_states[step] - state[0];
                sq[step] = d * d;
            })?;
            Ok(sq)
        })
        .collect();
    let mut acc = vec![F::zero(); k + 1];
    let mut count = 0usize;
    for row in per_path {
        let row = row?;
        for (a, r) in acc.iter_mut().zip(row.iter()) {
            *a += *r;
        }
        count += 1;
    }
    let nf = F::from_usize(count).unwrap();
    Ok(acc.into_iter().map(|s| (s / nf).sqrt()).collect())
}

use rayon::prelude::*;

/// Dump filtered paths as CSV with columns
/// `path,step,t,B,X_1..X_N,P,M_1..M_N`.
pub fn dump_paths_csv<F: Real, W: std::io::Write>(
    bundle: &PathBundle<F>,
    filter: &FilterPath<F>,
    max_paths: usize,
    out: &mut W,
) -> std::io::Result<()> {
    let n = filter.x.shape()[2];
    write!(out, "path,step,t,B")?;
    for i in 1..=n {
        write!(out, ",X_{i}")?;
    }
    write!(out, ",P")?;
    for i in 1..=n {
        write!(out, ",M_{i}")?;
    }
    writeln!(out)?;
    let paths = bundle.num_paths().min(max_paths);
    for j in 0..paths {
        let b = bundle.brownian_path(j);
        for step in 0..=bundle.num_steps() {
            write!(
                out,
                "{j},{step},{:.11e},{:.11e}",
                filter.times[step], b[step]
            )?;
            for i in 0..n {
                write!(out, ",{:.11e}", filter.x[(j, step, i)])?;
            }
            write!(out, ",{:.11e}", filter.price[(j, step)])?;
            for i in 0..n {
                write!(out, ",{:.11e}", filter.log_weights[(j, step, i)].exp())?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::McEstimate;
    use approx::assert_abs_diff_eq;

    fn toy_disc(steps: usize, paths: usize, seed: u64) -> Discretization<f64> {
        Discretization::new(steps, paths, 11, seed, 2).unwrap()
    }

    #[test]
    fn bundle_is_deterministic_and_prefix_stable() {
        let d2 = toy_disc(4, 2, 42);
        let d4 = toy_disc(4, 4, 42);
        let a = PathBundle::generate(&d2, 1.0);
        let b = PathBundle::generate(&d2, 1.0);
        assert_eq!(a.increments, b.increments);
        let c = PathBundle::generate(&d4, 1.0);
        for j in 0..2 {
            for k in 0..4 {
                assert_eq!(a.increments[(j, k)], c.increments[(j, k)]);
            }
        }
    }

    #[test]
    fn increments_match_clt_bound() {
        // One step of size dt over many paths: |mean| < 5 sqrt(dt)/1000.
        let disc = toy_disc(1, 1_000_000, 7);
        let bundle = PathBundle::generate(&disc, 0.5);
        let dt = 0.5f64;
        let mean = bundle.increments.column(0).mean().unwrap();
        assert!(mean.abs() < 5.0 * dt.sqrt() / 1000.0, "mean {mean}");
        let var = bundle
            .increments
            .column(0)
            .iter()
            .map(|&x| x * x)
            .sum::<f64>()
            / 1e6;
        assert!((var / dt - 1.0).abs() < 5.0 * (2.0f64 / 1e6).sqrt());
    }

    #[test]
    fn girsanov_zero_strategy_is_unit() {
        let disc = toy_disc(8, 3, 1);
        let bundle = PathBundle::generate(&disc, 1.0);
        let theta = vec![0.0f64; 8];
        let m = girsanov_weight(&bundle, 1, &theta);
        assert!(m.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn girsanov_printed_formula() {
        // Constant rate 0.3 with realized B_T = 1 over T = 1 gives
        // exp(0.3 - 0.045) = exp(0.255).
        let times: Vec<f64> = (0..=4).map(|i| i as f64 / 4.0).collect();
        let mut bundle = PathBundle::with_times(9, 1, times);
        bundle.increments.row_mut(0).fill(0.25);
        let m = girsanov_weight(&bundle, 0, &[0.3; 4]);
        assert_abs_diff_eq!(m[4], (0.255f64).exp(), epsilon = 1e-12);
        assert_eq!(m[0], 1.0);
    }

    #[test]
    fn girsanov_weights_are_martingale() {
        let disc = toy_disc(16, 100_000, 3);
        let bundle = PathBundle::generate(&disc, 1.0);
        let theta = vec![0.5f64; 16];
        let sample: Vec<f64> = (0..bundle.num_paths())
            .map(|j| *girsanov_weight(&bundle, j, &theta).last().unwrap())
            .collect();
        let est = McEstimate::from_sample(&sample);
        assert!(
            (est.mean - 1.0).abs() < 3.0 * est.se,
            "E[M_T] = {} +- {}",
            est.mean,
            est.se
        );
    }

    #[test]
    fn zero_strategy_filters_are_static() {
        let model = MarketModel::canonical_two_type(1.0);
        let disc = toy_disc(16, 8, 5);
        let bundle = gen_paths(&model, &disc);
        let strategy = Strategy::zero(2);
        for filter in [
            filter_exact(&model, &strategy, &bundle).unwrap(),
            filter_sde(&model, &strategy, &bundle).unwrap(),
        ] {
            for j in 0..bundle.num_paths() {
                for k in 0..=bundle.num_steps() {
                    assert_eq!(filter.x[(j, k, 0)], 0.5);
                    assert_eq!(filter.x[(j, k, 1)], 0.5);
                    assert_eq!(filter.price[(j, k)], 0.0);
                }
            }
        }
    }

    #[test]
    fn tanh_closed_form_matches_exact_filter() {
        let model = MarketModel::canonical_two_type(1.0);
        let disc = toy_disc(64, 16, 12);
        let bundle = gen_paths(&model, &disc);
        let strategy = Strategy::Constant(vec![1.0, -1.0]);
        let filter = filter_exact(&model, &strategy, &bundle).unwrap();
        for j in 0..bundle.num_paths() {
            let b = bundle.brownian_path(j);
            for k in 0..=bundle.num_steps() {
                let expected_x1 = 1.0 / (1.0 + (-2.0 * b[k]).exp());
                assert_abs_diff_eq!(filter.x[(j, k, 0)], expected_x1, epsilon = 1e-12);
                assert_abs_diff_eq!(filter.price[(j, k)], b[k].tanh(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn single_type_filter_is_degenerate() {
        let model = MarketModel::single_type(2.0, 1.0);
        let disc = toy_disc(4, 3, 2);
        let bundle = gen_paths(&model, &disc);
        let strategy = Strategy::Constant(vec![0.7]);
        let filter = filter_exact(&model, &strategy, &bundle).unwrap();
        for j in 0..3 {
            for k in 0..=4 {
                assert_eq!(filter.x[(j, k, 0)], 1.0);
                assert_eq!(filter.price[(j, k)], 2.0);
            }
        }
    }

    #[test]
    fn sde_filter_preserves_unit_mass_three_types() {
        let values = vec![-1.0, 0.0, 1.0];
        let prior = vec![1.0 / 3.0; 3];
        let model = MarketModel::new(
            values.clone(),
            prior,
            0.5,
            crate::hamiltonian::HamiltonianSpec::sqrt_closed_form(),
        )
        .unwrap();
        let disc = toy_disc(32, 64, 77);
        let bundle = gen_paths(&model, &disc);
        let strategy = Strategy::Constant(values);
        let filter = filter_sde(&model, &strategy, &bundle).unwrap();
        for j in 0..bundle.num_paths() {
            for k in 0..=bundle.num_steps() {
                let sum: f64 = (0..3).map(|i| filter.x[(j, k, i)]).sum();
                assert_eq!(sum, 1.0, "mass defect at path {j} step {k}");
                assert!(filter.price[(j, k)].abs() <= 1.0);
            }
        }
        assert!(filter.max_sum_defect <= 1e-10);
    }

    #[test]
    fn sde_converges_to_exact_under_refinement() {
        let model = MarketModel::canonical_two_type(1.0);
        let strategy = Strategy::Constant(vec![1.0, -1.0]);
        // Fixed Brownian population at the finest grid, coarsened upward.
        let fine = PathBundle::generate(&toy_disc(1024, 2_000, 21), 1.0);
        let mut errs = Vec::new();
        for factor in [32usize, 16, 8, 4, 2, 1] {
            let bundle = fine.coarsen(factor);
            let rms = filter_scheme_rms(&model, &strategy, &bundle).unwrap();
            let max_rms = rms.iter().cloned().fold(0.0f64, f64::max);
            errs.push(max_rms);
        }
        for w in errs.windows(2) {
            assert!(w[1] < w[0], "refinement did not reduce error: {errs:?}");
        }
    }

    #[test]
    fn csv_dump_has_expected_shape() {
        let model = MarketModel::canonical_two_type(1.0);
        let disc = toy_disc(4, 3, 2);
        let bundle = gen_paths(&model, &disc);
        let filter = filter_exact(&model, &Strategy::zero(2), &bundle).unwrap();
        let mut buf = Vec::new();
        dump_paths_csv(&bundle, &filter, 2, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "path,step,t,B,X_1,X_2,P,M_1,M_2");
        assert_eq!(lines.len(), 1 + 2 * 5);
    }
}
