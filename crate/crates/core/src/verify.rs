//! Equilibrium certification and diagnostics.
//!
//! [`certify`] measures how far a pricing-rule/strategy pair is from
//! equilibrium: `ε₁` is the prior-weighted insider suboptimality (optimal
//! BSDE value minus realized strategy value per type) and `ε₂` is the
//! root-mean-square gap between the candidate price process and the
//! break-even price of the strategy, both estimated on a common Brownian
//! population. Feedback pairs are turned into processes by propagating the
//! Euler filter under the pair's own strategy; the break-even side always
//! comes from the exact ratio-form filter.
//!
//! [`setvalue_probe`] checks membership of candidate value vectors in the
//! sampled set value, and [`markov_test`] is a regression diagnostic for the
//! Markov property of a price process under the reference measure.

use ndarray::Array2;
use rayon::prelude::*;

use crate::bsde::{bsde_solve_grid, bsde_solve_regress, value_of_strategy};
use crate::error::Error;
use crate::fbsde::EquilibriumSolution;
use crate::feedback::{PriceMap, Strategy};
use crate::model::{Discretization, MarketModel};
use crate::scalar::Real;
use crate::simulate::{filter_exact, filter_sde, gen_paths, PathBundle};
use crate::stats::{ols, McEstimate};
use crate::Result;

/// Per-type suboptimality data.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TypeGap<F> {
    /// Optimal value `Y^{P,i}_0`.
    pub optimal: F,
    /// Realized strategy value `J(P; v_i, θ^i)`.
    pub strategy_value: F,
    pub strategy_se: F,
    /// `optimal - strategy_value`.
    pub gap: F,
}

/// The epsilon-equilibrium certificate.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EpsilonCertificate<F> {
    pub epsilon1: F,
    pub epsilon1_se: F,
    pub epsilon2: F,
    pub epsilon2_se: F,
    /// `max(ε₁, ε₂)`.
    pub epsilon: F,
    pub per_type_gaps: Vec<TypeGap<F>>,
    pub dt: F,
    pub num_paths: usize,
    pub seed: u64,
    pub verdicts: Vec<String>,
}

/// A pricing-rule/strategy pair submitted for certification.
pub enum CertifiedPair<'a, F> {
    /// Feedback rule and strategy; both are propagated along the Euler
    /// filter under the strategy to obtain processes.
    Feedback {
        price: &'a PriceMap<F>,
        strategy: &'a Strategy<F>,
    },
    /// A converged FBSDE solution (break-even price map with its feedback).
    Solution(&'a EquilibriumSolution<F>),
}

/// Certify a pair per the two epsilon conditions. `ε₁` uses the Hamiltonian
/// BSDE for the supremum side (grid solver for N <= 3, regression beyond)
/// and Girsanov-weighted Monte Carlo for the realized value; `ε₂` compares
/// the candidate price process with the exact-filter break-even price under
/// the reference measure.
pub fn certify<F: Real>(
    model: &MarketModel<F>,
    pair: &CertifiedPair<'_, F>,
    disc: &Discretization<F>,
) -> Result<EpsilonCertificate<F>> {
    let n = model.n_types();
    let bundle = gen_paths(model, disc);
    let k_steps = bundle.num_steps();
    let paths = bundle.num_paths();
    let mut verdicts = Vec::new();

    // Candidate processes from the pair.
    let (price_proc, theta_proc, price_map, strategy): (
        Array2<F>,
        Vec<Array2<F>>,
        Option<&PriceMap<F>>,
        Strategy<F>,
    ) = match pair {
        CertifiedPair::Feedback { price, strategy } => {
            let filter = filter_sde(model, strategy, &bundle)?;
            let mut prices = Array2::zeros((paths, k_steps + 1));
            for j in 0..paths {
                for k in 0..=k_steps {
                    let x: Vec<F> = (0..n).map(|i| filter.x[(j, k, i)]).collect();
                    prices[(j, k)] = price.eval(k, &x);
                }
            }
            let thetas = rates_along(model, strategy, &filter.x, k_steps, paths);
            (prices, thetas, Some(*price), (*strategy).clone())
        }
        CertifiedPair::Solution(sol) => {
            let strategy = Strategy::Feedback(sol.strategy.clone());
            let filter = filter_sde(model, &strategy, &bundle)?;
            let thetas = rates_along(model, &strategy, &filter.x, k_steps, paths);
            (filter.price.clone(), thetas, None, strategy)
        }
    };

    // ε₂: exact-filter break-even price of the strategy processes.
    let exact = filter_exact(model, &strategy, &bundle)?;
    let sq_sample: Vec<F> = (0..paths)
        .into_par_iter()
        .map(|j| {
            let mut acc = F::zero();
            for k in 0..k_steps {
                let d = price_proc[(j, k)] - exact.price[(j, k)];
                acc += d * d * bundle.dt(k);
            }
            acc
        })
        .collect();
    let sq_est = McEstimate::from_sample(&sq_sample);
    let epsilon2 = sq_est.mean.max(F::zero()).sqrt();
    let epsilon2_se = if epsilon2 > F::zero() {
        sq_est.se / (F::lit(2.0) * epsilon2)
    } else {
        F::zero()
    };

    // ε₁: optimal value per type minus realized strategy value.
    let optimal: Vec<F> = match (price_map, n <= 3) {
        (Some(pm), true) => {
            verdicts.push("sup_via_grid_bsde".into());
            let surf = bsde_solve_grid(model, pm, disc)?;
            (0..n).map(|i| surf.y0(i, &model.prior)).collect()
        }
        _ => {
            verdicts.push("sup_via_regression_bsde".into());
            let reg = bsde_solve_regress(model, &price_proc, &exact.x, &bundle, disc.basis_degree)?;
            (0..n).map(|i| reg.surface.y0(i, &model.prior)).collect()
        }
    };

    let mut per_type_gaps = Vec::with_capacity(n);
    let mut epsilon1 = F::zero();
    let mut var1 = F::zero();
    for i in 0..n {
        let est = value_of_strategy(model, model.values[i], &price_proc, &theta_proc[i], &bundle);
        let gap = optimal[i] - est.mean;
        epsilon1 += model.prior[i] * gap;
        var1 += model.prior[i] * model.prior[i] * est.se * est.se;
        per_type_gaps.push(TypeGap {
            optimal: optimal[i],
            strategy_value: est.mean,
            strategy_se: est.se,
            gap,
        });
    }
    let epsilon1_se = var1.sqrt();
    if epsilon1 < -F::lit(3.0) * epsilon1_se {
        verdicts.push("epsilon1_negative_beyond_noise".into());
    }

    Ok(EpsilonCertificate {
        epsilon1,
        epsilon1_se,
        epsilon2,
        epsilon2_se,
        epsilon: epsilon1.max(epsilon2),
        per_type_gaps,
        dt: disc.dt(model.horizon),
        num_paths: paths,
        seed: disc.seed,
        verdicts,
    })
}

/// Evaluate per-type strategy rates along given states: `θ^i_k(X_k)`.
fn rates_along<F: Real>(
    model: &MarketModel<F>,
    strategy: &Strategy<F>,
    states: &ndarray::Array3<F>,
    k_steps: usize,
    paths: usize,
) -> Vec<Array2<F>> {
    let n = model.n_types();
    (0..n)
        .map(|i| {
            Array2::from_shape_fn((paths, k_steps), |(j, k)| {
                let x: Vec<F> = (0..n).map(|l| states[(j, k, l)]).collect();
                strategy.rate(i, k, &x)
            })
        })
        .collect()
}

/// Membership verdict of one candidate value vector against one certified
/// pair at one epsilon level.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SetValueSample<F> {
    pub candidate: Vec<F>,
    pub pair_index: usize,
    pub level: F,
    /// `Σ p_i |y_i - J_i|`.
    pub gap: F,
    /// Certified ε of the pair.
    pub pair_epsilon: F,
    pub member: bool,
}

/// Probe set-value membership: `y` belongs at level ε when its gap to the
/// pair's realized values is at most ε and the pair itself certifies at ε.
pub fn setvalue_probe<F: Real>(
    model: &MarketModel<F>,
    candidates: &[Vec<F>],
    pairs: &[CertifiedPair<'_, F>],
    levels: &[F],
    disc: &Discretization<F>,
) -> Result<Vec<SetValueSample<F>>> {
    let mut out = Vec::new();
    for (pair_index, pair) in pairs.iter().enumerate() {
        let cert = certify(model, pair, disc)?;
        let j_values: Vec<F> = cert
            .per_type_gaps
            .iter()
            .map(|g| g.strategy_value)
            .collect();
        for y in candidates {
            assert_eq!(y.len(), model.n_types());
            let gap: F = model
                .prior
                .iter()
                .zip(y.iter().zip(j_values.iter()))
                .map(|(&p, (&yi, &ji))| p * (yi - ji).abs())
                .sum();
            for &level in levels {
                out.push(SetValueSample {
                    candidate: y.clone(),
                    pair_index,
                    level,
                    gap,
                    pair_epsilon: cert.epsilon,
                    member: gap <= level && cert.epsilon <= level,
                });
            }
        }
    }
    Ok(out)
}

/// Verdict of the Markov-property diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum MarkovVerdict {
    MarkovConsistent,
    NonMarkov,
    Inconclusive,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct MarkovReport<F> {
    pub aux_coef: F,
    pub aux_se: F,
    pub z_score: F,
    pub verdict: MarkovVerdict,
    /// True when the auxiliary regressor is numerically collinear with the
    /// price level; it then carries no extra information and the process is
    /// flagged Markov-consistent with a zero coefficient.
    pub redundant: bool,
    pub n: usize,
}

/// Regress the increment `S_{t+Δ} - S_t` on `(1, S_t)` and on
/// `(1, S_t, A_t)`; report the auxiliary coefficient with a two-threshold
/// verdict: `|z| < 4` Markov-consistent, `|z| > 6` non-Markov, otherwise
/// inconclusive.
pub fn markov_test<F: Real>(s_t: &[F], s_next: &[F], a_t: &[F]) -> Result<MarkovReport<F>> {
    let n = s_t.len();
    if n < 100 || s_next.len() != n || a_t.len() != n {
        return Err(Error::InvalidArgument(
            "markov_test needs matched samples of at least 100 paths".into(),
        ));
    }
    let y: Vec<F> = s_next.iter().zip(s_t.iter()).map(|(&b, &a)| b - a).collect();

    // Base regression must be well-posed.
    let mut base = Vec::with_capacity(2 * n);
    for &s in s_t {
        base.push(F::one());
        base.push(s);
    }
    ols(&base, 2, &y).map_err(|_| {
        Error::DegenerateRegressors("price level is degenerate in the base regression".into())
    })?;

    let mut design = Vec::with_capacity(3 * n);
    for (&s, &a) in s_t.iter().zip(a_t.iter()) {
        design.push(F::one());
        design.push(s);
        design.push(a);
    }
    match ols(&design, 3, &y) {
        Ok(fit) => {
            let coef = fit.coef[2];
            let se = fit.se[2];
            let z = if se > F::zero() { coef / se } else { F::zero() };
            let verdict = if z.abs() < F::lit(4.0) {
                MarkovVerdict::MarkovConsistent
            } else if z.abs() > F::lit(6.0) {
                MarkovVerdict::NonMarkov
            } else {
                MarkovVerdict::Inconclusive
            };
            Ok(MarkovReport {
                aux_coef: coef,
                aux_se: se,
                z_score: z,
                verdict,
                redundant: false,
                n,
            })
        }
        Err(_) => Ok(MarkovReport {
            aux_coef: F::zero(),
            aux_se: F::infinity(),
            z_score: F::zero(),
            verdict: MarkovVerdict::MarkovConsistent,
            redundant: true,
            n,
        }),
    }
}

/// Simulate the non-Markov toy system `S_t = ∫_0^t B_s ds + B_t` with the
/// auxiliary statistic `A_t = ∫_0^t B_s ds`, sampled at `t` and `t + Δ`.
/// Returns `(S_t, S_{t+Δ}, A_t)` per path. The conditional increment mean is
/// `B_t Δ = (S_t - A_t) Δ`, so the auxiliary coefficient is `-Δ`.
pub fn toy_sg_paths<F: Real>(
    num_paths: usize,
    fine_steps: usize,
    seed: u64,
    t: F,
    delta: F,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let t_end = t + delta;
    let times: Vec<F> = (0..=fine_steps)
        .map(|k| t_end * F::from_usize(k).unwrap() / F::from_usize(fine_steps).unwrap())
        .collect();
    let bundle = PathBundle::with_times(seed, num_paths, times.clone());
    let k_at_t = (0..=fine_steps)
        .min_by(|&a, &b| {
            (times[a] - t)
                .abs()
                .partial_cmp(&(times[b] - t).abs())
                .unwrap()
        })
        .unwrap();
    let half = F::lit(0.5);
    let rows: Vec<(F, F, F)> = (0..num_paths)
        .into_par_iter()
        .map(|j| {
            let mut b = F::zero();
            let mut integral = F::zero();
            let mut s_at = F::zero();
            let mut a_at = F::zero();
            for k in 0..fine_steps {
                let db = bundle.increments[(j, k)];
                let dt = bundle.dt(k);
                // Trapezoid accumulation of ∫ B ds.
                integral += (b + half * db) * dt;
                b += db;
                if k + 1 == k_at_t {
                    s_at = integral + b;
                    a_at = integral;
                }
            }
            let s_end = integral + b;
            (s_at, s_end, a_at)
        })
        .collect();
    let mut s_t = Vec::with_capacity(num_paths);
    let mut s_next = Vec::with_capacity(num_paths);
    let mut a_t = Vec::with_capacity(num_paths);
    for (s, e, a) in rows {
        s_t.push(s);
        s_next.push(e);
        a_t.push(a);
    }
    (s_t, s_next, a_t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbsde::{solve_fbsde, SolverKind};
    use crate::feedback::{FeedbackKind, FeedbackStrategy};
    use crate::rng::SubstreamRng;

    #[test]
    fn zero_strategy_constant_price_pair() {
        let model = MarketModel::canonical_two_type(1.0);
        let disc = Discretization::new(32, 20_000, 51, 42, 3).unwrap();
        let price = PriceMap::Const(model.mean_value());
        let strategy = Strategy::zero(2);
        let cert = certify(
            &model,
            &CertifiedPair::Feedback {
                price: &price,
                strategy: &strategy,
            },
            &disc,
        )
        .unwrap();
        // Price self-consistent by construction.
        assert_eq!(cert.epsilon2, 0.0);
        // ε₁ = sqrt(2) - 1 from the closed-form BSDE.
        let expect = std::f64::consts::SQRT_2 - 1.0;
        assert!(
            (cert.epsilon1 - expect).abs() < 3.0 * cert.epsilon1_se + 1e-3,
            "epsilon1 = {} +- {}, want {expect}",
            cert.epsilon1,
            cert.epsilon1_se
        );
    }

    #[test]
    fn envelope_feedback_closes_the_gap() {
        // With P ≡ 0 and θ^i = dH(v_i), each per-type gap collapses to
        // discretization tolerance.
        let model = MarketModel::canonical_two_type(1.0);
        let disc = Discretization::new(32, 5_000, 51, 7, 3).unwrap();
        let price = PriceMap::Const(0.0);
        let rates: Vec<f64> = model
            .values
            .iter()
            .map(|&v| model.hamiltonian.eval(v).1)
            .collect();
        let strategy = Strategy::Constant(rates);
        let cert = certify(
            &model,
            &CertifiedPair::Feedback {
                price: &price,
                strategy: &strategy,
            },
            &disc,
        )
        .unwrap();
        for g in &cert.per_type_gaps {
            assert!(
                g.gap.abs() < 3.0 * g.strategy_se + 1e-6,
                "gap {} +- {}",
                g.gap,
                g.strategy_se
            );
        }
    }

    #[test]
    fn equilibrium_certificate_improves_with_refinement() {
        let model = MarketModel::canonical_two_type(0.25);
        let mut eps = Vec::new();
        for steps in [4usize, 8, 16] {
            let disc = Discretization::new(steps, 4_000, 41, 11, 3).unwrap();
            let sol = solve_fbsde(&model, &disc, SolverKind::Grid).unwrap();
            let cert = certify(&model, &CertifiedPair::Solution(&sol), &disc).unwrap();
            eps.push(cert.epsilon);
        }
        assert!(
            eps[2] < eps[0],
            "certified epsilon did not shrink under refinement: {eps:?}"
        );
    }

    #[test]
    fn degrading_the_equilibrium_strategy_raises_epsilon1() {
        let model = MarketModel::canonical_two_type(0.25);
        let disc = Discretization::new(16, 8_000, 41, 13, 3).unwrap();
        let sol = solve_fbsde(&model, &disc, SolverKind::Grid).unwrap();
        let base = certify(&model, &CertifiedPair::Solution(&sol), &disc).unwrap();

        // Perturb the equilibrium feedback by +0.2, clipped to the action set.
        let bound = model.action_bound();
        let FeedbackKind::Grid { grid, tables } = &sol.strategy.kind else {
            panic!("grid solver output expected")
        };
        let shifted: Vec<Vec<Vec<f64>>> = tables
            .iter()
            .map(|slice| {
                slice
                    .iter()
                    .map(|tab| tab.iter().map(|&v: &f64| (v + 0.2).min(bound)).collect())
                    .collect()
            })
            .collect();
        let perturbed = Strategy::Feedback(FeedbackStrategy {
            times: sol.strategy.times.clone(),
            kind: FeedbackKind::Grid {
                grid: grid.clone(),
                tables: shifted,
            },
        });
        let price = PriceMap::Affine(model.values.clone());
        let worse = certify(
            &model,
            &CertifiedPair::Feedback {
                price: &price,
                strategy: &perturbed,
            },
            &disc,
        )
        .unwrap();
        assert!(
            worse.epsilon1 > base.epsilon1 + 3.0 * worse.epsilon1_se,
            "degraded ε₁ {} vs base {}",
            worse.epsilon1,
            base.epsilon1
        );
    }

    #[test]
    fn setvalue_accepts_own_value_and_rejects_shifted() {
        let model = MarketModel::canonical_two_type(0.25);
        let disc = Discretization::new(16, 4_000, 41, 17, 3).unwrap();
        let sol = solve_fbsde(&model, &disc, SolverKind::Grid).unwrap();
        let cert = certify(&model, &CertifiedPair::Solution(&sol), &disc).unwrap();
        let j_values: Vec<f64> = cert
            .per_type_gaps
            .iter()
            .map(|g| g.strategy_value)
            .collect();
        let shifted: Vec<f64> = j_values.iter().map(|v| v + 1.0).collect();
        let samples = setvalue_probe(
            &model,
            &[j_values.clone(), shifted],
            &[CertifiedPair::Solution(&sol)],
            &[cert.epsilon.max(1e-6), 0.99],
            &disc,
        )
        .unwrap();
        // Own value accepted at its certificate level.
        assert!(samples[0].member, "own value rejected: {:?}", samples[0]);
        // Shifted by one rejected at every level below one.
        for s in &samples[2..] {
            assert!(!s.member, "shifted value accepted: {s:?}");
        }
    }

    #[test]
    fn toy_sg_is_flagged_non_markov() {
        let (s_t, s_next, a_t) = toy_sg_paths::<f64>(100_000, 600, 99, 0.5, 0.1);
        let report = markov_test(&s_t, &s_next, &a_t).unwrap();
        assert_eq!(report.verdict, MarkovVerdict::NonMarkov);
        // Auxiliary coefficient ~ -Δ.
        assert!(
            (report.aux_coef + 0.1).abs() < 0.2 * 0.1,
            "aux coefficient {} (z = {})",
            report.aux_coef,
            report.z_score
        );
        assert!(report.z_score.abs() > 6.0);
    }

    #[test]
    fn brownian_is_markov_consistent() {
        let n = 100_000;
        let mut rng = SubstreamRng::new(3, 0);
        let mut s_t = Vec::with_capacity(n);
        let mut s_next = Vec::with_capacity(n);
        let mut a_t = Vec::with_capacity(n);
        for _ in 0..n {
            let b_t: f64 = rng.standard_normal::<f64>() * 0.5f64.sqrt();
            let incr: f64 = rng.standard_normal::<f64>() * 0.1f64.sqrt();
            let aux: f64 = rng.standard_normal();
            s_t.push(b_t);
            s_next.push(b_t + incr);
            a_t.push(aux);
        }
        let report = markov_test(&s_t, &s_next, &a_t).unwrap();
        assert_eq!(report.verdict, MarkovVerdict::MarkovConsistent);
    }

    #[test]
    fn redundant_auxiliary_is_markov_consistent() {
        let n = 5_000;
        let mut rng = SubstreamRng::new(8, 1);
        let mut s_t = Vec::with_capacity(n);
        let mut s_next = Vec::with_capacity(n);
        let mut a_t = Vec::with_capacity(n);
        for _ in 0..n {
            let s: f64 = rng.standard_normal();
            s_t.push(s);
            s_next.push(s + rng.standard_normal::<f64>() * 0.1);
            a_t.push(2.0 * s - 1.0); // exactly affine in S
        }
        let report = markov_test(&s_t, &s_next, &a_t).unwrap();
        assert!(report.redundant);
        assert_eq!(report.verdict, MarkovVerdict::MarkovConsistent);
        assert_eq!(report.aux_coef, 0.0);
    }
}
