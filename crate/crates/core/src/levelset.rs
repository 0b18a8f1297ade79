//! Level-set / duality side of the game.
//!
//! For controls `(θ, Z)` the forward system carries the filter `X` and the
//! value candidates `Y^i_t = y_i - ∫ H(Ẑ^i) ds + ∫ Z^i dB`; the cost
//! `𝒥_i = E[|Y^i_T|² + ∫ |h^i|^{4/3} ds]` with the Fenchel gap
//! `h^i = H(Ẑ^i) - Ẑ^i θ^i + f(θ^i)` vanishes exactly at equilibria. The
//! auxiliary value `W(0, p, y) = inf 𝒥` characterizes the set value as its
//! zero level set; the search here only produces upper bounds (coordinate
//! descent over tabulated feedback controls), so membership verdicts are
//! "below tolerance", never claims that `W = 0`.

use rayon::prelude::*;

use crate::bsde::SurfaceRepr;
use crate::error::Error;
use crate::fbsde::EquilibriumSolution;
use crate::feedback::{FeedbackKind, FeedbackStrategy, Strategy};
use crate::model::MarketModel;
use crate::rng::SubstreamRng;
use crate::scalar::Real;
use crate::simplex::SimplexGrid;
use crate::simulate::{filter_sde_path, PathBundle};
use crate::stats::McEstimate;
use crate::Result;

/// Tabulated control pair: trading-rate feedback and `Z`-feedback per type.
#[derive(Debug, Clone)]
pub struct ControlPair<F> {
    pub theta: FeedbackStrategy<F>,
    pub zeta: FeedbackStrategy<F>,
}

/// Where a control pair came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum ControlProvenance {
    Equilibrium,
    Searched,
    Supplied,
}

/// Cost report for one candidate `y` under one control pair.
#[derive(Debug, Clone)]
pub struct LevelSetReport<F> {
    pub candidate: Vec<F>,
    /// `𝒥_i` per type.
    pub costs: Vec<McEstimate<F>>,
    /// Terminal square part `E|Y_T|²` per type.
    pub terminal_term: Vec<McEstimate<F>>,
    /// Running part `E ∫ |h|^{4/3} ds` per type.
    pub running_term: Vec<McEstimate<F>>,
    pub total: F,
    pub total_se: F,
    /// Pathwise terminal values `Y_T = y_i + drift` per type.
    pub y_terminal: Vec<Vec<F>>,
    /// Pathwise y-free accumulators `Y_T - y_i`; identical bit-for-bit
    /// across candidates, which is the exact translation structure
    /// (the dynamics never read `y`).
    pub terminal_drift: Vec<Vec<F>>,
    pub provenance: ControlProvenance,
}

/// Evaluate the cost functional at candidate `y` with the given controls,
/// starting the filter at `p`. Rates and `Z` values are read from the
/// control tables along the simulated Euler filter.
pub fn eval_cost<F: Real>(
    model: &MarketModel<F>,
    p: &[F],
    y: &[F],
    controls: &ControlPair<F>,
    bundle: &PathBundle<F>,
    provenance: ControlProvenance,
) -> Result<LevelSetReport<F>> {
    let n = model.n_types();
    if y.len() != n || p.len() != n {
        return Err(Error::InvalidArgument(
            "candidate and start point must have one entry per type".into(),
        ));
    }
    // The forward filter starts at p; reuse the model with that prior.
    let start_model = if p == model.prior.as_slice() {
        model.clone()
    } else {
        MarketModel::new(model.values.clone(), p.to_vec(), model.horizon, model.hamiltonian.clone())?
    };
    let strategy = Strategy::Feedback(controls.theta.clone());
    let k_steps = bundle.num_steps();
    let dts: Vec<F> = (0..k_steps).map(|k| bundle.dt(k)).collect();
    let four_thirds = F::lit(4.0 / 3.0);

    struct PathOut<F> {
        drift: Vec<F>,
        terminal: Vec<F>,
        terminal_sq: Vec<F>,
        running: Vec<F>,
    }

    let rows: Vec<PathOut<F>> = (0..bundle.num_paths())
        .into_par_iter()
        .map(|j| {
            let incr: Vec<F> = bundle.increments.row(j).to_vec();
            // y enters only as an initial value: accumulate the y-free part.
            let mut drift = vec![F::zero(); n];
            let mut running = vec![F::zero(); n];
            filter_sde_path(&start_model, &strategy, &incr, &dts, |step, state| {
                if step < k_steps {
                    let db = incr[step];
                    let dt = dts[step];
                    let price = model.price_at(state);
                    for i in 0..n {
                        let z = controls.zeta.rate(i, step, state);
                        let th = controls.theta.rate(i, step, state);
                        let z_hat = model.values[i] + z - price;
                        let (h, _) = model.hamiltonian.eval(z_hat);
                        let gap = h - z_hat * th + model.hamiltonian.cost_unchecked(th);
                        running[i] += gap.abs().powf(four_thirds) * dt;
                        drift[i] = drift[i] - h * dt + z * db;
                    }
                }
            });
            let terminal: Vec<F> = drift
                .iter()
                .zip(y.iter())
                .map(|(&d, &yi)| yi + d)
                .collect();
            let terminal_sq: Vec<F> = terminal.iter().map(|&t| t * t).collect();
            PathOut {
                drift,
                terminal,
                terminal_sq,
                running,
            }
        })
        .collect();

    let mut costs = Vec::with_capacity(n);
    let mut terminal_term = Vec::with_capacity(n);
    let mut running_term = Vec::with_capacity(n);
    let mut y_terminal = Vec::with_capacity(n);
    let mut terminal_drift = Vec::with_capacity(n);
    let mut total = F::zero();
    let mut total_var = F::zero();
    for i in 0..n {
        let term: Vec<F> = rows.iter().map(|r| r.terminal_sq[i]).collect();
        let run: Vec<F> = rows.iter().map(|r| r.running[i]).collect();
        let cost: Vec<F> = term.iter().zip(run.iter()).map(|(&a, &b)| a + b).collect();
        let est = McEstimate::from_sample(&cost);
        total += est.mean;
        total_var += est.se * est.se;
        costs.push(est);
        terminal_term.push(McEstimate::from_sample(&term));
        running_term.push(McEstimate::from_sample(&run));
        y_terminal.push(rows.iter().map(|r| r.terminal[i]).collect());
        terminal_drift.push(rows.iter().map(|r| r.drift[i]).collect());
    }
    Ok(LevelSetReport {
        candidate: y.to_vec(),
        costs,
        terminal_term,
        running_term,
        total,
        total_se: total_var.sqrt(),
        y_terminal,
        terminal_drift,
        provenance,
    })
}

/// Zero controls on a trivial lattice.
pub fn zero_controls<F: Real>(model: &MarketModel<F>, times: &[F]) -> ControlPair<F> {
    let n = model.n_types();
    let grid = SimplexGrid::new(n.min(3), 2);
    let tables = vec![vec![vec![F::zero(); grid.num_nodes()]; n]; times.len() - 1];
    let fb = FeedbackStrategy {
        times: times.to_vec(),
        kind: FeedbackKind::Grid {
            grid,
            tables,
        },
    };
    ControlPair {
        theta: fb.clone(),
        zeta: fb,
    }
}

/// Controls extracted from a converged equilibrium: its feedback strategy
/// and its `ζ` surfaces.
pub fn equilibrium_controls<F: Real>(sol: &EquilibriumSolution<F>) -> ControlPair<F> {
    let zeta = match &sol.surface.repr {
        SurfaceRepr::Grid { grid, zeta, .. } => FeedbackStrategy {
            times: sol.surface.times.clone(),
            kind: FeedbackKind::Grid {
                grid: grid.clone(),
                tables: zeta[..zeta.len() - 1].to_vec(),
            },
        },
        SurfaceRepr::Basis {
            basis, zeta_coef, ..
        } => FeedbackStrategy {
            times: sol.surface.times.clone(),
            kind: FeedbackKind::Basis {
                basis: basis.clone(),
                coef: zeta_coef[..zeta_coef.len() - 1].to_vec(),
            },
        },
    };
    ControlPair {
        theta: sol.strategy.clone(),
        zeta,
    }
}

/// Search configuration: table resolution and iteration budget.
#[derive(Debug, Clone)]
pub struct SearchSpec<F> {
    /// Coarse control slices in time.
    pub time_slices: usize,
    /// Interior lattice nodes per simplex dimension.
    pub grid_nodes: usize,
    /// Box bound for tabulated `Z` values.
    pub z_bound: F,
    /// Simulation steps of the objective evaluations.
    pub sim_steps: usize,
    /// Common-random-number paths of the objective evaluations.
    pub sim_paths: usize,
    /// Coordinate-descent sweep budget per restart.
    pub max_cycles: usize,
    pub init_step: F,
    pub min_step: F,
    pub random_restarts: usize,
    pub seed: u64,
}

impl<F: Real> Default for SearchSpec<F> {
    fn default() -> Self {
        Self {
            time_slices: 4,
            grid_nodes: 5,
            z_bound: F::lit(4.0),
            sim_steps: 16,
            sim_paths: 2_000,
            max_cycles: 40,
            init_step: F::lit(0.25),
            min_step: F::lit(1e-3),
            random_restarts: 2,
            seed: 7_777,
        }
    }
}

/// Search outcome: best found upper bound on `W(0, p, y)`.
#[derive(Debug, Clone)]
pub struct SearchOutcome<F> {
    pub best_value: F,
    pub best_controls: ControlPair<F>,
    pub budget_exhausted: bool,
    /// Best value reached per restart.
    pub restart_values: Vec<F>,
}

/// Flatten coarse tables to the simulation grid (piecewise-constant in
/// time).
fn expand_tables<F: Real>(
    coarse: &[Vec<Vec<F>>],
    grid: &SimplexGrid<F>,
    times: &[F],
) -> FeedbackStrategy<F> {
    let k_fine = times.len() - 1;
    let slices = coarse.len();
    let tables: Vec<Vec<Vec<F>>> = (0..k_fine)
        .map(|k| coarse[k * slices / k_fine].clone())
        .collect();
    FeedbackStrategy {
        times: times.to_vec(),
        kind: FeedbackKind::Grid {
            grid: grid.clone(),
            tables,
        },
    }
}

/// Approximate `W(0, p, y)` from above by coordinate descent over tabulated
/// feedback controls, restarted from zero controls, the supplied equilibrium
/// controls (when given), and random perturbations.
pub fn search_w<F: Real>(
    model: &MarketModel<F>,
    p: &[F],
    y: &[F],
    spec: &SearchSpec<F>,
    equilibrium: Option<&ControlPair<F>>,
) -> Result<SearchOutcome<F>> {
    let n = model.n_types();
    let grid = SimplexGrid::new(n.min(3), spec.grid_nodes.max(2));
    let nodes = grid.num_nodes();
    let slices = spec.time_slices.max(1);
    let horizon = model.horizon;
    let sim_times: Vec<F> = (0..=spec.sim_steps)
        .map(|k| horizon * F::from_usize(k).unwrap() / F::from_usize(spec.sim_steps).unwrap())
        .collect();
    let bundle = PathBundle::with_times(spec.seed, spec.sim_paths, sim_times.clone());
    let bound = model.action_bound();

    // Parameter vector: θ tables then ζ tables, [slice][type][node].
    let param_len = 2 * slices * n * nodes;
    let objective = |params: &[F]| -> Result<F> {
        let (theta_tab, zeta_tab) = unpack(params, slices, n, nodes);
        let controls = ControlPair {
            theta: expand_tables(&theta_tab, &grid, &sim_times),
            zeta: expand_tables(&zeta_tab, &grid, &sim_times),
        };
        Ok(
            eval_cost(model, p, y, &controls, &bundle, ControlProvenance::Searched)?
                .total,
        )
    };

    // Restart points.
    let mut starts: Vec<Vec<F>> = vec![vec![F::zero(); param_len]];
    if let Some(eq) = equilibrium {
        let mut params = Vec::with_capacity(param_len);
        for s in 0..slices {
            let k = s * spec.sim_steps / slices;
            for i in 0..n {
                for idx in 0..nodes {
                    params.push(eq.theta.rate(i, k, grid.coords(idx)));
                }
            }
        }
        for s in 0..slices {
            let k = s * spec.sim_steps / slices;
            for i in 0..n {
                for idx in 0..nodes {
                    params.push(eq.zeta.rate(i, k, grid.coords(idx)));
                }
            }
        }
        // Random perturbations of the equilibrium point.
        let mut rng = SubstreamRng::new(spec.seed, 1);
        for _ in 0..spec.random_restarts {
            let perturbed: Vec<F> = params
                .iter()
                .map(|&v| v + rng.uniform_in(-F::lit(0.1), F::lit(0.1)))
                .collect();
            starts.push(perturbed);
        }
        starts.push(params);
    } else {
        let mut rng = SubstreamRng::new(spec.seed, 1);
        for _ in 0..spec.random_restarts {
            let random: Vec<F> = (0..param_len)
                .map(|c| {
                    if c < param_len / 2 {
                        rng.uniform_in(-bound, bound)
                    } else {
                        rng.uniform_in(-spec.z_bound, spec.z_bound)
                    }
                })
                .collect();
            starts.push(random);
        }
    }

    let mut best_value = F::infinity();
    let mut best_params = starts[0].clone();
    let mut restart_values = Vec::with_capacity(starts.len());
    let mut budget_exhausted = false;

    for start in &starts {
        let mut params = start.clone();
        clamp_params(&mut params, slices, n, nodes, bound, spec.z_bound);
        let mut value = objective(&params)?;
        let mut step = spec.init_step;
        let mut cycles = 0usize;
        while step > spec.min_step {
            if cycles >= spec.max_cycles {
                budget_exhausted = true;
                break;
            }
            cycles += 1;
            let mut improved = false;
            for c in 0..param_len {
                let saved = params[c];
                let (lo, hi) = if c < param_len / 2 {
                    (-bound, bound)
                } else {
                    (-spec.z_bound, spec.z_bound)
                };
                for dir in [step, -step] {
                    let trial = (saved + dir).max(lo).min(hi);
                    if trial == saved {
                        continue;
                    }
                    params[c] = trial;
                    let v = objective(&params)?;
                    if v < value {
                        value = v;
                        improved = true;
                        break;
                    }
                    params[c] = saved;
                }
            }
            if !improved {
                step = step / F::lit(2.0);
            }
        }
        restart_values.push(value);
        if value < best_value {
            best_value = value;
            best_params = params;
        }
    }

    let (theta_tab, zeta_tab) = unpack(&best_params, slices, n, nodes);
    Ok(SearchOutcome {
        best_value,
        best_controls: ControlPair {
            theta: expand_tables(&theta_tab, &grid, &sim_times),
            zeta: expand_tables(&zeta_tab, &grid, &sim_times),
        },
        budget_exhausted,
        restart_values,
    })
}

fn unpack<F: Real>(
    params: &[F],
    slices: usize,
    n: usize,
    nodes: usize,
) -> (Vec<Vec<Vec<F>>>, Vec<Vec<Vec<F>>>) {
    let block = slices * n * nodes;
    let mut theta = vec![vec![vec![F::zero(); nodes]; n]; slices];
    let mut zeta = vec![vec![vec![F::zero(); nodes]; n]; slices];
    for s in 0..slices {
        for i in 0..n {
            for idx in 0..nodes {
                let off = (s * n + i) * nodes + idx;
                theta[s][i][idx] = params[off];
                zeta[s][i][idx] = params[block + off];
            }
        }
    }
    (theta, zeta)
}

fn clamp_params<F: Real>(
    params: &mut [F],
    slices: usize,
    n: usize,
    nodes: usize,
    bound: F,
    z_bound: F,
) {
    let block = slices * n * nodes;
    for (c, v) in params.iter_mut().enumerate() {
        let (lo, hi) = if c < block {
            (-bound, bound)
        } else {
            (-z_bound, z_bound)
        };
        *v = (*v).max(lo).min(hi);
    }
}

/// Row of the duality membership map.
#[derive(Debug, Clone, serde::Serialize)]
pub struct MembershipRow<F> {
    pub candidate: Vec<F>,
    pub cost_at_equilibrium_controls: F,
    pub best_search_value: F,
    pub level_tol: F,
    pub in_zero_level_set: bool,
}

/// Classify candidates against the zero level set: evaluate the cost at the
/// equilibrium controls and refine with the upper-bound search; "in" means
/// the best value falls below `level_tol` (default: ten times the value at
/// the equilibrium point itself).
pub fn duality_probe<F: Real>(
    model: &MarketModel<F>,
    sol: &EquilibriumSolution<F>,
    y_grid: &[Vec<F>],
    spec: &SearchSpec<F>,
    level_tol: Option<F>,
) -> Result<Vec<MembershipRow<F>>> {
    let controls = equilibrium_controls(sol);
    let sim_times: Vec<F> = (0..=spec.sim_steps)
        .map(|k| {
            model.horizon * F::from_usize(k).unwrap() / F::from_usize(spec.sim_steps).unwrap()
        })
        .collect();
    let bundle = PathBundle::with_times(spec.seed, spec.sim_paths, sim_times);
    let base = eval_cost(
        model,
        &model.prior,
        &sol.y0,
        &controls,
        &bundle,
        ControlProvenance::Equilibrium,
    )?;
    let tol = level_tol.unwrap_or_else(|| {
        base.total.max(F::lit(1e-10)) * F::lit(10.0)
    });

    let mut rows = Vec::with_capacity(y_grid.len());
    for y in y_grid {
        let at_eq = eval_cost(
            model,
            &model.prior,
            y,
            &controls,
            &bundle,
            ControlProvenance::Equilibrium,
        )?;
        let searched = search_w(model, &model.prior, y, spec, Some(&controls))?;
        let best = at_eq.total.min(searched.best_value);
        rows.push(MembershipRow {
            candidate: y.clone(),
            cost_at_equilibrium_controls: at_eq.total,
            best_search_value: searched.best_value,
            level_tol: tol,
            in_zero_level_set: best < tol,
        });
    }
    Ok(rows)
}

/// CSV dump of a membership map: `y_1..y_N,cost_at_equilibrium_controls,
/// best_search_value,verdict`.
pub fn dump_membership_csv<F: Real, W: std::io::Write>(
    rows: &[MembershipRow<F>],
    out: &mut W,
) -> std::io::Result<()> {
    if rows.is_empty() {
        return Ok(());
    }
    let n = rows[0].candidate.len();
    for i in 1..=n {
        write!(out, "y_{i},")?;
    }
    writeln!(out, "cost_at_equilibrium_controls,best_search_value,verdict")?;
    for row in rows {
        for c in &row.candidate {
            write!(out, "{c:.11e},")?;
        }
        writeln!(
            out,
            "{:.11e},{:.11e},{}",
            row.cost_at_equilibrium_controls,
            row.best_search_value,
            if row.in_zero_level_set { "in" } else { "out" }
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbsde::{solve_fbsde, SolverKind};
    use crate::model::Discretization;

    fn uniform_times(horizon: f64, steps: usize) -> Vec<f64> {
        (0..=steps)
            .map(|k| horizon * k as f64 / steps as f64)
            .collect()
    }

    #[test]
    fn single_type_closed_form() {
        let model = MarketModel::single_type(1.0, 1.0);
        let times = uniform_times(1.0, 16);
        let bundle = PathBundle::with_times(3, 500, times.clone());
        let controls = zero_controls(&model, &times);
        // y = T: cost is exactly zero (h = 0 and Y_T = 0 pathwise).
        let report = eval_cost(
            &model,
            &[1.0],
            &[1.0],
            &controls,
            &bundle,
            ControlProvenance::Supplied,
        )
        .unwrap();
        assert!(report.total.abs() < 1e-20, "total {}", report.total);
        // y = 1.5: cost (y - T)^2 = 0.25 with zero variance.
        let report = eval_cost(
            &model,
            &[1.0],
            &[1.5],
            &controls,
            &bundle,
            ControlProvenance::Supplied,
        )
        .unwrap();
        assert!((report.total - 0.25).abs() < 1e-12);
        assert!(report.total_se < 1e-12);
    }

    #[test]
    fn translation_structure_is_exact() {
        let model = MarketModel::canonical_two_type(0.5);
        let times = uniform_times(0.5, 8);
        let bundle = PathBundle::with_times(9, 200, times.clone());
        let controls = zero_controls(&model, &times);
        let a = eval_cost(
            &model,
            &model.prior.clone(),
            &[0.3, -0.2],
            &controls,
            &bundle,
            ControlProvenance::Supplied,
        )
        .unwrap();
        let b = eval_cost(
            &model,
            &model.prior.clone(),
            &[0.3 + 0.7, -0.2 + 0.7],
            &controls,
            &bundle,
            ControlProvenance::Supplied,
        )
        .unwrap();
        for i in 0..2 {
            for j in 0..200 {
                // The y-free accumulators are bit-identical: Y_T moves
                // one-for-one with the initial value.
                assert_eq!(
                    a.terminal_drift[i][j], b.terminal_drift[i][j],
                    "translation broke at type {i} path {j}"
                );
                let d = b.y_terminal[i][j] - a.y_terminal[i][j];
                assert!((d - 0.7).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn equilibrium_controls_annihilate_running_term() {
        let model = MarketModel::canonical_two_type(0.25);
        let disc = Discretization::new(16, 2_000, 41, 5, 3).unwrap();
        let sol = solve_fbsde(&model, &disc, SolverKind::Grid).unwrap();
        let controls = equilibrium_controls(&sol);
        let bundle = PathBundle::with_times(77, 2_000, sol.surface.times.clone());
        let report = eval_cost(
            &model,
            &model.prior.clone(),
            &sol.y0,
            &controls,
            &bundle,
            ControlProvenance::Equilibrium,
        )
        .unwrap();
        for i in 0..2 {
            assert!(
                report.running_term[i].mean < 1e-4,
                "running term {} for type {i}",
                report.running_term[i].mean
            );
        }
        // Shifting y by +0.5 per type raises the cost by ~0.25 per type.
        let shifted: Vec<f64> = sol.y0.iter().map(|v| v + 0.5).collect();
        let worse = eval_cost(
            &model,
            &model.prior.clone(),
            &shifted,
            &controls,
            &bundle,
            ControlProvenance::Equilibrium,
        )
        .unwrap();
        assert!(
            worse.total >= report.total + 0.2,
            "shifted {} vs base {}",
            worse.total,
            report.total
        );
    }

    #[test]
    fn cost_decreases_under_time_refinement() {
        let model = MarketModel::canonical_two_type(0.25);
        let mut totals = Vec::new();
        for steps in [4usize, 16] {
            let disc = Discretization::new(steps, 2_000, 41, 5, 3).unwrap();
            let sol = solve_fbsde(&model, &disc, SolverKind::Grid).unwrap();
            let controls = equilibrium_controls(&sol);
            let bundle = PathBundle::with_times(77, 2_000, sol.surface.times.clone());
            let report = eval_cost(
                &model,
                &model.prior.clone(),
                &sol.y0,
                &controls,
                &bundle,
                ControlProvenance::Equilibrium,
            )
            .unwrap();
            totals.push(report.total);
        }
        assert!(
            totals[1] < totals[0],
            "cost did not decrease under refinement: {totals:?}"
        );
    }

    #[test]
    fn search_finds_zero_on_single_type() {
        let model = MarketModel::single_type(1.0, 1.0);
        let spec = SearchSpec {
            time_slices: 2,
            grid_nodes: 2,
            sim_steps: 8,
            sim_paths: 300,
            max_cycles: 20,
            random_restarts: 1,
            ..SearchSpec::default()
        };
        let outcome = search_w(&model, &[1.0], &[1.0], &spec, None).unwrap();
        assert!(
            outcome.best_value < 1e-3,
            "best value {}",
            outcome.best_value
        );
    }

    #[test]
    fn far_candidates_have_positive_floor() {
        let model = MarketModel::single_type(1.0, 1.0);
        let spec = SearchSpec {
            time_slices: 2,
            grid_nodes: 2,
            sim_steps: 8,
            sim_paths: 300,
            max_cycles: 10,
            random_restarts: 1,
            ..SearchSpec::default()
        };
        let outcome = search_w(&model, &[1.0], &[11.0], &spec, None).unwrap();
        // Y_T = 11 - ∫H with bounded Z: floor well above zero.
        assert!(
            outcome.restart_values.iter().all(|&v| v > 1.0),
            "restart values {:?}",
            outcome.restart_values
        );
    }

    #[test]
    fn duality_probe_classifies_in_and_out() {
        let model = MarketModel::canonical_two_type(0.25);
        let disc = Discretization::new(8, 1_000, 21, 5, 3).unwrap();
        let sol = solve_fbsde(&model, &disc, SolverKind::Grid).unwrap();
        let spec = SearchSpec {
            time_slices: 2,
            grid_nodes: 3,
            sim_steps: 8,
            sim_paths: 500,
            max_cycles: 4,
            random_restarts: 1,
            ..SearchSpec::default()
        };
        let inside = sol.y0.clone();
        let outside: Vec<f64> = sol.y0.iter().map(|v| v + 1.0).collect();
        let rows = duality_probe(&model, &sol, &[inside, outside], &spec, None).unwrap();
        assert!(rows[0].in_zero_level_set, "{:?}", rows[0]);
        assert!(!rows[1].in_zero_level_set, "{:?}", rows[1]);
    }
}
