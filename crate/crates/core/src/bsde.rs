//! Insider-side valuation for a fixed pricing rule.
//!
//! Three routes:
//!
//! - [`value_of_strategy`]: the value of a *given* strategy, computed under
//!   the reference measure with Girsanov reweighting (linear BSDE route);
//! - [`bsde_solve_grid`]: the *optimal* value `Y^{P,i}` via backward time
//!   stepping of `u_i(t, x)` on a simplex lattice, with the feedback
//!   `Z`-identity solved per node (N <= 3);
//! - [`bsde_solve_regress`]: least-squares Monte Carlo backward regression on
//!   simulated filter paths (any N).
//!
//! The grid scheme steps the value surface explicitly but splits each time
//! step into CFL-limited substeps, so the stated grid resolutions stay
//! stable. The driver uses `H` at the same-step `Ẑ`, which in best-response
//! mode is found by a damped fixed point per node (the semi-implicit scheme);
//! an explicit single-evaluation variant is available behind
//! [`GridOptions::semi_implicit`].

use ndarray::Array2;
use rayon::prelude::*;

use crate::basis::PolyBasis;
use crate::error::Error;
use crate::feedback::{FeedbackStrategy, PriceMap};
use crate::model::{Discretization, MarketModel};
use crate::scalar::Real;
use crate::simplex::{NodeKind, SimplexGrid};
use crate::simulate::PathBundle;
use crate::stats::McEstimate;
use crate::Result;

/// Value surfaces `u_i` with companion feedback surfaces `ζ_i`.
#[derive(Debug, Clone)]
pub struct ValueSurface<F> {
    pub times: Vec<F>,
    pub repr: SurfaceRepr<F>,
}

#[derive(Debug, Clone)]
pub enum SurfaceRepr<F> {
    /// Tables `u[step][type][node]`, `zeta[step][type][node]`.
    Grid {
        grid: SimplexGrid<F>,
        u: Vec<Vec<Vec<F>>>,
        zeta: Vec<Vec<Vec<F>>>,
    },
    /// Regression coefficients per step and type, plus initial-value
    /// estimates and cross-validation residual RMS per type.
    Basis {
        basis: PolyBasis,
        u_coef: Vec<Vec<Vec<F>>>,
        zeta_coef: Vec<Vec<Vec<F>>>,
        y0: Vec<McEstimate<F>>,
        cv_rms: Vec<F>,
    },
}

impl<F: Real> ValueSurface<F> {
    pub fn n_types(&self) -> usize {
        match &self.repr {
            SurfaceRepr::Grid { u, .. } => u[0].len(),
            SurfaceRepr::Basis { u_coef, .. } => u_coef[0].len(),
        }
    }

    pub fn num_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// `u_i` on time slice `k` at simplex point `x`.
    pub fn u(&self, i: usize, k: usize, x: &[F]) -> F {
        match &self.repr {
            SurfaceRepr::Grid { grid, u, .. } => grid.interp(&u[k][i], x),
            SurfaceRepr::Basis { basis, u_coef, .. } => basis.combine(&u_coef[k][i], x),
        }
    }

    /// `ζ_i` on time slice `k` at simplex point `x`.
    pub fn zeta(&self, i: usize, k: usize, x: &[F]) -> F {
        match &self.repr {
            SurfaceRepr::Grid { grid, zeta, .. } => grid.interp(&zeta[k][i], x),
            SurfaceRepr::Basis {
                basis, zeta_coef, ..
            } => basis.combine(&zeta_coef[k][i], x),
        }
    }

    /// Initial value of type `i` at the prior point.
    pub fn y0(&self, i: usize, prior: &[F]) -> F {
        match &self.repr {
            SurfaceRepr::Grid { .. } => self.u(i, 0, prior),
            SurfaceRepr::Basis { y0, .. } => y0[i].mean,
        }
    }

    /// Sup-norm distance between two surfaces of identical layout (Picard
    /// delta). Compares both `u` and `ζ` data.
    pub fn max_abs_diff(&self, other: &Self) -> F {
        let mut d = F::zero();
        match (&self.repr, &other.repr) {
            (
                SurfaceRepr::Grid { u: ua, zeta: za, .. },
                SurfaceRepr::Grid { u: ub, zeta: zb, .. },
            ) => {
                for (a, b) in ua.iter().flatten().flatten().zip(ub.iter().flatten().flatten()) {
                    d = d.max((*a - *b).abs());
                }
                for (a, b) in za.iter().flatten().flatten().zip(zb.iter().flatten().flatten()) {
                    d = d.max((*a - *b).abs());
                }
            }
            (
                SurfaceRepr::Basis {
                    u_coef: ua,
                    zeta_coef: za,
                    ..
                },
                SurfaceRepr::Basis {
                    u_coef: ub,
                    zeta_coef: zb,
                    ..
                },
            ) => {
                for (a, b) in ua.iter().flatten().flatten().zip(ub.iter().flatten().flatten()) {
                    d = d.max((*a - *b).abs());
                }
                for (a, b) in za.iter().flatten().flatten().zip(zb.iter().flatten().flatten()) {
                    d = d.max((*a - *b).abs());
                }
            }
            _ => panic!("cannot diff surfaces of different representation"),
        }
        d
    }

    /// CSV dump `t,x_1..x_N,u_1..u_N,zeta_1..zeta_N`. Basis surfaces are
    /// evaluated on a probe lattice.
    pub fn dump_csv<W: std::io::Write>(&self, out: &mut W) -> std::io::Result<()> {
        let n = self.n_types();
        write!(out, "t")?;
        for i in 1..=n {
            write!(out, ",x_{i}")?;
        }
        for i in 1..=n {
            write!(out, ",u_{i}")?;
        }
        for i in 1..=n {
            write!(out, ",zeta_{i}")?;
        }
        writeln!(out)?;
        let probe: Vec<Vec<F>> = match &self.repr {
            SurfaceRepr::Grid { grid, .. } => (0..grid.num_nodes())
                .map(|idx| grid.coords(idx).to_vec())
                .collect(),
            SurfaceRepr::Basis { .. } => {
                let grid = SimplexGrid::new(n.min(3), 9);
                (0..grid.num_nodes())
                    .map(|idx| grid.coords(idx).to_vec())
                    .collect()
            }
        };
        for k in 0..self.times.len() {
            for x in &probe {
                write!(out, "{:.11e}", self.times[k])?;
                for xi in x {
                    write!(out, ",{xi:.11e}")?;
                }
                for i in 0..n {
                    write!(out, ",{:.11e}", self.u(i, k, x))?;
                }
                for i in 0..n {
                    write!(out, ",{:.11e}", self.zeta(i, k, x))?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Strategy valuation (linear BSDE route, Monte Carlo under the reference
// measure).
// ---------------------------------------------------------------------------

/// `J(P; v, θ') = E[ M^{θ'}_T Σ_k ((v - P_k) θ'_k - f(θ'_k)) Δt_k ]` with the
/// Monte Carlo standard error. `prices` has `K+1` columns (left endpoints are
/// used), `thetas` has `K` columns.
pub fn value_of_strategy<F: Real>(
    model: &MarketModel<F>,
    v: F,
    prices: &Array2<F>,
    thetas: &Array2<F>,
    bundle: &PathBundle<F>,
) -> McEstimate<F> {
    let k_steps = bundle.num_steps();
    assert_eq!(thetas.ncols(), k_steps);
    assert!(prices.ncols() >= k_steps);
    let half = F::lit(0.5);
    let sample: Vec<F> = (0..bundle.num_paths())
        .into_par_iter()
        .map(|j| {
            let mut log_m = F::zero();
            let mut running = F::zero();
            for k in 0..k_steps {
                let th = thetas[(j, k)];
                let dt = bundle.dt(k);
                let db = bundle.increments[(j, k)];
                running += ((v - prices[(j, k)]) * th - model.hamiltonian.cost_unchecked(th)) * dt;
                log_m = log_m + th * db - half * th * th * dt;
            }
            log_m.exp() * running
        })
        .collect();
    McEstimate::from_sample(&sample)
}

// ---------------------------------------------------------------------------
// Grid solver.
// ---------------------------------------------------------------------------

/// How the filter dynamics entering the backward PDE are chosen.
pub enum GridDynamics<'a, F> {
    /// Self-consistent best response: `θ = ∂_z H(Ẑ)` solved per node by a
    /// damped fixed point.
    BestResponse,
    /// Dynamics frozen at a given feedback (used inside Picard iterations).
    Frozen(&'a FeedbackStrategy<F>),
}

/// Grid solver options.
pub struct GridOptions {
    /// Damping of the per-node fixed point.
    pub damping: f64,
    /// Fixed-point tolerance.
    pub fp_tol: f64,
    /// Fixed-point iteration cap.
    pub fp_cap: usize,
    /// Driver at the same-step implicit `Ẑ` (fixed point) when true;
    /// single-evaluation explicit variant when false.
    pub semi_implicit: bool,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            fp_tol: 1e-10,
            fp_cap: 200,
            semi_implicit: true,
        }
    }
}

/// Solve the Hamiltonian BSDE for a fixed pricing rule on the simplex grid
/// with self-consistent best-response dynamics: `Y^{P,i}_0 = sup_θ' J`.
pub fn bsde_solve_grid<F: Real>(
    model: &MarketModel<F>,
    price: &PriceMap<F>,
    disc: &Discretization<F>,
) -> Result<ValueSurface<F>> {
    bsde_backward_grid(
        model,
        price,
        disc,
        GridDynamics::BestResponse,
        &GridOptions::default(),
    )
}

/// Per-node directional structure: which free coordinate drives each
/// diffusion direction and the per-type gradients along it.
struct NodeDirs<F> {
    /// `(free coordinate index, gradient per type)`.
    dirs: Vec<(usize, Vec<F>)>,
}

/// Outcome of resolving the `Ẑ`-relation at one node.
struct NodeSolution<F> {
    z_hat: Vec<F>,
    xbar: F,
    /// `σ` per direction, aligned with `NodeDirs::dirs`.
    sigma: Vec<F>,
    /// `Z^i = Σ_d grad_d^i σ_d`.
    z: Vec<F>,
}

fn resolve_node<F: Real>(
    model: &MarketModel<F>,
    price: F,
    x: &[F],
    dirs: &NodeDirs<F>,
    zeta_init: &[F],
    dynamics: &GridDynamics<'_, F>,
    step: usize,
    opts: &GridOptions,
) -> Option<NodeSolution<F>> {
    let n = model.n_types();
    let ham = &model.hamiltonian;
    let compute = |theta: &[F]| {
        let xbar: F = theta.iter().zip(x.iter()).map(|(&t, &xi)| t * xi).sum();
        let sigma: Vec<F> = dirs
            .dirs
            .iter()
            .map(|&(c, _)| x[c] * (theta[c] - xbar))
            .collect();
        let z: Vec<F> = (0..n)
            .map(|i| {
                dirs.dirs
                    .iter()
                    .zip(sigma.iter())
                    .map(|((_, g), &s)| g[i] * s)
                    .sum()
            })
            .collect();
        (xbar, sigma, z)
    };

    match dynamics {
        GridDynamics::Frozen(feedback) => {
            let theta: Vec<F> = (0..n).map(|i| feedback.rate(i, step, x)).collect();
            let (xbar, sigma, z) = compute(&theta);
            let z_hat: Vec<F> = (0..n)
                .map(|i| model.values[i] - price + z[i])
                .collect();
            Some(NodeSolution {
                z_hat,
                xbar,
                sigma,
                z,
            })
        }
        GridDynamics::BestResponse => {
            let mut z_hat: Vec<F> = (0..n)
                .map(|i| model.values[i] - price + zeta_init[i])
                .collect();
            let omega = F::lit(opts.damping);
            let tol = F::lit(opts.fp_tol);
            let cap = if opts.semi_implicit { opts.fp_cap } else { 1 };
            for _ in 0..cap {
                let theta: Vec<F> = z_hat.iter().map(|&z| ham.eval(z).1).collect();
                let (_, _, z) = compute(&theta);
                let mut delta = F::zero();
                for i in 0..n {
                    let target = model.values[i] - price + z[i];
                    delta = delta.max((target - z_hat[i]).abs());
                    z_hat[i] = if opts.semi_implicit {
                        (F::one() - omega) * z_hat[i] + omega * target
                    } else {
                        target
                    };
                }
                if delta < tol || !opts.semi_implicit {
                    // Refresh derived quantities at the accepted z_hat.
                    let theta: Vec<F> = z_hat.iter().map(|&z| ham.eval(z).1).collect();
                    let (xbar, sigma, z) = compute(&theta);
                    return Some(NodeSolution {
                        z_hat,
                        xbar,
                        sigma,
                        z,
                    });
                }
            }
            None
        }
    }
}

/// Gradient structure of one node from the current value slice.
fn node_dirs<F: Real>(
    grid: &SimplexGrid<F>,
    u: &[Vec<F>],
    idx: usize,
    n: usize,
) -> NodeDirs<F> {
    let h = grid.h;
    let two_h = h + h;
    match grid.n_types {
        1 => NodeDirs { dirs: vec![] },
        2 => match grid.kind(idx) {
            NodeKind::Interior => {
                let g: Vec<F> = (0..n)
                    .map(|i| (u[i][idx + 1] - u[i][idx - 1]) / two_h)
                    .collect();
                NodeDirs {
                    dirs: vec![(0, g)],
                }
            }
            _ => NodeDirs { dirs: vec![] },
        },
        3 => {
            let (li, lj) = grid.lattice3(idx);
            match grid.kind(idx) {
                NodeKind::Interior => {
                    let e = grid.flat3(li + 1, lj);
                    let w = grid.flat3(li - 1, lj);
                    let nn = grid.flat3(li, lj + 1);
                    let s = grid.flat3(li, lj - 1);
                    let g1: Vec<F> = (0..n).map(|i| (u[i][e] - u[i][w]) / two_h).collect();
                    let g2: Vec<F> = (0..n).map(|i| (u[i][nn] - u[i][s]) / two_h).collect();
                    NodeDirs {
                        dirs: vec![(0, g1), (1, g2)],
                    }
                }
                NodeKind::Face(0) => {
                    // x1 = 0: dynamics move along x2.
                    let up = grid.flat3(0, lj + 1);
                    let dn = grid.flat3(0, lj - 1);
                    let g: Vec<F> = (0..n).map(|i| (u[i][up] - u[i][dn]) / two_h).collect();
                    NodeDirs {
                        dirs: vec![(1, g)],
                    }
                }
                NodeKind::Face(1) => {
                    // x2 = 0: dynamics move along x1.
                    let up = grid.flat3(li + 1, 0);
                    let dn = grid.flat3(li - 1, 0);
                    let g: Vec<F> = (0..n).map(|i| (u[i][up] - u[i][dn]) / two_h).collect();
                    NodeDirs {
                        dirs: vec![(0, g)],
                    }
                }
                NodeKind::Face(_) => {
                    // x3 = 0: the face direction is (x1, x2) -> (x1+h, x2-h),
                    // driven by σ_1 since σ_2 = -σ_1 there.
                    let up = grid.flat3(li + 1, lj - 1);
                    let dn = grid.flat3(li - 1, lj + 1);
                    let g: Vec<F> = (0..n).map(|i| (u[i][up] - u[i][dn]) / two_h).collect();
                    NodeDirs {
                        dirs: vec![(0, g)],
                    }
                }
                NodeKind::Vertex(_) => NodeDirs { dirs: vec![] },
            }
        }
        _ => unreachable!(),
    }
}

/// Second-order transport-diffusion contribution at a node (without the
/// driver), already multiplied by nothing: returns `L u_i` per type.
fn node_generator<F: Real>(
    grid: &SimplexGrid<F>,
    u: &[Vec<F>],
    idx: usize,
    n: usize,
    sol: &NodeSolution<F>,
    dirs: &NodeDirs<F>,
) -> Vec<F> {
    let h = grid.h;
    let h2 = h * h;
    let half = F::lit(0.5);
    match grid.n_types {
        1 => vec![F::zero(); n],
        2 => match grid.kind(idx) {
            NodeKind::Interior => {
                let sigma = sol.sigma[0];
                let b = -sigma * sol.xbar;
                (0..n)
                    .map(|i| {
                        let lap = (u[i][idx + 1] - u[i][idx] - u[i][idx] + u[i][idx - 1]) / h2;
                        b * dirs.dirs[0].1[i] + half * sigma * sigma * lap
                    })
                    .collect()
            }
            _ => vec![F::zero(); n],
        },
        3 => {
            let (li, lj) = grid.lattice3(idx);
            match grid.kind(idx) {
                NodeKind::Interior => {
                    let s1 = sol.sigma[0];
                    let s2 = sol.sigma[1];
                    let b1 = -s1 * sol.xbar;
                    let b2 = -s2 * sol.xbar;
                    let e = grid.flat3(li + 1, lj);
                    let w = grid.flat3(li - 1, lj);
                    let nn = grid.flat3(li, lj + 1);
                    let s = grid.flat3(li, lj - 1);
                    let c = idx;
                    // Cross stencil: central where the NE corner exists,
                    // backward-backward one-sided next to the hypotenuse.
                    let m = grid.interior_per_dim;
                    let cross_central = li + lj + 2 <= m + 1;
                    (0..n)
                        .map(|i| {
                            let u11 = (u[i][e] - u[i][c] - u[i][c] + u[i][w]) / h2;
                            let u22 = (u[i][nn] - u[i][c] - u[i][c] + u[i][s]) / h2;
                            let u12 = if cross_central {
                                let ne = grid.flat3(li + 1, lj + 1);
                                let nw = grid.flat3(li - 1, lj + 1);
                                let se = grid.flat3(li + 1, lj - 1);
                                let sw = grid.flat3(li - 1, lj - 1);
                                (u[i][ne] - u[i][nw] - u[i][se] + u[i][sw])
                                    / (F::lit(4.0) * h2)
                            } else {
                                let sw = grid.flat3(li - 1, lj - 1);
                                (u[i][c] - u[i][w] - u[i][s] + u[i][sw]) / h2
                            };
                            b1 * dirs.dirs[0].1[i]
                                + b2 * dirs.dirs[1].1[i]
                                + half * (s1 * s1 * u11
                                    + (s1 + s1) * s2 * u12
                                    + s2 * s2 * u22)
                        })
                        .collect()
                }
                NodeKind::Face(f) => {
                    let sigma = sol.sigma[0];
                    let b = -sigma * sol.xbar;
                    let (up, dn) = match f {
                        0 => (grid.flat3(0, lj + 1), grid.flat3(0, lj - 1)),
                        1 => (grid.flat3(li + 1, 0), grid.flat3(li - 1, 0)),
                        _ => (grid.flat3(li + 1, lj - 1), grid.flat3(li - 1, lj + 1)),
                    };
                    (0..n)
                        .map(|i| {
                            let lap = (u[i][up] - u[i][idx] - u[i][idx] + u[i][dn]) / h2;
                            b * dirs.dirs[0].1[i] + half * sigma * sigma * lap
                        })
                        .collect()
                }
                NodeKind::Vertex(_) => vec![F::zero(); n],
            }
        }
        _ => unreachable!(),
    }
}

/// Shared backward engine on the simplex grid.
pub fn bsde_backward_grid<F: Real>(
    model: &MarketModel<F>,
    price: &PriceMap<F>,
    disc: &Discretization<F>,
    dynamics: GridDynamics<'_, F>,
    opts: &GridOptions,
) -> Result<ValueSurface<F>> {
    let n = model.n_types();
    if n > 3 {
        return Err(Error::GridUnsupported(n));
    }
    let grid = SimplexGrid::<F>::new(n, if n == 1 { 1 } else { disc.simplex_grid });
    let nodes = grid.num_nodes();
    let k_steps = disc.num_steps;
    let horizon = model.horizon;
    let dt = disc.dt(horizon);
    let times: Vec<F> = (0..=k_steps)
        .map(|k| dt * F::from_usize(k).unwrap())
        .collect();

    // CFL substepping: |σ| <= span/4 per coordinate, span = 2 * bound.
    let span = model.action_bound() * F::lit(2.0);
    let sigma_max = span / F::lit(4.0);
    let b_max = sigma_max * model.action_bound();
    let substeps = if n == 1 {
        1
    } else {
        let dim_factor = if n == 2 { F::one() } else { F::lit(4.0) };
        let h = grid.h;
        let rate = dim_factor * sigma_max * sigma_max / (h * h) + b_max / h;
        (dt * rate * F::lit(1.25)).ceil().to_usize().unwrap_or(1).max(1)
    };

    let mut u_slices: Vec<Vec<Vec<F>>> = vec![vec![vec![F::zero(); nodes]; n]; k_steps + 1];
    let mut zeta_slices: Vec<Vec<Vec<F>>> = vec![vec![vec![F::zero(); nodes]; n]; k_steps + 1];

    let delta = dt / F::from_usize(substeps).unwrap();
    let mut current: Vec<Vec<F>> = u_slices[k_steps].clone();
    // ζ of the later slice, used to initialize the per-node fixed points.
    let mut zeta_prev: Vec<Vec<F>> = vec![vec![F::zero(); nodes]; n];

    for k in (0..k_steps).rev() {
        for _ in 0..substeps {
            let updated: Vec<Result<(Vec<F>, Vec<F>)>> = (0..nodes)
                .into_par_iter()
                .map(|idx| {
                    let x = grid.coords(idx);
                    let p = price.eval(k, x);
                    let dirs = node_dirs(&grid, &current, idx, n);
                    let zeta_init: Vec<F> = (0..n).map(|i| zeta_prev[i][idx]).collect();
                    let sol = resolve_node(
                        model, p, x, &dirs, &zeta_init, &dynamics, k, opts,
                    )
                    .ok_or_else(|| Error::FixedPoint {
                        t: times[k].as_f64(),
                        node: x.iter().map(|v| v.as_f64()).collect(),
                    })?;
                    let lu = node_generator(&grid, &current, idx, n, &sol, &dirs);
                    let mut unew = Vec::with_capacity(n);
                    for i in 0..n {
                        let h_drv = model.hamiltonian.eval(sol.z_hat[i]).0;
                        unew.push(current[i][idx] + delta * (lu[i] + h_drv));
                    }
                    Ok((unew, sol.z.clone()))
                })
                .collect();
            let mut next = vec![vec![F::zero(); nodes]; n];
            for (idx, item) in updated.into_iter().enumerate() {
                let (unew, znew) = item?;
                for i in 0..n {
                    next[i][idx] = unew[i];
                    zeta_prev[i][idx] = znew[i];
                }
            }
            current = next;
        }
        // Reconstruct ζ on the finished slice from its own gradients.
        let zeta_now: Vec<Result<Vec<F>>> = (0..nodes)
            .into_par_iter()
            .map(|idx| {
                let x = grid.coords(idx);
                let p = price.eval(k, x);
                let dirs = node_dirs(&grid, &current, idx, n);
                let zeta_init: Vec<F> = (0..n).map(|i| zeta_prev[i][idx]).collect();
                let sol = resolve_node(model, p, x, &dirs, &zeta_init, &dynamics, k, opts)
                    .ok_or_else(|| Error::FixedPoint {
                        t: times[k].as_f64(),
                        node: x.iter().map(|v| v.as_f64()).collect(),
                    })?;
                Ok(sol.z)
            })
            .collect();
        for (idx, item) in zeta_now.into_iter().enumerate() {
            let z = item?;
            for i in 0..n {
                zeta_slices[k][i][idx] = z[i];
                zeta_prev[i][idx] = z[i];
            }
        }
        u_slices[k] = current.clone();
    }

    Ok(ValueSurface {
        times,
        repr: SurfaceRepr::Grid {
            grid,
            u: u_slices,
            zeta: zeta_slices,
        },
    })
}

// ---------------------------------------------------------------------------
// Regression solver.
// ---------------------------------------------------------------------------

/// Output of the least-squares backward solver: the coefficient surface plus
/// pathwise values.
pub struct RegressSolution<F> {
    pub surface: ValueSurface<F>,
    /// `(paths, K+1, N)` pathwise backward values.
    pub y_paths: ndarray::Array3<F>,
    /// `(paths, K, N)` pathwise Z estimates.
    pub z_paths: ndarray::Array3<F>,
}

/// Least-squares regression with degree-reduction fallback. Returns the
/// coefficients padded to the requested basis size (higher-degree terms
/// zeroed when the fit fell back).
fn regress_fallback<F: Real>(
    basis: &PolyBasis,
    design_full: &[F],
    n_rows: usize,
    y: &[F],
    states: &Array2<F>,
    warn_ctx: &str,
) -> Result<Vec<F>> {
    match crate::stats::ols(design_full, basis.len(), y) {
        Ok(fit) => Ok(fit.coef),
        Err(_) => {
            let mut reduced = basis.reduced();
            while let Some(b) = reduced {
                let mut design = Vec::with_capacity(n_rows * b.len());
                for r in 0..n_rows {
                    let x: Vec<F> = states.row(r).to_vec();
                    b.eval_into(&x, &mut design);
                }
                if let Ok(fit) = crate::stats::ols(&design, b.len(), y) {
                    log::warn!(
                        "{warn_ctx}: rank-deficient design, reduced basis degree to {}",
                        b.degree
                    );
                    let mut coef = vec![F::zero(); basis.len()];
                    for (slot, exps) in basis.exponents.iter().enumerate() {
                        if let Some(pos) = b.exponents.iter().position(|e| e == exps) {
                            coef[slot] = fit.coef[pos];
                        }
                    }
                    return Ok(coef);
                }
                reduced = b.reduced();
            }
            // Constant fallback: plain mean.
            let mean = McEstimate::from_sample(y).mean;
            let mut coef = vec![F::zero(); basis.len()];
            coef[0] = mean;
            Ok(coef)
        }
    }
}

/// Backward least-squares Monte Carlo solve of the Hamiltonian BSDE along
/// supplied paths: `Y_k = Ê[Y_{k+1}|X_k] + Δt H(Ẑ_k)`,
/// `Z_k = Ê[Y_{k+1} ΔB_k | X_k] / Δt`.
///
/// `prices` is `(paths, K+1)`; `states` is `(paths, K+1, N)` and provides the
/// regressors. Step 0 regresses on the constant alone since all paths share
/// the initial state.
pub fn bsde_solve_regress<F: Real>(
    model: &MarketModel<F>,
    prices: &Array2<F>,
    states: &ndarray::Array3<F>,
    bundle: &PathBundle<F>,
    basis_degree: usize,
) -> Result<RegressSolution<F>> {
    let n = model.n_types();
    let paths = bundle.num_paths();
    let k_steps = bundle.num_steps();
    assert_eq!(states.shape(), &[paths, k_steps + 1, n]);
    let basis = PolyBasis::new(n, basis_degree);
    let nb = basis.len();

    let mut y_paths = ndarray::Array3::<F>::zeros((paths, k_steps + 1, n));
    let mut z_paths = ndarray::Array3::<F>::zeros((paths, k_steps, n));
    let mut u_coef = vec![vec![vec![F::zero(); nb]; n]; k_steps + 1];
    let mut zeta_coef = vec![vec![vec![F::zero(); nb]; n]; k_steps]; // terminal slice omitted
    let mut cv_sum = vec![F::zero(); n];
    let mut cv_count = 0usize;

    for k in (0..k_steps).rev() {
        let dt = bundle.dt(k);
        // Design matrix at slice k.
        let state_rows: Array2<F> = {
            let mut m = Array2::zeros((paths, n));
            for j in 0..paths {
                for i in 0..n {
                    m[(j, i)] = states[(j, k, i)];
                }
            }
            m
        };
        let mut design = Vec::with_capacity(paths * nb);
        for j in 0..paths {
            let x: Vec<F> = state_rows.row(j).to_vec();
            basis.eval_into(&x, &mut design);
        }

        for i in 0..n {
            let y_next: Vec<F> = (0..paths).map(|j| y_paths[(j, k + 1, i)]).collect();
            let (ce_coef, z_coef) = if k == 0 {
                // All paths share X_0; conditional expectations are plain means.
                let mut ce = vec![F::zero(); nb];
                ce[0] = McEstimate::from_sample(&y_next).mean;
                let zb: Vec<F> = (0..paths)
                    .map(|j| y_next[j] * bundle.increments[(j, 0)] / dt)
                    .collect();
                let mut zc = vec![F::zero(); nb];
                zc[0] = McEstimate::from_sample(&zb).mean;
                (ce, zc)
            } else {
                let ce = regress_fallback(
                    &basis,
                    &design,
                    paths,
                    &y_next,
                    &state_rows,
                    &format!("bsde regression (type {i}, step {k})"),
                )?;
                let zy: Vec<F> = (0..paths)
                    .map(|j| y_next[j] * bundle.increments[(j, k)] / dt)
                    .collect();
                let zc = regress_fallback(
                    &basis,
                    &design,
                    paths,
                    &zy,
                    &state_rows,
                    &format!("bsde Z regression (type {i}, step {k})"),
                )?;
                (ce, zc)
            };

            // Cross-validation residual of the conditional-expectation fit:
            // fit on even paths, residual RMS on odd paths.
            if k > 0 && paths >= 64 {
                let mut dsn = Vec::new();
                let mut ys = Vec::new();
                for j in (0..paths).step_by(2) {
                    let x: Vec<F> = state_rows.row(j).to_vec();
                    basis.eval_into(&x, &mut dsn);
                    ys.push(y_next[j]);
                }
                if let Ok(fit) = crate::stats::ols(&dsn, nb, &ys) {
                    let mut ss = F::zero();
                    let mut count = 0usize;
                    for j in (1..paths).step_by(2) {
                        let x: Vec<F> = state_rows.row(j).to_vec();
                        let pred = basis.combine(&fit.coef, &x);
                        let e = y_next[j] - pred;
                        ss += e * e;
                        count += 1;
                    }
                    cv_sum[i] += (ss / F::from_usize(count).unwrap()).sqrt();
                    if i == 0 {
                        cv_count += 1;
                    }
                }
            }

            for j in 0..paths {
                let x: Vec<F> = state_rows.row(j).to_vec();
                let phi = basis.eval(&x);
                let ce: F = phi.iter().zip(&ce_coef).map(|(&a, &b)| a * b).sum();
                let z: F = phi.iter().zip(&z_coef).map(|(&a, &b)| a * b).sum();
                let z_hat = model.values[i] - prices[(j, k)] + z;
                let h = model.hamiltonian.eval(z_hat).0;
                y_paths[(j, k, i)] = ce + dt * h;
                z_paths[(j, k, i)] = z;
            }
            zeta_coef[k][i] = z_coef;
            // Surface coefficients: fit the realized Y_k on the same design.
            let yk: Vec<F> = (0..paths).map(|j| y_paths[(j, k, i)]).collect();
            u_coef[k][i] = if k == 0 {
                let mut c = vec![F::zero(); nb];
                c[0] = McEstimate::from_sample(&yk).mean;
                c
            } else {
                regress_fallback(
                    &basis,
                    &design,
                    paths,
                    &yk,
                    &state_rows,
                    &format!("bsde value-surface regression (type {i}, step {k})"),
                )?
            };
        }
    }

    let y0: Vec<McEstimate<F>> = (0..n)
        .map(|i| {
            let sample: Vec<F> = (0..paths).map(|j| y_paths[(j, 0, i)]).collect();
            McEstimate::from_sample(&sample)
        })
        .collect();
    let cv_rms: Vec<F> = cv_sum
        .iter()
        .map(|&s| {
            if cv_count > 0 {
                s / F::from_usize(cv_count).unwrap()
            } else {
                F::zero()
            }
        })
        .collect();

    let dt0 = bundle.dt(0);
    let times: Vec<F> = (0..=k_steps)
        .map(|k| dt0 * F::from_usize(k).unwrap())
        .collect();
    let mut zeta_full = zeta_coef;
    zeta_full.push(vec![vec![F::zero(); nb]; n]);
    Ok(RegressSolution {
        surface: ValueSurface {
            times,
            repr: SurfaceRepr::Basis {
                basis,
                u_coef,
                zeta_coef: zeta_full,
                y0,
                cv_rms,
            },
        },
        y_paths,
        z_paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feedback::Strategy;
    use crate::model::Discretization;
    use crate::rng::SubstreamRng;
    use crate::simulate::{filter_exact, gen_paths};
    use approx::assert_abs_diff_eq;

    fn canonical(horizon: f64) -> MarketModel<f64> {
        MarketModel::canonical_two_type(horizon)
    }

    #[test]
    fn grid_price_pinned_to_own_value() {
        let model = canonical(1.0);
        let disc = Discretization::new(32, 16, 41, 1, 3).unwrap();
        let price = PriceMap::Const(1.0); // pins type 0 (v = 1)
        let surf = bsde_solve_grid(&model, &price, &disc).unwrap();
        // u_0(t, x) = (T - t) H(0) = T - t; zeta_0 = 0.
        for &x1 in &[0.1, 0.5, 0.9] {
            let x = [x1, 1.0 - x1];
            assert_abs_diff_eq!(surf.u(0, 0, &x), 1.0, epsilon = 1e-9);
            assert_abs_diff_eq!(surf.u(0, 16, &x), 0.5, epsilon = 1e-9);
            assert_abs_diff_eq!(surf.zeta(0, 0, &x), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn grid_constant_price_closed_form() {
        let model = canonical(1.0);
        let disc = Discretization::new(32, 16, 41, 1, 3).unwrap();
        let surf = bsde_solve_grid(&model, &PriceMap::Const(0.0), &disc).unwrap();
        let sqrt2 = std::f64::consts::SQRT_2;
        for &x1 in &[0.2, 0.5, 0.8] {
            let x = [x1, 1.0 - x1];
            assert_abs_diff_eq!(surf.u(0, 0, &x), sqrt2, epsilon = 1e-9);
            assert_abs_diff_eq!(surf.u(1, 0, &x), sqrt2, epsilon = 1e-9);
        }
        assert_abs_diff_eq!(surf.y0(0, &model.prior), sqrt2, epsilon = 1e-9);
    }

    #[test]
    fn grid_single_type_degenerate() {
        let model = MarketModel::single_type(1.0, 1.0);
        let disc = Discretization::new(16, 4, 11, 3, 2).unwrap();
        let surf = bsde_solve_grid(&model, &PriceMap::Affine(vec![1.0]), &disc).unwrap();
        assert_abs_diff_eq!(surf.u(0, 0, &[1.0]), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(surf.u(0, 8, &[1.0]), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn grid_three_types_constant_price() {
        let model = MarketModel::new(
            vec![-1.0, 0.0, 1.0],
            vec![1.0 / 3.0; 3],
            0.5,
            crate::hamiltonian::HamiltonianSpec::sqrt_closed_form(),
        )
        .unwrap();
        let disc = Discretization::new(8, 4, 13, 3, 2).unwrap();
        let surf = bsde_solve_grid(&model, &PriceMap::Const(0.0), &disc).unwrap();
        for (i, &v) in model.values.iter().enumerate() {
            let expect = 0.5 * (1.0 + v * v as f64).sqrt();
            let x = [0.3, 0.4, 0.3];
            assert_abs_diff_eq!(surf.u(i, 0, &x), expect, epsilon = 1e-8);
        }
    }

    #[test]
    fn value_of_zero_strategy_under_sqrt_cost() {
        // J = -T f(0) = T exactly: weight 1, deterministic integrand.
        let model = canonical(1.0);
        let disc = Discretization::new(16, 256, 11, 9, 2).unwrap();
        let bundle = gen_paths(&model, &disc);
        let prices = Array2::zeros((256, 17));
        let thetas = Array2::zeros((256, 16));
        let est = value_of_strategy(&model, 1.0, &prices, &thetas, &bundle);
        assert_abs_diff_eq!(est.mean, 1.0, epsilon = 1e-12);
        assert!(est.se < 1e-12);
    }

    #[test]
    fn value_of_constant_strategy_matches_closed_form() {
        // v=1, P=0, θ' = dH(1) = 1/sqrt2: J = T sqrt2 within 3 SE.
        let model = canonical(1.0);
        let disc = Discretization::new(32, 20_000, 11, 17, 2).unwrap();
        let bundle = gen_paths(&model, &disc);
        let prices = Array2::zeros((disc.num_paths, 33));
        let theta = 1.0 / std::f64::consts::SQRT_2;
        let thetas = Array2::from_elem((disc.num_paths, 32), theta);
        let est = value_of_strategy(&model, 1.0, &prices, &thetas, &bundle);
        let expect = std::f64::consts::SQRT_2;
        assert!(
            (est.mean - expect).abs() < 3.0 * est.se,
            "J = {} +- {}, want {}",
            est.mean,
            est.se,
            expect
        );
    }

    #[test]
    fn mean_price_strategy_value() {
        // P ≡ 0, θ' ≡ 0.5, zero-cost equivalent: with sqrt cost subtracted
        // explicitly: J = T((v - 0)0.5 - f(0.5)).
        let model = canonical(1.0);
        let disc = Discretization::new(16, 40_000, 11, 23, 2).unwrap();
        let bundle = gen_paths(&model, &disc);
        let prices = Array2::zeros((disc.num_paths, 17));
        let thetas = Array2::from_elem((disc.num_paths, 16), 0.5);
        let est = value_of_strategy(&model, 1.0, &prices, &thetas, &bundle);
        let expect = 0.5 - model.hamiltonian.cost_unchecked(0.5);
        assert!(
            (est.mean - expect).abs() < 3.0 * est.se,
            "J = {} +- {}, want {expect}",
            est.mean,
            est.se
        );
    }

    fn regress_on_constant_price(
        model: &MarketModel<f64>,
        disc: &Discretization<f64>,
        price: f64,
    ) -> RegressSolution<f64> {
        let bundle = gen_paths(model, disc);
        // Regressor paths: filter under the best-response-ish constant
        // strategy θ_i = dH(v_i - price).
        let rates: Vec<f64> = model
            .values
            .iter()
            .map(|&v| model.hamiltonian.eval(v - price).1)
            .collect();
        let filter = filter_exact(model, &Strategy::Constant(rates), &bundle).unwrap();
        let prices = Array2::from_elem((bundle.num_paths(), bundle.num_steps() + 1), price);
        bsde_solve_regress(model, &prices, &filter.x, &bundle, disc.basis_degree).unwrap()
    }

    #[test]
    fn regress_reproduces_constant_price_closed_form() {
        let model = canonical(1.0);
        let disc = Discretization::new(64, 20_000, 11, 31, 3).unwrap();
        let sol = regress_on_constant_price(&model, &disc, 0.0);
        let sqrt2 = std::f64::consts::SQRT_2;
        for i in 0..2 {
            let y0 = sol.surface.y0(i, &model.prior);
            assert!(
                (y0 - sqrt2).abs() / sqrt2 < 0.02,
                "type {i}: y0 = {y0}, want {sqrt2}"
            );
        }
    }

    #[test]
    fn regress_single_type() {
        let model = MarketModel::single_type(1.0, 1.0);
        let disc = Discretization::new(32, 4_000, 11, 5, 2).unwrap();
        let sol = regress_on_constant_price(&model, &disc, 1.0);
        let y0 = sol.surface.y0(0, &model.prior);
        assert!((y0 - 1.0).abs() < 0.02, "y0 = {y0}");
    }

    #[test]
    fn hamiltonian_value_dominates_sampled_strategies() {
        // Comparison principle: Y^{P,i}_0 >= J(P; v_i, θ') - 3 SE for random
        // bounded strategies, against the grid solve at constant price.
        let model = canonical(1.0);
        let disc = Discretization::new(16, 4_000, 41, 29, 3).unwrap();
        let price = 0.3;
        let surf = bsde_solve_grid(&model, &PriceMap::Const(price), &disc).unwrap();
        let bundle = gen_paths(&model, &disc);
        let prices = Array2::from_elem((disc.num_paths, 17), price);
        let mut rng = SubstreamRng::new(555, 0);
        for trial in 0..20 {
            let i = trial % 2;
            // Random open-loop strategy, constant over two blocks.
            let a = rng.uniform_in(-1.0, 1.0);
            let b = rng.uniform_in(-1.0, 1.0);
            let mut row = vec![a; 8];
            row.extend(vec![b; 8]);
            let thetas = Array2::from_shape_fn((disc.num_paths, 16), |(_, k)| row[k]);
            let est = value_of_strategy(&model, model.values[i], &prices, &thetas, &bundle);
            let y0 = surf.y0(i, &model.prior);
            assert!(
                y0 >= est.mean - 3.0 * est.se - 1e-9,
                "comparison violated: y0 = {y0}, J = {} +- {}",
                est.mean,
                est.se
            );
        }
    }

    #[test]
    fn grid_and_regress_agree_on_constant_price() {
        let model = canonical(1.0);
        let disc = Discretization::new(32, 20_000, 41, 37, 3).unwrap();
        let surf = bsde_solve_grid(&model, &PriceMap::Const(0.25), &disc).unwrap();
        let sol = regress_on_constant_price(&model, &disc, 0.25);
        for i in 0..2 {
            let a = surf.y0(i, &model.prior);
            let b = sol.surface.y0(i, &model.prior);
            assert!(
                (a - b).abs() / a.abs() < 0.02,
                "type {i}: grid {a} vs regress {b}"
            );
        }
    }
}
