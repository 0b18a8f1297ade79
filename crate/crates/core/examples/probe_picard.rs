use kyleback::fbsde::{solve_fbsde, SolverKind};
use kyleback::model::Discretization;
use kyleback::MarketModel64;
use std::time::Instant;

fn main() {
    // Spec-scale canonical run.
    let model = MarketModel64::canonical_two_type(0.25);
    let disc = Discretization::new(64, 10_000, 201, 42, 3).unwrap();
    let t0 = Instant::now();
    match solve_fbsde(&model, &disc, SolverKind::Grid) {
        Ok(sol) => println!(
            "T=0.25 spec scale: converged in {} iters, {:.2?}, y0 = {:?}, last delta {:.3e}, clips {}",
            sol.log.deltas.len(),
            t0.elapsed(),
            sol.y0,
            sol.log.deltas.last().unwrap(),
            sol.clip_events
        ),
        Err(e) => println!("T=0.25 spec scale FAILED: {e}"),
    }

    // Horizon sweep at modest resolution.
    for t_h in [0.25, 0.5, 1.0, 2.0, 4.0, 8.0] {
        let model = MarketModel64::canonical_two_type(t_h);
        let disc = Discretization::new(32, 2_000, 101, 42, 3).unwrap();
        let t0 = Instant::now();
        match solve_fbsde(&model, &disc, SolverKind::Grid) {
            Ok(sol) => println!(
                "T={t_h}: converged {} iters ({:.2?}), y0[0] = {:.6}, ratios tail {:?}",
                sol.log.deltas.len(),
                t0.elapsed(),
                sol.y0[0],
                sol.log.deltas.iter().rev().take(3).collect::<Vec<_>>()
            ),
            Err(e) => println!("T={t_h}: DIVERGED ({:.2?}): {e:.60}", t0.elapsed()),
        }
    }
}
