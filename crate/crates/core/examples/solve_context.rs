//! Per-context water-filling across mixing weights, checked against the
//! exhaustive grid oracle.
//!
//! cargo run --release --example solve_context

use mval::solver::{mval_grid_oracle, mval_objective, minvar_ips_policy};
use mval::{mval_solve_context, ContextWeights};

fn fmt(row: &[f64]) -> String {
    row.iter().map(|p| format!("{p:.4}")).collect::<Vec<_>>().join(" ")
}

fn main() -> mval::Result<()> {
    let target = [0.05, 0.15, 0.5, 0.3];
    let m = [0.9, 0.4, 0.2, 0.6];
    let old = [0.6, 0.3, 0.08, 0.02];
    let w = ContextWeights::from_target(0, &target, &m)?;

    println!("logged      {}", fmt(&old));
    println!("target      {}", fmt(&target));
    println!("alpha=1     {}", fmt(&minvar_ips_policy(&target, &m)?));
    for alpha in [0.01, 0.05, 0.1, 0.3, 0.6, 1.0] {
        let (pi, diag) = mval_solve_context(&w, &old, alpha)?;
        let grid = mval_grid_oracle(&w, &old, alpha, 1000)?;
        println!(
            "alpha={alpha:<5} {}   objective {:.5}  grid {:.5}  active {}",
            fmt(&pi),
            mval_objective(&w.c, &old, alpha, &pi),
            mval_objective(&w.c, &old, alpha, &grid),
            diag.active_set.len()
        );
    }
    Ok(())
}
