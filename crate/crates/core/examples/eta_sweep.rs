//! Variance of the balanced estimator as the logging policy grows more
//! deterministic, for each augmentation strategy.
//!
//! cargo run --release --example eta_sweep

use mval::sweep::{run_sweep, SweepConfig};

fn main() -> mval::error::Result<()> {
    let cfg = SweepConfig::from_json(
        r#"{"mode":"eta_sweep","eta_grid":[0.0,1.0,2.0,4.0,8.0],"delta":0.4,
            "n_log":900,"n_aug":100,"trials":50,"repeats":20,"seed":2024}"#,
    )?;
    let report = run_sweep(&cfg)?;
    println!("{:>6}  {:<12} {:>12} {:>12}", "eta", "strategy", "variance", "stderr");
    for row in report.rows() {
        println!(
            "{:>6}  {:<12} {:>12.4e} {:>12.4e}",
            row.grid_value, row.strategy, row.variance, row.stderr
        );
    }
    Ok(())
}
