//! Propagation of chaos: an `N`-particle system against a large reference.
//!
//! Each small system reuses the start points and noise of the first `N`
//! reference particles. The squared gap `|θ^N − θ^ref|² + W₂²` shrinks as
//! `N` grows and the log-log slope is fitted with a bootstrap interval.
//! The defaults are small so the example finishes in seconds; the `chaos`
//! subcommand of the binary runs the full-size experiment.
//!
//! ```bash
//! cargo run --release --example propagation_of_chaos
//! ```

use abram::dynamics::{chaos_experiment, AbramConfig, ChaosConfig, SingleDatum};
use abram::potentials::coupled_quadratic_1d;
use abram::{Ball, NoiseMode, Result};

fn main() -> Result<()> {
    let p = coupled_quadratic_1d();
    let base = AbramConfig::new(10.0, Ball::l2(1.0, 1)?, 0.01, 1, 10, 100, NoiseMode::AlgorithmOne, 3, vec![0.0])?;
    let cfg = ChaosConfig {
        base,
        n_list: vec![4, 8, 16, 32, 64],
        n_ref: 512,
        repeats: 40,
    };
    let report = chaos_experiment(&cfg, &SingleDatum(&p))?;
    println!("{:>5} {:>14} {:>12} {:>12}", "N", "theta gap^2", "W2^2", "total");
    for row in &report.rows {
        println!(
            "{:>5} {:>14.4e} {:>12.4e} {:>12.4e}",
            row.n, row.mean_theta_gap_sq, row.mean_w2_sq, row.mean_total
        );
    }
    println!(
        "slope {:.3} (95% CI {:.3} to {:.3}), r2 {:.3}",
        report.slope, report.slope_ci.0, report.slope_ci.1, report.r_squared
    );
    Ok(())
}
