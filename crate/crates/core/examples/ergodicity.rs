//! Convergence of the projected Langevin chain to the oracle density.
//!
//! Starts many frozen-parameter chains at the ball boundary and prints the
//! total-variation distance between their cross-chain histogram and the
//! quadrature density as the chains run.
//!
//! ```bash
//! cargo run --release --example ergodicity
//! ```

use abram::potentials::shifted_quadratic_1d;
use abram::sampler::{ergodicity_diagnostic, ChainInit, ErgodicityOptions, LangevinConfig};
use abram::{Ball, NoiseMode, Result};

fn main() -> Result<()> {
    let p = shifted_quadratic_1d(0.1);
    let ball = Ball::l2(0.4, 1)?;
    let steps = 2000;
    let cfg = LangevinConfig::new(1e-4, 10.0, ball, steps, NoiseMode::ContinuousConsistent, 5)?;
    let report = ergodicity_diagnostic(&[0.0], &p, &cfg, &ErgodicityOptions::new(4000, steps, ChainInit::Point(0.4)))?;
    for (step, tv) in report.checkpoints.iter().zip(&report.tv_curve).step_by(2) {
        println!("step {step:>5}  TV {tv:.4}");
    }
    println!(
        "pooled TV over the second half: {:.4} ({} samples, {} bins, target gamma {})",
        report.final_tv, report.pooled_samples, report.pooled_bins, report.target_gamma
    );
    Ok(())
}
