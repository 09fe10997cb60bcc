//! Long-time behaviour: exponential decay of `|θ_j − θ*|²`.
//!
//! Runs the dynamics with the continuous-time consistent noise from
//! `θ_0 = 1` on `Φ(ξ, θ) = (ξ + θ)²/2`, locates the minimiser `θ*` of the
//! objective by quadrature, and fits a decay rate to the averaged curve.
//!
//! ```bash
//! cargo run --release --example longtime_decay
//! ```

use abram::dynamics::{longtime_experiment, AbramConfig, LongtimeConfig};
use abram::potentials::coupled_quadratic_1d;
use abram::{Ball, NoiseMode, Result};

fn main() -> Result<()> {
    let p = coupled_quadratic_1d();
    let outer = 600;
    let base = AbramConfig::new(1.0, Ball::l2(1.0, 1)?, 0.01, 500, 10, outer, NoiseMode::ContinuousConsistent, 11, vec![1.0])?;
    let cfg = LongtimeConfig {
        base,
        repeats: 4,
        checkpoints: (0..=outer).step_by(10).collect(),
        theta_range: (-1.0, 1.0),
    };
    let report = longtime_experiment(&cfg, &p, None)?;
    println!("theta* = {:.5}", report.theta_star);
    for (step, err) in report.checkpoints.iter().zip(&report.curve).step_by(6) {
        println!("step {step:>4}  |theta - theta*|^2 = {err:.3e}");
    }
    println!(
        "decay rate {:.3} (95% CI {:.3} to {:.3}), r2 {:.4}, plateau {:.2e}",
        report.eta_hat, report.eta_ci.0, report.eta_ci.1, report.r_squared, report.plateau
    );
    Ok(())
}
