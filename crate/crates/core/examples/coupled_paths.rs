//! One run of the coupled dynamics on `Φ(ξ, θ) = (ξ + θ)²/2`.
//!
//! The minimiser of the objective is `θ = 0`. With few particles the
//! parameter keeps fluctuating; with many it settles. The example prints the
//! final parameter and the variance of its path over the last quarter for a
//! few particle counts.
//!
//! ```bash
//! cargo run --release --example coupled_paths
//! ```

use abram::dynamics::{run_abram, AbramConfig, SingleDatum};
use abram::potentials::coupled_quadratic_1d;
use abram::{stats, Ball, NoiseMode, Result};

fn main() -> Result<()> {
    let p = coupled_quadratic_1d();
    let ball = Ball::l2(1.0, 1)?;
    let outer = 1000;
    println!("{:>7} {:>10} {:>14} {:>16}", "gamma", "particles", "final theta", "tail variance");
    for (gamma, particles) in [(10.0, 3), (10.0, 50), (0.1, 3)] {
        let cfg = AbramConfig::new(gamma, ball, 0.01, particles, 10, outer, NoiseMode::AlgorithmOne, 7, vec![0.0])?;
        let run = run_abram(&cfg, &SingleDatum(&p))?;
        let tail: Vec<f64> = run.theta_path[3 * outer / 4..].iter().map(|t| t[0]).collect();
        println!("{gamma:>7} {particles:>10} {:>14.6} {:>16.3e}", run.theta[0], stats::variance(&tail));
    }
    Ok(())
}
