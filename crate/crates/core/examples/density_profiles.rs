//! Quadrature ground truth for one-dimensional attack densities.
//!
//! The first table uses `Φ(ξ) = (ξ − c)²/2` and shows the density
//! concentrating on the boundary point farthest from `c` as `γ` grows. The
//! second uses `Φ(ξ, θ) = (ξ + θ)²/2` and prints the objective `F(θ)` with
//! its exact gradient next to a central difference.
//!
//! ```bash
//! cargo run --release --example density_profiles
//! ```

use abram::oracle::{objective, AdversarialDensity, DEFAULT_NODES};
use abram::potentials::{coupled_quadratic_1d, shifted_quadratic_1d};
use abram::{Ball, Result};

fn main() -> Result<()> {
    let p = shifted_quadratic_1d(0.1);
    println!("{:>8} {:>6} {:>9} {:>9} {:>12}", "gamma", "eps", "mode", "mean", "mass@mode");
    for eps in [0.025, 0.1, 0.4] {
        let ball = Ball::l2(eps, 1)?;
        for gamma in [0.1, 10.0, 1000.0] {
            let d = AdversarialDensity::new(&p, gamma, &ball, &[0.0], DEFAULT_NODES)?;
            let w = 0.02 * 2.0 * eps;
            let near = d.mass_between(d.mode() - w, d.mode() + w);
            println!("{gamma:>8} {eps:>6} {:>9.4} {:>9.4} {:>12.5}", d.mode(), d.mean(), near);
        }
    }

    let q = coupled_quadratic_1d();
    let ball = Ball::l2(1.0, 1)?;
    let gamma = 10.0;
    let h = 1e-4;
    println!("\n{:>6} {:>10} {:>12} {:>12}", "theta", "F", "dF/dtheta", "central diff");
    for theta in [-0.5, -0.1, 0.0, 0.1, 0.5] {
        let d = AdversarialDensity::new(&q, gamma, &ball, &[theta], DEFAULT_NODES)?;
        let fd = (objective(&q, gamma, &ball, &[theta + h], DEFAULT_NODES)? - objective(&q, gamma, &ball, &[theta - h], DEFAULT_NODES)?) / (2.0 * h);
        println!("{theta:>6} {:>10.5} {:>12.6} {:>12.6}", d.objective(), d.objective_grad()[0], fd);
    }
    Ok(())
}
