//! Robust training with the particle dynamics against a plain SGD baseline.
//!
//! Both models see the same synthetic blobs. The mini-batch dynamics trains
//! against a population of attack particles, one datum per particle, and
//! should keep more accuracy under PGD than the undefended model.
//!
//! ```bash
//! cargo run --release --example robust_training
//! ```

use abram::attacks::{evaluate, AttackConfig, AttackKind};
use abram::models::{make_blobs, mlp, Architecture};
use abram::training::{train, TrainAlgorithm, TrainConfig};
use abram::{Ball, NoiseMode, Result};

fn main() -> Result<()> {
    let dim = 196;
    let train_set = make_blobs(300, 3, dim, 0.1, 100)?;
    let test_set = make_blobs(100, 3, dim, 0.1, 200)?;
    let model = mlp(Architecture::new(vec![dim, 32, 3])?);
    let ball = Ball::linf(0.05, dim)?;
    let pgd = AttackConfig::new(AttackKind::Pgd, ball, 1);

    println!("{:<10} {:>8} {:>8} {:>8}", "algorithm", "train", "clean", "pgd");
    for algorithm in [TrainAlgorithm::Sgd, TrainAlgorithm::Minibatch] {
        let cfg = TrainConfig {
            algorithm,
            epochs: 5,
            batch: 64,
            lr: 0.1,
            gamma: 1.0,
            ball,
            xi_step: 10.0 * ball.radius(),
            inner_steps: 10,
            noise_mode: NoiseMode::AlgorithmOne,
            seed: 0,
        };
        let report = train(&model, &train_set, &cfg)?;
        println!(
            "{:<10} {:>8.3} {:>8.3} {:>8.3}",
            algorithm.name(),
            report.epoch_accuracy.last().copied().unwrap_or(f64::NAN),
            evaluate(&model, &report.theta, &test_set, None)?,
            evaluate(&model, &report.theta, &test_set, Some(&pgd))?
        );
    }
    Ok(())
}
