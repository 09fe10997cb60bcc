//! Attacks on a trained classifier.
//!
//! Trains a small MLP on synthetic Gaussian blobs with plain SGD, then
//! reports its accuracy on held-out blobs under no attack, FGSM, PGD and the
//! two Bayesian attacks (a single Langevin sample and the mean of the chain).
//!
//! ```bash
//! cargo run --release --example bayesian_attacks
//! ```

use abram::attacks::{evaluate, AttackConfig, AttackKind};
use abram::models::{make_blobs, mlp, Architecture};
use abram::training::{train, TrainAlgorithm, TrainConfig};
use abram::{Ball, NoiseMode, Result};

fn main() -> Result<()> {
    let dim = 64;
    let train_set = make_blobs(100, 3, dim, 0.1, 1)?;
    let test_set = make_blobs(50, 3, dim, 0.1, 2)?;
    let model = mlp(Architecture::new(vec![dim, 16, 3])?);
    let ball = Ball::linf(0.05, dim)?;
    let cfg = TrainConfig {
        algorithm: TrainAlgorithm::Sgd,
        epochs: 10,
        batch: 32,
        lr: 0.1,
        gamma: 1.0,
        ball,
        xi_step: 0.5,
        inner_steps: 1,
        noise_mode: NoiseMode::AlgorithmOne,
        seed: 0,
    };
    let theta = train(&model, &train_set, &cfg)?.theta;

    println!("{:<13} {:>9}", "attack", "accuracy");
    println!("{:<13} {:>9.3}", "none", evaluate(&model, &theta, &test_set, None)?);
    for kind in [AttackKind::Fgsm, AttackKind::Pgd, AttackKind::BayesSample, AttackKind::BayesMean] {
        let mut attack = AttackConfig::new(kind, ball, 9);
        attack.step = ball.radius();
        attack.steps = 10;
        println!("{:<13} {:>9.3}", kind.name(), evaluate(&model, &theta, &test_set, Some(&attack))?);
    }
    Ok(())
}
