//! Adversarial perturbations and robustness evaluation.
//!
//! The Bayesian attacks run the projected Langevin chain on the loss of the
//! attacked datum (with its true label) from a uniform start. The sample
//! attack returns the final state; the mean attack returns the average of
//! states `1..=J`. FGSM and PGD are the usual signed-gradient baselines.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::geometry::Ball;
use crate::models::{Classifier, Dataset};
use crate::potentials::{loss_potential, Potential};
use crate::rng;
use crate::sampler::{run_chain_len, LangevinConfig, NoiseMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    BayesSample,
    BayesMean,
    Fgsm,
    Pgd,
}

impl AttackKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "bayessample" | "sample" => Ok(AttackKind::BayesSample),
            "bayesmean" | "mean" => Ok(AttackKind::BayesMean),
            "fgsm" => Ok(AttackKind::Fgsm),
            "pgd" => Ok(AttackKind::Pgd),
            other => Err(Error::Config(format!("unknown attack '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::BayesSample => "bayes-sample",
            AttackKind::BayesMean => "bayes-mean",
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub gamma: f64,
    pub ball: Ball,
    /// Langevin step of the Bayesian attacks.
    pub step: f64,
    /// Chain length `J` of the Bayesian attacks.
    pub steps: usize,
    pub noise_mode: NoiseMode,
    pub seed: u64,
    pub pgd_steps: usize,
    /// PGD step size; `None` uses `2.5·ε / pgd_steps`.
    pub pgd_step_size: Option<f64>,
    /// Test hook: start PGD at zero instead of a uniform draw.
    pub pgd_zero_init: bool,
    /// Test hook: drop the Gaussian increment of the Bayesian chains.
    pub noise_off: bool,
}

impl AttackConfig {
    pub fn new(kind: AttackKind, ball: Ball, seed: u64) -> Self {
        AttackConfig {
            kind,
            gamma: 1000.0,
            ball,
            step: 0.01,
            steps: 100,
            noise_mode: NoiseMode::AlgorithmOne,
            seed,
            pgd_steps: 10,
            pgd_step_size: None,
            pgd_zero_init: false,
            noise_off: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.pgd_steps == 0 {
            return Err(Error::Config("attack step counts must be at least 1".into()));
        }
        if let Some(a) = self.pgd_step_size {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::Config(format!("PGD step size must be positive, got {a}")));
            }
        }
        self.langevin().validate()
    }

    pub fn langevin(&self) -> LangevinConfig {
        LangevinConfig {
            step: self.step,
            gamma: self.gamma,
            ball: self.ball,
            steps: self.steps,
            noise_mode: self.noise_mode,
            seed: self.seed,
            noise_off: self.noise_off,
        }
    }

    pub fn pgd_alpha(&self) -> f64 {
        self.pgd_step_size.unwrap_or(2.5 * self.ball.radius() / self.pgd_steps as f64)
    }
}

fn shifted(y: &[f64], xi: &[f64]) -> Vec<f64> {
    y.iter().zip(xi).map(|(a, b)| a + b).collect()
}

fn check_attack(y: &[f64], p: &dyn Potential, theta: &[f64], ball: &Ball) -> Result<()> {
    check_dim("input", p.xi_dim(), y.len())?;
    check_dim("ball", p.xi_dim(), ball.dim())?;
    check_dim("theta", p.theta_dim(), theta.len())
}

/// Chain trajectory `ξ₀ … ξ_J` from a uniform start.
fn bayes_chain<R: Rng + ?Sized>(p: &dyn Potential, theta: &[f64], cfg: &AttackConfig, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let xi0 = cfg.ball.sample_uniform(rng);
    run_chain_len(&xi0, theta, p, &cfg.langevin(), cfg.steps, rng)
}

/// `y + ξ_J`, where `p` is the potential of the perturbation.
pub fn bayes_sample_attack<R: Rng + ?Sized>(
    y: &[f64],
    p: &dyn Potential,
    theta: &[f64],
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_attack(y, p, theta, &cfg.ball)?;
    let traj = bayes_chain(p, theta, cfg, rng)?;
    Ok(shifted(y, traj.last().unwrap()))
}

/// `y + (1/J)Σ_{j=1..J} ξ_j`.
pub fn bayes_mean_attack<R: Rng + ?Sized>(
    y: &[f64],
    p: &dyn Potential,
    theta: &[f64],
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_attack(y, p, theta, &cfg.ball)?;
    let traj = bayes_chain(p, theta, cfg, rng)?;
    let mut mean = vec![0.0; y.len()];
    for x in &traj[1..] {
        for (m, v) in mean.iter_mut().zip(x) {
            *m += v;
        }
    }
    let inv = 1.0 / cfg.steps as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    // the average is in the ball; projection only absorbs rounding
    cfg.ball.project_in_place(&mut mean);
    Ok(shifted(y, &mean))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `y + Proj(ε·sign ∇_ξΦ(0, θ))`.
pub fn fgsm_attack(y: &[f64], p: &dyn Potential, theta: &[f64], ball: &Ball) -> Result<Vec<f64>> {
    check_attack(y, p, theta, ball)?;
    let zero = vec![0.0; y.len()];
    let mut xi: Vec<f64> = p.grad_xi(&zero, theta).iter().map(|g| ball.radius() * sign(*g)).collect();
    ball.project_in_place(&mut xi);
    Ok(shifted(y, &xi))
}

/// Iterated signed-gradient ascent with projection after every step. Starts
/// from a uniform draw, or from zero when `init` is `None`.
pub fn pgd_attack<R: Rng + ?Sized>(
    y: &[f64],
    p: &dyn Potential,
    theta: &[f64],
    ball: &Ball,
    steps: usize,
    step_size: f64,
    init: Option<&mut R>,
) -> Result<Vec<f64>> {
    check_attack(y, p, theta, ball)?;
    let mut xi = match init {
        Some(rng) => ball.sample_uniform(rng),
        None => vec![0.0; y.len()],
    };
    for _ in 0..steps {
        let g = p.grad_xi(&xi, theta);
        for (x, gi) in xi.iter_mut().zip(&g) {
            *x += step_size * sign(*gi);
        }
        ball.project_in_place(&mut xi);
    }
    Ok(shifted(y, &xi))
}

/// Applies `cfg` to a potential whose argument is the perturbation, using
/// `rng` for the random parts.
pub fn attack_with<R: Rng + ?Sized>(
    y: &[f64],
    p: &dyn Potential,
    theta: &[f64],
    cfg: &AttackConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    match cfg.kind {
        AttackKind::BayesSample => bayes_sample_attack(y, p, theta, cfg, rng),
        AttackKind::BayesMean => bayes_mean_attack(y, p, theta, cfg, rng),
        AttackKind::Fgsm => fgsm_attack(y, p, theta, &cfg.ball),
        AttackKind::Pgd => {
            cfg.validate()?;
            let init = if cfg.pgd_zero_init { None } else { Some(rng) };
            pgd_attack(y, p, theta, &cfg.ball, cfg.pgd_steps, cfg.pgd_alpha(), init)
        }
    }
}

/// Attacked copy of datum `k`, with randomness from stream `k` of the attack seed.
pub fn attack_datum(model: &dyn Classifier, theta: &[f64], data: &Dataset, k: usize, cfg: &AttackConfig) -> Result<Vec<f64>> {
    let p = loss_potential(model, &data.features[k], data.labels[k])?;
    let zero = vec![0.0; data.dim()];
    let mut rng = rng::stream(cfg.seed, k as u64);
    attack_with(&zero, &p, theta, cfg, &mut rng).map(|xi| shifted(&data.features[k], &xi))
}

/// Fraction of (possibly attacked) inputs classified correctly. The attack
/// has white-box access to `theta`.
pub fn evaluate(model: &dyn Classifier, theta: &[f64], data: &Dataset, attack: Option<&AttackConfig>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("cannot evaluate on an empty dataset".into()));
    }
    check_dim("theta", model.num_params(), theta.len())?;
    check_dim("features", model.input_dim(), data.dim())?;
    if let Some(cfg) = attack {
        cfg.validate()?;
        check_dim("attack ball", data.dim(), cfg.ball.dim())?;
    }
    let correct: Vec<Result<bool>> = (0..data.len())
        .into_par_iter()
        .map(|k| {
            let x = match attack {
                Some(cfg) => attack_datum(model, theta, data, k, cfg)?,
                None => data.features[k].clone(),
            };
            Ok(model.predict(theta, &x) == data.labels[k])
        })
        .collect();
    let mut hits = 0usize;
    for c in correct {
        hits += c? as usize;
    }
    Ok(hits as f64 / data.len() as f64)
}
