//! Projected Euler–Maruyama chain for the frozen-parameter reflected Langevin
//! dynamics `dξ = γ∇_ξΦ(ξ,θ)dt + √2 dW` on a ball, and an ergodicity
//! diagnostic comparing many chains against the quadrature oracle.
//!
//! Reflection is realised as projection onto the ball after every step.
//!
//! Two noise scalings are provided:
//!
//! * [`NoiseMode::AlgorithmOne`]: `ξ ← Proj(ξ + h∇Φ + γ⁻¹√(2h)·w)`, the update
//!   used in the training and attack loops. Its drift-to-noise ratio is that
//!   of `dξ = ∇Φ dt + √(2/γ²) dW`, so the chain equilibrates to
//!   `exp(γ²Φ)`, not `exp(γΦ)`.
//! * [`NoiseMode::ContinuousConsistent`]: `ξ ← Proj(ξ + γh∇Φ + √(2h)·w)`, the
//!   Euler discretisation of the continuous dynamics, targeting `exp(γΦ)`.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::geometry::Ball;
use crate::oracle::{bin_count_rule, tv_distance_1d, AdversarialDensity, BinnedMeasure, DEFAULT_NODES};
use crate::potentials::Potential;
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseMode {
    AlgorithmOne,
    ContinuousConsistent,
}

impl NoiseMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "algorithmone" | "algorithm1" | "alg1" => Ok(NoiseMode::AlgorithmOne),
            "continuousconsistent" | "continuous" => Ok(NoiseMode::ContinuousConsistent),
            other => Err(Error::Config(format!("unknown noise mode '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NoiseMode::AlgorithmOne => "algorithm-one",
            NoiseMode::ContinuousConsistent => "continuous-consistent",
        }
    }

    /// `(drift multiplier, noise amplitude)` for step `h`.
    pub fn coefficients(self, gamma: f64, h: f64) -> (f64, f64) {
        match self {
            NoiseMode::AlgorithmOne => (h, (2.0 * h).sqrt() / gamma),
            NoiseMode::ContinuousConsistent => (gamma * h, (2.0 * h).sqrt()),
        }
    }

    /// Inverse temperature of the chain's equilibrium `exp(γ_eff·Φ)`.
    pub fn target_gamma(self, gamma: f64) -> f64 {
        match self {
            NoiseMode::AlgorithmOne => gamma * gamma,
            NoiseMode::ContinuousConsistent => gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LangevinConfig {
    pub step: f64,
    pub gamma: f64,
    pub ball: Ball,
    pub steps: usize,
    pub noise_mode: NoiseMode,
    pub seed: u64,
    /// Test hook: drop the Gaussian increment, leaving projected ascent.
    pub noise_off: bool,
}

impl LangevinConfig {
    pub fn new(step: f64, gamma: f64, ball: Ball, steps: usize, noise_mode: NoiseMode, seed: u64) -> Result<Self> {
        let cfg = LangevinConfig {
            step,
            gamma,
            ball,
            steps,
            noise_mode,
            seed,
            noise_off: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!("step size must be positive, got {}", self.step)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("inverse temperature must be positive, got {}", self.gamma)));
        }
        if self.steps == 0 {
            return Err(Error::Config("chain length must be at least 1".into()));
        }
        Ok(())
    }
}

/// One projected Langevin update in place. `noise` is scratch space of the
/// ball's dimension.
pub(crate) fn step_in_place<R: Rng + ?Sized>(
    xi: &mut [f64],
    theta: &[f64],
    p: &dyn Potential,
    cfg: &LangevinConfig,
    rng: &mut R,
    noise: &mut [f64],
    step_index: usize,
) -> Result<()> {
    let (drift, amp) = cfg.noise_mode.coefficients(cfg.gamma, cfg.step);
    let grad = p.grad_xi(xi, theta);
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Diverged {
            step: step_index,
            what: "non-finite gradient in the Langevin step".into(),
        });
    }
    if cfg.noise_off {
        noise.iter_mut().for_each(|v| *v = 0.0);
    } else {
        rng::fill_standard_normal(rng, noise);
    }
    for ((x, g), w) in xi.iter_mut().zip(&grad).zip(noise.iter()) {
        *x += drift * g + amp * w;
    }
    cfg.ball.project_in_place(xi);
    debug_assert!(cfg.ball.contains(xi));
    Ok(())
}

/// `Proj(ξ + drift·∇_ξΦ(ξ,θ) + amplitude·w)`.
pub fn langevin_step<R: Rng + ?Sized>(
    xi: &[f64],
    theta: &[f64],
    p: &dyn Potential,
    cfg: &LangevinConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_dim("xi", cfg.ball.dim(), xi.len())?;
    check_dim("potential xi", p.xi_dim(), xi.len())?;
    check_dim("theta", p.theta_dim(), theta.len())?;
    if !cfg.ball.contains(xi) {
        return Err(Error::Precondition("chain state outside the ball".into()));
    }
    let mut out = xi.to_vec();
    let mut noise = vec![0.0; xi.len()];
    step_in_place(&mut out, theta, p, cfg, rng, &mut noise, 0)?;
    Ok(out)
}

/// `cfg.steps` updates from `xi0`, driven by stream 0 of `cfg.seed`.
pub fn run_chain(xi0: &[f64], theta: &[f64], p: &dyn Potential, cfg: &LangevinConfig) -> Result<Vec<Vec<f64>>> {
    let mut rng = rng::stream(cfg.seed, 0);
    run_chain_with(xi0, theta, p, cfg, &mut rng)
}

/// Trajectory of `cfg.steps + 1` states starting at `xi0`.
pub fn run_chain_with<R: Rng + ?Sized>(
    xi0: &[f64],
    theta: &[f64],
    p: &dyn Potential,
    cfg: &LangevinConfig,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    run_chain_len(xi0, theta, p, cfg, cfg.steps, rng)
}

pub(crate) fn run_chain_len<R: Rng + ?Sized>(
    xi0: &[f64],
    theta: &[f64],
    p: &dyn Potential,
    cfg: &LangevinConfig,
    steps: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    check_dim("xi", cfg.ball.dim(), xi0.len())?;
    check_dim("potential xi", p.xi_dim(), xi0.len())?;
    check_dim("theta", p.theta_dim(), theta.len())?;
    if !cfg.ball.contains(xi0) {
        return Err(Error::Precondition("initial state outside the ball".into()));
    }
    let mut traj = Vec::with_capacity(steps + 1);
    traj.push(xi0.to_vec());
    let mut cur = xi0.to_vec();
    let mut noise = vec![0.0; xi0.len()];
    for t in 1..=steps {
        step_in_place(&mut cur, theta, p, cfg, rng, &mut noise, t)?;
        traj.push(cur.clone());
    }
    Ok(traj)
}

/// How diagnostic chains are started.
#[derive(Debug, Clone, PartialEq)]
pub enum ChainInit {
    Uniform,
    Point(f64),
}

#[derive(Debug, Clone)]
pub struct ErgodicityOptions {
    pub n_chains: usize,
    /// Steps discarded before pooling.
    pub burn_in: usize,
    /// Pool every `thin`-th post-burn-in state.
    pub thin: usize,
    pub init: ChainInit,
    /// Steps at which the cross-chain histogram is compared to the oracle.
    pub checkpoints: Vec<usize>,
    /// Bins of the pooled histogram; `None` uses the cube-root rule.
    pub pooled_bins: Option<usize>,
}

impl ErgodicityOptions {
    /// Twenty evenly spaced checkpoints, pooled over the second half of
    /// each chain.
    pub fn new(n_chains: usize, steps: usize, init: ChainInit) -> Self {
        ErgodicityOptions {
            n_chains,
            burn_in: steps / 2,
            thin: 1,
            init,
            checkpoints: (0..=20).map(|k| steps * k / 20).collect(),
            pooled_bins: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicityReport {
    pub checkpoints: Vec<usize>,
    pub tv_curve: Vec<f64>,
    /// TV of the pooled post-burn-in histogram against the oracle.
    pub final_tv: f64,
    pub pooled_samples: usize,
    pub pooled_bins: usize,
    pub target_gamma: f64,
}

impl ErgodicityReport {
    pub fn tv_at(&self, step: usize) -> Option<f64> {
        self.checkpoints.iter().position(|s| *s == step).map(|i| self.tv_curve[i])
    }
}

/// Runs `n_chains` independent frozen-`θ` chains (chain `c` on stream `c`)
/// and measures the total-variation distance of their law to the oracle
/// density at the chain's equilibrium inverse temperature.
pub fn ergodicity_diagnostic(
    theta: &[f64],
    p: &dyn Potential,
    cfg: &LangevinConfig,
    opts: &ErgodicityOptions,
) -> Result<ErgodicityReport> {
    cfg.validate()?;
    if cfg.ball.dim() != 1 || p.xi_dim() != 1 {
        return Err(Error::Precondition("ergodicity diagnostic needs a one-dimensional potential".into()));
    }
    if opts.n_chains == 0 || opts.thin == 0 || opts.burn_in >= cfg.steps {
        return Err(Error::Config("need n_chains >= 1, thin >= 1 and burn_in < steps".into()));
    }
    if opts.checkpoints.iter().any(|c| *c > cfg.steps) {
        return Err(Error::Config("checkpoint beyond the chain length".into()));
    }
    let eps = cfg.ball.radius();
    if let ChainInit::Point(x) = opts.init {
        if x.abs() > eps {
            return Err(Error::Precondition("initial point outside the ball".into()));
        }
    }
    let target_gamma = cfg.noise_mode.target_gamma(cfg.gamma);
    let oracle = AdversarialDensity::new(p, target_gamma, &cfg.ball, theta, DEFAULT_NODES)?;

    let per_chain = (cfg.steps - opts.burn_in).div_ceil(opts.thin);
    let pooled_samples = per_chain * opts.n_chains;
    let pooled_bins = opts.pooled_bins.unwrap_or_else(|| bin_count_rule(pooled_samples));
    let pooled_width = 2.0 * eps / pooled_bins as f64;

    struct ChainOut {
        at_checkpoints: Vec<f64>,
        counts: Vec<u64>,
    }

    let run = |c: usize| -> Result<ChainOut> {
        let mut rng = rng::stream(cfg.seed, c as u64);
        let mut x = [match opts.init {
            ChainInit::Uniform => cfg.ball.sample_uniform(&mut rng)[0],
            ChainInit::Point(v) => v,
        }];
        let mut noise = [0.0];
        let mut at_checkpoints = vec![0.0; opts.checkpoints.len()];
        let mut counts = vec![0u64; pooled_bins];
        let record = |t: usize, x: f64, at: &mut [f64], counts: &mut [u64]| {
            for (k, s) in opts.checkpoints.iter().enumerate() {
                if *s == t {
                    at[k] = x;
                }
            }
            if t > opts.burn_in && (t - opts.burn_in - 1) % opts.thin == 0 {
                let b = (((x + eps) / pooled_width).floor().max(0.0) as usize).min(pooled_bins - 1);
                counts[b] += 1;
            }
        };
        record(0, x[0], &mut at_checkpoints, &mut counts);
        for t in 1..=cfg.steps {
            step_in_place(&mut x, theta, p, cfg, &mut rng, &mut noise, t)?;
            record(t, x[0], &mut at_checkpoints, &mut counts);
        }
        Ok(ChainOut { at_checkpoints, counts })
    };

    let outs: Vec<ChainOut> = (0..opts.n_chains).into_par_iter().map(run).collect::<Result<_>>()?;

    let cross_bins = bin_count_rule(opts.n_chains);
    let cross_target = BinnedMeasure::from_density(&oracle, cross_bins)?;
    let mut tv_curve = Vec::with_capacity(opts.checkpoints.len());
    for k in 0..opts.checkpoints.len() {
        let xs: Vec<f64> = outs.iter().map(|o| o.at_checkpoints[k]).collect();
        let hist = BinnedMeasure::from_samples(&xs, -eps, eps, cross_bins)?;
        tv_curve.push(tv_distance_1d(&hist, &cross_target)?);
    }

    let mut counts = vec![0u64; pooled_bins];
    for o in &outs {
        for (a, b) in counts.iter_mut().zip(&o.counts) {
            *a += b;
        }
    }
    let total: u64 = counts.iter().sum();
    let pooled = BinnedMeasure {
        lo: -eps,
        hi: eps,
        masses: counts.iter().map(|c| *c as f64 / total as f64).collect(),
    };
    let final_tv = tv_distance_1d(&pooled, &BinnedMeasure::from_density(&oracle, pooled_bins)?)?;

    Ok(ErgodicityReport {
        checkpoints: opts.checkpoints.clone(),
        tv_curve,
        final_tv,
        pooled_samples,
        pooled_bins,
        target_gamma,
    })
}

/// Mode location of a pooled histogram: centre of the fullest bin.
pub fn histogram_mode(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Result<f64> {
    let h = BinnedMeasure::from_samples(samples, lo, hi, bins)?;
    let (k, _) = h
        .masses
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, m)| if *m > acc.1 { (k, *m) } else { acc });
    Ok(lo + (k as f64 + 0.5) * (hi - lo) / bins as f64)
}

/// Convenience: a fresh stream for chain `c`.
pub fn chain_stream(seed: u64, c: u64) -> StreamRng {
    rng::stream(seed, c)
}
