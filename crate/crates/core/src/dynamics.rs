//! The coupled particle/parameter dynamics.
//!
//! `N` particles perform projected Langevin ascent on `ξ ↦ Φ(ξ, θ)` with `θ`
//! frozen; then `θ` takes one descent step along the particle estimate of the
//! objective gradient,
//!
//! ```text
//! θ ← θ − h·[ (1/N)Σ ∇_θΦ(ξᵢ, θ) + γ·Ĉov(Φ, ∇_θΦ) ].
//! ```
//!
//! Particles persist from one outer step to the next. The single-datum
//! variant picks one training point per outer step for all particles; the
//! mini-batch variant gives every particle its own training point and
//! shares one covariance across the batch.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::geometry::Ball;
use crate::models::{Classifier, Dataset};
use crate::oracle::{self, wasserstein2_sq_empirical, EmpiricalMeasure, DEFAULT_NODES};
use crate::potentials::{loss_potential, Potential};
use crate::rng::{self, StreamRng};
use crate::sampler::{step_in_place, LangevinConfig, NoiseMode};
use crate::stats::{bootstrap_ci, fit_linear, fit_loglog};

/// `(1/N)ΣΦᵢ∇Φᵢ − (1/N²)(ΣΦᵢ)(Σ∇Φᵢ)`, summed sequentially by index.
pub fn empirical_covariance(vals: &[f64], grads: &[Vec<f64>]) -> Result<Vec<f64>> {
    if vals.len() != grads.len() {
        return Err(Error::InvalidInput(format!(
            "{} potential values but {} gradients",
            vals.len(),
            grads.len()
        )));
    }
    let Some(first) = grads.first() else {
        return Err(Error::InvalidInput("covariance of an empty ensemble".into()));
    };
    let d = first.len();
    let mut s_phi = 0.0;
    let mut s_grad = vec![0.0; d];
    let mut s_cross = vec![0.0; d];
    for (v, g) in vals.iter().zip(grads) {
        check_dim("gradient", d, g.len())?;
        s_phi += v;
        for k in 0..d {
            s_grad[k] += g[k];
            s_cross[k] += v * g[k];
        }
    }
    let n = vals.len() as f64;
    Ok((0..d).map(|k| s_cross[k] / n - s_phi * s_grad[k] / (n * n)).collect())
}

/// `G(θ, ν) = ν(∇_θΦ) + w·Cov_ν(Φ, ∇_θΦ)` for an empirical `ν`.
///
/// The objective gradient at inverse temperature `γ` uses `w = γ`; the
/// unit-temperature form uses `w = 1`.
pub fn g_estimate(theta: &[f64], measure: &EmpiricalMeasure, p: &dyn Potential, cov_weight: f64) -> Result<Vec<f64>> {
    check_dim("theta", p.theta_dim(), theta.len())?;
    check_dim("measure", p.xi_dim(), measure.dim())?;
    let (vals, grads): (Vec<f64>, Vec<Vec<f64>>) =
        measure.points().iter().map(|x| p.value_and_grad_theta(x, theta)).unzip();
    Ok(combine(&vals, &grads, cov_weight)?.0)
}

/// Mean gradient plus weighted covariance, also returning the mean value.
fn combine(vals: &[f64], grads: &[Vec<f64>], cov_weight: f64) -> Result<(Vec<f64>, f64)> {
    let cov = empirical_covariance(vals, grads)?;
    let n = vals.len() as f64;
    let mut g = vec![0.0; cov.len()];
    for gi in grads {
        for (a, b) in g.iter_mut().zip(gi) {
            *a += b;
        }
    }
    for (a, c) in g.iter_mut().zip(&cov) {
        *a = *a / n + cov_weight * c;
    }
    Ok((g, vals.iter().sum::<f64>() / n))
}

/// A family of potentials indexed by training datum.
pub trait PotentialFamily: Sync {
    fn len(&self) -> usize;
    fn xi_dim(&self) -> usize;
    fn theta_dim(&self) -> usize;
    fn potential(&self, k: usize) -> Box<dyn Potential + '_>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One potential standing in for a dataset of size one.
pub struct SingleDatum<P: Potential>(pub P);

impl<P: Potential> PotentialFamily for SingleDatum<P> {
    fn len(&self) -> usize {
        1
    }
    fn xi_dim(&self) -> usize {
        self.0.xi_dim()
    }
    fn theta_dim(&self) -> usize {
        self.0.theta_dim()
    }
    fn potential(&self, _k: usize) -> Box<dyn Potential + '_> {
        Box::new(&self.0)
    }
}

/// Loss potentials `Φ(ξ, θ) = loss(y_k + ξ, z_k; θ)` of a labelled dataset.
pub struct ClassifierFamily<'a, M: Classifier + ?Sized> {
    pub model: &'a M,
    pub data: &'a Dataset,
}

impl<M: Classifier + ?Sized> PotentialFamily for ClassifierFamily<'_, M> {
    fn len(&self) -> usize {
        self.data.len()
    }
    fn xi_dim(&self) -> usize {
        self.model.input_dim()
    }
    fn theta_dim(&self) -> usize {
        self.model.num_params()
    }
    fn potential(&self, k: usize) -> Box<dyn Potential + '_> {
        Box::new(
            loss_potential(self.model, &self.data.features[k], self.data.labels[k])
                .expect("dataset rows match the model input"),
        )
    }
}

/// How training data are drawn in each outer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataSchedule {
    /// Independent uniform draws with replacement.
    Uniform,
    /// Consecutive slices of a fresh random permutation per pass.
    Epochs,
}

/// Index stream over a dataset of size `k`, driven by the reserved data stream.
pub struct DataSampler {
    schedule: DataSchedule,
    k: usize,
    rng: StreamRng,
    perm: Vec<usize>,
    pos: usize,
}

impl DataSampler {
    pub fn new(schedule: DataSchedule, k: usize, seed: u64) -> Self {
        DataSampler {
            schedule,
            k,
            rng: rng::stream(seed, rng::DATA_STREAM),
            perm: (0..k).collect(),
            pos: k,
        }
    }

    pub fn next_index(&mut self) -> usize {
        match self.schedule {
            DataSchedule::Uniform => self.rng.random_range(0..self.k),
            DataSchedule::Epochs => {
                if self.pos == self.k {
                    self.perm.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.perm[self.pos - 1]
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbramConfig {
    pub gamma: f64,
    pub ball: Ball,
    /// Parameter learning rate `h`.
    pub step: f64,
    /// Inner Langevin step; `None` uses `step`.
    pub xi_step: Option<f64>,
    pub particles: usize,
    pub inner_steps: usize,
    pub outer_steps: usize,
    pub noise_mode: NoiseMode,
    pub seed: u64,
    pub theta0: Vec<f64>,
    pub schedule: DataSchedule,
    /// Keep every `θ_j` (memory grows with `J·dim θ`).
    pub record_theta: bool,
    /// Keep every particle position after each outer step.
    pub record_particles: bool,
    /// Test hook: drop the Gaussian increment of the inner chains.
    pub noise_off: bool,
}

impl AbramConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        gamma: f64,
        ball: Ball,
        step: f64,
        particles: usize,
        inner_steps: usize,
        outer_steps: usize,
        noise_mode: NoiseMode,
        seed: u64,
        theta0: Vec<f64>,
    ) -> Result<Self> {
        let cfg = AbramConfig {
            gamma,
            ball,
            step,
            xi_step: None,
            particles,
            inner_steps,
            outer_steps,
            noise_mode,
            seed,
            theta0,
            schedule: DataSchedule::Uniform,
            record_theta: true,
            record_particles: false,
            noise_off: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 || self.inner_steps == 0 || self.outer_steps == 0 {
            return Err(Error::Config("particles, inner_steps and outer_steps must all be at least 1".into()));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Config(format!("step must be positive, got {}", self.step)));
        }
        if self.theta0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("theta0 must be finite".into()));
        }
        self.langevin().validate()
    }

    pub fn inner_step(&self) -> f64 {
        self.xi_step.unwrap_or(self.step)
    }

    /// Configuration of the inner chains.
    pub fn langevin(&self) -> LangevinConfig {
        LangevinConfig {
            step: self.inner_step(),
            gamma: self.gamma,
            ball: self.ball,
            steps: self.inner_steps,
            noise_mode: self.noise_mode,
            seed: self.seed,
            noise_off: self.noise_off,
        }
    }
}

/// Particle positions together with their private random streams.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    pub points: Vec<Vec<f64>>,
    rngs: Vec<StreamRng>,
}

impl ParticleEnsemble {
    /// Particle `i` draws its uniform start and all later noise from stream
    /// `i` of `seed`.
    pub fn uniform(ball: &Ball, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("ensemble needs at least one particle".into()));
        }
        let mut rngs: Vec<StreamRng> = (0..n as u64).map(|i| rng::stream(seed, i)).collect();
        let points = rngs.iter_mut().map(|r| ball.sample_uniform(r)).collect();
        Ok(ParticleEnsemble { points, rngs })
    }

    /// Given start points, with streams assigned as in [`ParticleEnsemble::uniform`].
    pub fn from_points(points: Vec<Vec<f64>>, ball: &Ball, seed: u64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("ensemble needs at least one particle".into()));
        }
        for p in &points {
            check_dim("particle", ball.dim(), p.len())?;
            if !ball.contains(p) {
                return Err(Error::Precondition("particle outside the ball".into()));
            }
        }
        let rngs = (0..points.len() as u64).map(|i| rng::stream(seed, i)).collect();
        Ok(ParticleEnsemble { points, rngs })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn measure(&self) -> EmpiricalMeasure {
        EmpiricalMeasure::new(self.points.clone()).expect("ensemble is nonempty")
    }

    /// Mean over particles and coordinates, and mean per-coordinate variance.
    pub fn summary(&self) -> (f64, f64) {
        let m = self.measure();
        (crate::stats::mean(&m.mean()), crate::stats::mean(&m.variance()))
    }
}

#[derive(Debug, Clone)]
pub struct AbramState {
    pub theta: Vec<f64>,
    pub ensemble: ParticleEnsemble,
    pub iteration: usize,
    /// Mean potential value over the ensemble at the last update.
    pub mean_value: f64,
}

impl AbramState {
    pub fn new(cfg: &AbramConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(AbramState {
            theta: cfg.theta0.clone(),
            ensemble: ParticleEnsemble::uniform(&cfg.ball, cfg.particles, cfg.seed)?,
            iteration: 0,
            mean_value: f64::NAN,
        })
    }
}

/// One outer iteration: `T` inner steps per particle at frozen `θ` under the
/// potential of datum `data[i]`, then the parameter update.
pub fn abram_outer_step(state: &mut AbramState, family: &dyn PotentialFamily, data: &[usize], cfg: &AbramConfig) -> Result<()> {
    let n = state.ensemble.len();
    check_dim("datum indices", n, data.len())?;
    check_dim("theta", family.theta_dim(), state.theta.len())?;
    check_dim("particle", family.xi_dim(), cfg.ball.dim())?;
    let lcfg = cfg.langevin();
    let theta = &state.theta;
    let step = state.iteration + 1;
    let ens = &mut state.ensemble;

    let results: Vec<Result<(f64, Vec<f64>)>> = ens
        .points
        .par_iter_mut()
        .zip(ens.rngs.par_iter_mut())
        .zip(data.par_iter())
        .with_min_len(16)
        .map(|((xi, rng), &k)| {
            let p = family.potential(k);
            let mut noise = vec![0.0; xi.len()];
            for _ in 0..lcfg.steps {
                step_in_place(xi, theta, p.as_ref(), &lcfg, rng, &mut noise, step)?;
            }
            Ok(p.value_and_grad_theta(xi, theta))
        })
        .collect();
    let mut vals = Vec::with_capacity(n);
    let mut grads = Vec::with_capacity(n);
    for r in results {
        let (v, g) = r?;
        vals.push(v);
        grads.push(g);
    }
    let (g, mean_value) = combine(&vals, &grads, cfg.gamma)?;
    for (t, gi) in state.theta.iter_mut().zip(&g) {
        *t -= cfg.step * gi;
    }
    if state.theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::Diverged {
            step,
            what: "parameter became non-finite".into(),
        });
    }
    state.iteration = step;
    state.mean_value = mean_value;
    Ok(())
}

/// Outcome of a full run.
#[derive(Debug, Clone)]
pub struct AbramRun {
    pub theta: Vec<f64>,
    /// `θ_0 … θ_J` when recorded, otherwise empty.
    pub theta_path: Vec<Vec<f64>>,
    /// Per outer step (including step 0): particle mean and variance, see
    /// [`ParticleEnsemble::summary`].
    pub particle_stats: Vec<(f64, f64)>,
    /// Particle positions per outer step (including step 0) when recorded.
    pub particle_paths: Vec<Vec<Vec<f64>>>,
    pub final_particles: Vec<Vec<f64>>,
}

/// Whether every particle shares one datum per step or each has its own.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Batching {
    SingleDatum,
    PerParticle,
}

/// Runs `J` outer steps and calls `observer` after each one.
pub fn run_abram_observed(
    cfg: &AbramConfig,
    family: &dyn PotentialFamily,
    batching: Batching,
    observer: &mut dyn FnMut(&AbramState) -> Result<()>,
) -> Result<AbramRun> {
    cfg.validate()?;
    if family.is_empty() {
        return Err(Error::InvalidInput("dataset is empty".into()));
    }
    check_dim("theta0", family.theta_dim(), cfg.theta0.len())?;
    check_dim("ball", family.xi_dim(), cfg.ball.dim())?;
    let mut state = AbramState::new(cfg)?;
    let mut sampler = DataSampler::new(cfg.schedule, family.len(), cfg.seed);
    let mut run = AbramRun {
        theta: Vec::new(),
        theta_path: Vec::new(),
        particle_stats: vec![state.ensemble.summary()],
        particle_paths: Vec::new(),
        final_particles: Vec::new(),
    };
    if cfg.record_theta {
        run.theta_path.push(state.theta.clone());
    }
    if cfg.record_particles {
        run.particle_paths.push(state.ensemble.points.clone());
    }
    let mut data = vec![0; cfg.particles];
    for _ in 0..cfg.outer_steps {
        match batching {
            Batching::SingleDatum => data.fill(sampler.next_index()),
            Batching::PerParticle => data.iter_mut().for_each(|k| *k = sampler.next_index()),
        }
        abram_outer_step(&mut state, family, &data, cfg)?;
        run.particle_stats.push(state.ensemble.summary());
        if cfg.record_theta {
            run.theta_path.push(state.theta.clone());
        }
        if cfg.record_particles {
            run.particle_paths.push(state.ensemble.points.clone());
        }
        observer(&state)?;
    }
    run.theta = state.theta;
    run.final_particles = state.ensemble.points;
    Ok(run)
}

/// Single-datum dynamics: one training point per outer step, shared by all
/// particles.
pub fn run_abram(cfg: &AbramConfig, family: &dyn PotentialFamily) -> Result<AbramRun> {
    run_abram_observed(cfg, family, Batching::SingleDatum, &mut |_| Ok(()))
}

/// Mini-batch dynamics: particle `i` follows the potential of its own datum.
pub fn run_abram_minibatch(cfg: &AbramConfig, family: &dyn PotentialFamily) -> Result<AbramRun> {
    run_abram_observed(cfg, family, Batching::PerParticle, &mut |_| Ok(()))
}

/// Writes `step,theta_0..,particle_mean,particle_var`.
pub fn write_trace(run: &AbramRun, path: &std::path::Path) -> Result<()> {
    if run.theta_path.is_empty() {
        return Err(Error::Precondition("run was made without recording theta".into()));
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e.to_string()))?;
    let d = run.theta_path[0].len();
    let mut header = vec!["step".to_string()];
    header.extend((0..d).map(|k| format!("theta_{k}")));
    header.push("particle_mean".into());
    header.push("particle_var".into());
    w.write_record(&header).map_err(|e| Error::parse(path, e.to_string()))?;
    for (j, (theta, (m, v))) in run.theta_path.iter().zip(&run.particle_stats).enumerate() {
        let mut row = vec![j.to_string()];
        row.extend(theta.iter().map(|t| format!("{t:?}")));
        row.push(format!("{m:?}"));
        row.push(format!("{v:?}"));
        w.write_record(&row).map_err(|e| Error::parse(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Result of minimising the objective over a one-dimensional parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimiserCertificate {
    pub theta_star: f64,
    pub value: f64,
    /// `F` does not vary over the grid; `theta_star` is then the lower bound.
    pub flat: bool,
}

/// Grid search of `θ ↦ F(θ)` over `[lo, hi]` followed by golden-section
/// refinement around the best grid point.
pub fn minimiser_certificate(
    p: &dyn Potential,
    gamma: f64,
    ball: &Ball,
    lo: f64,
    hi: f64,
    grid: usize,
) -> Result<MinimiserCertificate> {
    if p.theta_dim() != 1 || !(lo < hi) || grid < 3 {
        return Err(Error::InvalidInput("need a 1-D parameter, lo < hi and at least 3 grid points".into()));
    }
    let f = |t: f64| oracle::objective(p, gamma, ball, &[t], DEFAULT_NODES);
    let ts: Vec<f64> = (0..grid).map(|k| lo + (hi - lo) * k as f64 / (grid - 1) as f64).collect();
    let fs = ts.iter().map(|t| f(*t)).collect::<Result<Vec<_>>>()?;
    let (fmin, fmax) = fs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if fmax - fmin <= 1e-12 * (1.0 + fmin.abs()) {
        return Ok(MinimiserCertificate {
            theta_star: lo,
            value: fs[0],
            flat: true,
        });
    }
    let k = fs.iter().position(|v| *v == fmin).unwrap();
    let (mut a, mut b) = (ts[k.saturating_sub(1)], ts[(k + 1).min(grid - 1)]);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut c, mut d) = (b - r * (b - a), a + r * (b - a));
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    while b - a > 1e-9 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    let t = 0.5 * (a + b);
    let ft = f(t)?;
    let (theta_star, value) = if ft <= fmin { (t, ft) } else { (ts[k], fmin) };
    Ok(MinimiserCertificate {
        theta_star,
        value,
        flat: false,
    })
}

/// Settings of the propagation-of-chaos experiment.
#[derive(Debug, Clone)]
pub struct ChaosConfig {
    /// Dynamics shared by every system; its `particles` field is ignored.
    pub base: AbramConfig,
    pub n_list: Vec<usize>,
    pub n_ref: usize,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChaosRow {
    pub n: usize,
    pub mean_theta_gap_sq: f64,
    pub mean_w2_sq: f64,
    pub mean_total: f64,
    /// `|θ^N − θ^ref|² + W₂²(μ^N, μ^ref)` per repeat.
    pub per_repeat: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ChaosReport {
    pub rows: Vec<ChaosRow>,
    /// Log-log slope of the mean total gap against `N`, over sizes below
    /// `N_ref`; `NaN` when fewer than two such sizes exist.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// 95% repeat-level bootstrap interval of the slope.
    pub slope_ci: (f64, f64),
}

/// Runs `N_ref`-particle reference systems and `N`-particle systems whose
/// particles reuse the first `N` reference streams (shared starts and shared
/// noise), then fits the decay of the squared gap at the final time.
pub fn chaos_experiment(cfg: &ChaosConfig, family: &dyn PotentialFamily) -> Result<ChaosReport> {
    if cfg.n_list.is_empty() || cfg.repeats == 0 {
        return Err(Error::Config("chaos experiment needs sizes and repeats".into()));
    }
    if cfg.n_list.iter().any(|n| *n == 0 || *n > cfg.n_ref) {
        return Err(Error::Config("every N must satisfy 1 <= N <= N_ref".into()));
    }
    if cfg.base.ball.dim() != 1 || family.xi_dim() != 1 {
        return Err(Error::Precondition("chaos experiment measures W2 in one dimension".into()));
    }
    let run_system = |n: usize, seed: u64| -> Result<(Vec<f64>, EmpiricalMeasure)> {
        let mut c = cfg.base.clone();
        c.particles = n;
        c.seed = seed;
        c.record_theta = false;
        c.record_particles = false;
        let r = run_abram(&c, family)?;
        Ok((r.theta, EmpiricalMeasure::new(r.final_particles)?))
    };
    let per_repeat = (0..cfg.repeats)
        .into_par_iter()
        .map(|rep| -> Result<Vec<(f64, f64)>> {
            let seed = rng::derive_seed(cfg.base.seed, rep as u64);
            let (theta_ref, mu_ref) = run_system(cfg.n_ref, seed)?;
            cfg.n_list
                .iter()
                .map(|&n| {
                    let (theta, mu) = run_system(n, seed)?;
                    let gap: f64 = theta.iter().zip(&theta_ref).map(|(a, b)| (a - b).powi(2)).sum();
                    Ok((gap, wasserstein2_sq_empirical(&mu, &mu_ref)?))
                })
                .collect()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let reps = cfg.repeats as f64;
    let rows: Vec<ChaosRow> = cfg
        .n_list
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let totals: Vec<f64> = per_repeat.iter().map(|r| r[k].0 + r[k].1).collect();
            ChaosRow {
                n,
                mean_theta_gap_sq: per_repeat.iter().map(|r| r[k].0).sum::<f64>() / reps,
                mean_w2_sq: per_repeat.iter().map(|r| r[k].1).sum::<f64>() / reps,
                mean_total: totals.iter().sum::<f64>() / reps,
                per_repeat: totals,
            }
        })
        .collect();
    // a system with N = N_ref is the reference itself and has zero gap
    let fitted: Vec<&ChaosRow> = rows.iter().filter(|r| r.n < cfg.n_ref).collect();
    let ns: Vec<f64> = fitted.iter().map(|r| r.n as f64).collect();
    let means: Vec<f64> = fitted.iter().map(|r| r.mean_total).collect();
    let (fit, slope_ci) = if fitted.len() >= 2 {
        let fit = fit_loglog(&ns, &means)?;
        let ci = bootstrap_ci(cfg.repeats, 1000, 0.95, rng::derive_seed(cfg.base.seed, 0xB0075), |idx| {
            let m: Vec<f64> = fitted
                .iter()
                .map(|r| idx.iter().map(|&i| r.per_repeat[i]).sum::<f64>() / idx.len() as f64)
                .collect();
            fit_loglog(&ns, &m).ok().map(|f| f.slope)
        })?;
        (fit, ci)
    } else {
        let nan = crate::stats::LineFit {
            slope: f64::NAN,
            intercept: f64::NAN,
            r_squared: f64::NAN,
        };
        (nan, (f64::NAN, f64::NAN))
    };
    Ok(ChaosReport {
        rows,
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        slope_ci,
    })
}

/// Settings of the longtime experiment.
#[derive(Debug, Clone)]
pub struct LongtimeConfig {
    pub base: AbramConfig,
    /// Independent runs averaged into one curve.
    pub repeats: usize,
    /// Outer steps at which `|θ_j − θ*|²` is recorded.
    pub checkpoints: Vec<usize>,
    /// Search interval for `θ*` when no hint is given.
    pub theta_range: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct LongtimeReport {
    pub theta_star: f64,
    pub checkpoints: Vec<usize>,
    /// Mean of `|θ_j − θ*|²` over repeats at each checkpoint.
    pub curve: Vec<f64>,
    /// Mean over the last quarter of the run.
    pub plateau: f64,
    /// Checkpoint indices `[start, end)` of the fitted segment.
    pub segment: (usize, usize),
    /// Decay rate per unit time `t = j·h`.
    pub eta_hat: f64,
    pub r_squared: f64,
    /// 95% repeat-level bootstrap interval of `eta_hat`.
    pub eta_ci: (f64, f64),
}

/// Fits `ln c = a − η·t` on the prefix of `curve` lying above ten times the
/// plateau. Returns `(segment end, η, r²)`.
fn fit_decay(times: &[f64], curve: &[f64], plateau: f64) -> Option<(usize, f64, f64)> {
    let end = curve.iter().position(|c| *c <= 10.0 * plateau).unwrap_or(curve.len());
    if end < 3 {
        return None;
    }
    let ys: Vec<f64> = curve[..end].iter().map(|c| c.ln()).collect();
    let f = fit_linear(&times[..end], &ys).ok()?;
    Some((end, -f.slope, f.r_squared))
}

/// Runs the dynamics from `θ_0` and measures the squared distance to the
/// minimiser of the objective at inverse temperature `γ` (supplied, or
/// located by [`minimiser_certificate`]).
pub fn longtime_experiment(cfg: &LongtimeConfig, p: &dyn Potential, theta_star_hint: Option<f64>) -> Result<LongtimeReport> {
    let base = &cfg.base;
    base.validate()?;
    if p.theta_dim() != 1 {
        return Err(Error::Precondition("longtime experiment needs a one-dimensional parameter".into()));
    }
    if cfg.repeats == 0 || cfg.checkpoints.is_empty() || cfg.checkpoints.iter().any(|c| *c > base.outer_steps) {
        return Err(Error::Config("need repeats and checkpoints within the run".into()));
    }
    let theta_star = match theta_star_hint {
        Some(t) => t,
        None => minimiser_certificate(p, base.gamma, &base.ball, cfg.theta_range.0, cfg.theta_range.1, 201)?.theta_star,
    };
    let family = SingleDatum(p);
    let curves = (0..cfg.repeats)
        .into_par_iter()
        .map(|rep| -> Result<Vec<f64>> {
            let mut c = base.clone();
            c.seed = rng::derive_seed(base.seed, rep as u64);
            c.record_theta = true;
            c.record_particles = false;
            let r = run_abram(&c, &family)?;
            Ok(cfg.checkpoints.iter().map(|&j| (r.theta_path[j][0] - theta_star).powi(2)).collect())
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mean_curve = |idx: &[usize]| -> Vec<f64> {
        (0..cfg.checkpoints.len())
            .map(|k| idx.iter().map(|&i| curves[i][k]).sum::<f64>() / idx.len() as f64)
            .collect()
    };
    let times: Vec<f64> = cfg.checkpoints.iter().map(|j| *j as f64 * base.step).collect();
    let tail_start = cfg
        .checkpoints
        .iter()
        .position(|j| 4 * j >= 3 * base.outer_steps)
        .unwrap_or(cfg.checkpoints.len() - 1);
    let plateau_of = |c: &[f64]| crate::stats::mean(&c[tail_start..]);

    let all: Vec<usize> = (0..cfg.repeats).collect();
    let curve = mean_curve(&all);
    let plateau = plateau_of(&curve);
    let (end, eta_hat, r_squared) = fit_decay(&times, &curve, plateau).unwrap_or((0, f64::NAN, f64::NAN));
    let eta_ci = if cfg.repeats > 1 && end >= 3 {
        bootstrap_ci(cfg.repeats, 1000, 0.95, rng::derive_seed(base.seed, 0xB0075), |idx| {
            let c = mean_curve(idx);
            fit_decay(&times, &c, plateau_of(&c)).map(|f| f.1)
        })?
    } else {
        (eta_hat, eta_hat)
    };
    Ok(LongtimeReport {
        theta_star,
        checkpoints: cfg.checkpoints.clone(),
        curve,
        plateau,
        segment: (0, end),
        eta_hat,
        r_squared,
        eta_ci,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use crate::oracle::AdversarialDensity;
    use crate::potentials::{coupled_quadratic_1d, linear_quadratic, ZeroPotential};
    use proptest::prelude::*;

    fn brute_covariance(vals: &[f64], grads: &[Vec<f64>]) -> Vec<f64> {
        let n = vals.len();
        let d = grads[0].len();
        let mut out = vec![0.0; d];
        for i in 0..n {
            for j in 0..n {
                for k in 0..d {
                    out[k] += (vals[i] - vals[j]) * (grads[i][k] - grads[j][k]);
                }
            }
        }
        out.iter().map(|v| v / (2.0 * (n * n) as f64)).collect()
    }

    #[test]
    fn covariance_examples() {
        assert_eq!(empirical_covariance(&[3.0], &[vec![1.0, 2.0]]).unwrap(), vec![0.0, 0.0]);
        let c = empirical_covariance(&[2.25, 0.25], &[vec![3.0], vec![1.0]]).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-15);
        assert!(empirical_covariance(&[1.0, 2.0], &[vec![1.0]]).is_err());
        assert!(empirical_covariance(&[], &[]).is_err());
    }

    proptest! {
        #[test]
        fn covariance_matches_double_loop(n in 1usize..200, d in 1usize..4, seed in any::<u64>()) {
            let mut r = rng::stream(seed, 0);
            let vals: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
            let grads: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
            let a = empirical_covariance(&vals, &grads).unwrap();
            let b = brute_covariance(&vals, &grads);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn covariance_matches_double_loop_at_large_n() {
        let mut r = rng::stream(8, 0);
        let vals: Vec<f64> = (0..1000).map(|_| r.random_range(-1.0..1.0)).collect();
        let grads: Vec<Vec<f64>> = (0..1000).map(|_| vec![r.random_range(-1.0..1.0)]).collect();
        let a = empirical_covariance(&vals, &grads).unwrap();
        assert!((a[0] - brute_covariance(&vals, &grads)[0]).abs() < 1e-12);
    }

    #[test]
    fn g_estimate_examples() {
        let p = linear_quadratic(1);
        let nu = EmpiricalMeasure::from_scalars(&[-0.5, 0.5]).unwrap();
        let g = g_estimate(&[1.0], &nu, &p, 1.0).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-12);
        let nu = EmpiricalMeasure::new(vec![vec![0.3, -0.2]]).unwrap();
        assert_eq!(g_estimate(&[0.3, -0.2], &nu, &linear_quadratic(2), 1.0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn g_estimate_converges_to_objective_gradient() {
        let p = coupled_quadratic_1d();
        let gamma = 1.0;
        let ball = Ball::l2(1.0, 1).unwrap();
        for theta in [0.7, -0.4] {
            let dens = AdversarialDensity::new(&p, gamma, &ball, &[theta], DEFAULT_NODES).unwrap();
            let exact = dens.objective_grad()[0];
            let xs = dens.sample(&mut rng::stream(21, 0), 10_000);
            let nu = EmpiricalMeasure::from_scalars(&xs).unwrap();
            let est = g_estimate(&[theta], &nu, &p, gamma).unwrap()[0];
            // delta-method influence of mean(g) + γ·Cov(Φ, g)
            let phi: Vec<f64> = xs.iter().map(|x| p.value(&[*x], &[theta])).collect();
            let g: Vec<f64> = xs.iter().map(|x| x + theta).collect();
            let (mp, mg) = (crate::stats::mean(&phi), crate::stats::mean(&g));
            let infl: Vec<f64> = phi.iter().zip(&g).map(|(a, b)| b + gamma * (a - mp) * (b - mg)).collect();
            let se = (crate::stats::variance(&infl) / xs.len() as f64).sqrt();
            assert!((est - exact).abs() < 3.0 * se, "theta {theta}: {est} vs {exact}, se {se}");
        }
    }

    fn coupled_cfg(gamma: f64, n: usize, j: usize, seed: u64) -> AbramConfig {
        AbramConfig::new(gamma, Ball::l2(1.0, 1).unwrap(), 0.01, n, 10, j, NoiseMode::AlgorithmOne, seed, vec![1.0]).unwrap()
    }

    /// Coupled quadratic values and θ-gradients with the particles pinned.
    struct Pinned;

    impl Potential for Pinned {
        fn xi_dim(&self) -> usize {
            1
        }
        fn theta_dim(&self) -> usize {
            1
        }
        fn value(&self, xi: &[f64], theta: &[f64]) -> f64 {
            coupled_quadratic_1d().value(xi, theta)
        }
        fn grad_xi(&self, _xi: &[f64], _theta: &[f64]) -> Vec<f64> {
            vec![0.0]
        }
        fn grad_theta(&self, xi: &[f64], theta: &[f64]) -> Vec<f64> {
            coupled_quadratic_1d().grad_theta(xi, theta)
        }
    }

    #[test]
    fn outer_step_hand_example() {
        // identical particles have zero covariance, so γ plays no role
        let mut cfg = coupled_cfg(1.0, 3, 1, 0);
        cfg.step = 0.1;
        cfg.noise_off = true;
        let mut state = AbramState {
            theta: vec![1.0],
            ensemble: ParticleEnsemble::from_points(vec![vec![0.0]; 3], &cfg.ball, 0).unwrap(),
            iteration: 0,
            mean_value: f64::NAN,
        };
        abram_outer_step(&mut state, &SingleDatum(Pinned), &[0, 0, 0], &cfg).unwrap();
        assert!((state.theta[0] - 0.9).abs() < 1e-15);
        assert_eq!(state.iteration, 1);
    }

    #[test]
    fn outer_step_reduces_to_sgd_for_one_particle() {
        let p = coupled_quadratic_1d();
        let family = SingleDatum(p);
        let mut cfg = coupled_cfg(1e-9, 1, 1, 4);
        cfg.inner_steps = 7;
        let mut state = AbramState::new(&cfg).unwrap();
        let theta0 = state.theta[0];
        abram_outer_step(&mut state, &family, &[0], &cfg).unwrap();
        let xi = state.ensemble.points[0][0];
        assert!((state.theta[0] - (theta0 - cfg.step * (xi + theta0))).abs() < 1e-15);
    }

    #[test]
    fn symmetric_particles_pull_theta_towards_zero() {
        let p = coupled_quadratic_1d();
        for theta in [-2.0, -0.3, 0.4, 1.5] {
            let nu = EmpiricalMeasure::from_scalars(&[-0.6, 0.6]).unwrap();
            let g = g_estimate(&[theta], &nu, &p, 0.0).unwrap()[0];
            let next: f64 = theta - 0.5 * g;
            assert!(next.abs() < theta.abs());
        }
    }

    #[test]
    fn runs_are_deterministic_and_stay_in_ball() {
        let family = SingleDatum(coupled_quadratic_1d());
        let mut cfg = coupled_cfg(3.0, 16, 50, 9);
        cfg.record_particles = true;
        let a = run_abram(&cfg, &family).unwrap();
        let b = run_abram(&cfg, &family).unwrap();
        assert_eq!(a.theta_path, b.theta_path);
        assert_eq!(a.particle_paths, b.particle_paths);
        assert!(a.particle_paths.iter().flatten().all(|x| cfg.ball.contains(x)));
        assert_eq!(a.theta_path.len(), 51);
        cfg.seed = 10;
        assert_ne!(run_abram(&cfg, &family).unwrap().theta_path, a.theta_path);
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let family = SingleDatum(coupled_quadratic_1d());
        let cfg = coupled_cfg(3.0, 200, 20, 2);
        let run_with = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_abram(&cfg, &family).unwrap().theta_path)
        };
        assert_eq!(run_with(1), run_with(4));
    }

    #[test]
    fn degenerate_single_particle_run_is_finite() {
        let family = SingleDatum(coupled_quadratic_1d());
        let mut cfg = coupled_cfg(1e-9, 1, 100, 1);
        cfg.inner_steps = 1;
        let r = run_abram(&cfg, &family).unwrap();
        assert!(r.theta_path.iter().all(|t| t[0].is_finite()));
    }

    #[test]
    fn minibatch_with_identical_data_matches_single_datum() {
        let arch = crate::models::Architecture::new(vec![2, 3]).unwrap();
        let m = crate::models::mlp(arch);
        let data = Dataset::new(vec![vec![0.2, 0.7]; 5], vec![1; 5], 3, "same").unwrap();
        let family = ClassifierFamily { model: &m, data: &data };
        let mut cfg = AbramConfig::new(
            1.0,
            Ball::linf(0.1, 2).unwrap(),
            0.05,
            4,
            3,
            10,
            NoiseMode::AlgorithmOne,
            3,
            m.init_params(3),
        )
        .unwrap();
        cfg.xi_step = Some(0.02);
        let a = run_abram(&cfg, &family).unwrap();
        let b = run_abram_minibatch(&cfg, &family).unwrap();
        assert_eq!(a.theta_path, b.theta_path);
        let one = Dataset::new(vec![vec![0.2, 0.7]], vec![1], 3, "one").unwrap();
        let c = run_abram(&cfg, &ClassifierFamily { model: &m, data: &one }).unwrap();
        assert_eq!(a.theta_path, c.theta_path);
    }

    #[test]
    fn epoch_schedule_visits_every_datum_once_per_pass() {
        let mut s = DataSampler::new(DataSchedule::Epochs, 7, 3);
        for _ in 0..3 {
            let mut seen: Vec<usize> = (0..7).map(|_| s.next_index()).collect();
            seen.sort();
            assert_eq!(seen, (0..7).collect::<Vec<_>>());
        }
    }

    #[test]
    fn chaos_gap_vanishes_at_matched_size() {
        let family = SingleDatum(coupled_quadratic_1d());
        let base = coupled_cfg(2.0, 1, 20, 5);
        let cfg = ChaosConfig {
            base,
            n_list: vec![4, 32],
            n_ref: 32,
            repeats: 3,
        };
        let r = chaos_experiment(&cfg, &family).unwrap();
        assert_eq!(r.rows[1].mean_total, 0.0);
        assert!(r.rows[0].mean_total > 0.0);
        assert!(chaos_experiment(&ChaosConfig { n_ref: 16, ..cfg }, &family).is_err());
    }

    #[test]
    fn minimiser_certificate_examples() {
        let ball = Ball::l2(1.0, 1).unwrap();
        let c = minimiser_certificate(&coupled_quadratic_1d(), 10.0, &ball, -1.0, 1.3, 47).unwrap();
        assert!(!c.flat && c.theta_star.abs() < 1e-4, "{c:?}");
        let flat = minimiser_certificate(&crate::potentials::shifted_quadratic_1d(0.1), 1.0, &ball, -1.0, 1.0, 21).unwrap();
        assert!(flat.flat && flat.theta_star == -1.0);
        let z = ZeroPotential { xi_dim: 1, theta_dim: 1 };
        assert!(minimiser_certificate(&z, 1.0, &ball, -1.0, 1.0, 21).unwrap().flat);
        for k in 0..47 {
            let t = -1.0 + 2.3 * k as f64 / 46.0;
            assert!(c.value <= oracle::objective(&coupled_quadratic_1d(), 10.0, &ball, &[t], DEFAULT_NODES).unwrap() + 1e-12);
        }
    }

    #[test]
    fn longtime_from_the_optimum_stays_at_the_floor() {
        let p = coupled_quadratic_1d();
        let base = AbramConfig::new(1.0, Ball::l2(1.0, 1).unwrap(), 0.01, 500, 10, 400, NoiseMode::ContinuousConsistent, 3, vec![0.0]).unwrap();
        let cfg = LongtimeConfig {
            base,
            repeats: 20,
            checkpoints: (0..=400).step_by(10).collect(),
            theta_range: (-1.0, 1.0),
        };
        let r = longtime_experiment(&cfg, &p, Some(0.0)).unwrap();
        assert!(r.curve.iter().all(|c| *c < 10.0 * r.plateau), "{:?} vs {}", r.curve, r.plateau);
    }
}
