//! Deterministic quadrature ground truth for the Gibbs-type adversarial
//! density `π(ξ|θ) ∝ exp(γΦ(ξ,θ))·1[ξ ∈ B(ε)]`, the relaxed objective
//! `F(θ) = ∫Φ dπ`, its gradient, and distances between one-dimensional
//! measures.
//!
//! Everything here is brute force on a uniform grid (composite Simpson), and
//! is used to check the stochastic estimators. Weights are shifted by the
//! grid maximum of `γΦ` before exponentiating so large `γ` does not
//! overflow. Grids are automatically refined so that the exponential
//! boundary layer at large `γ` is resolved; see [`AdversarialDensity::new`].
//!
//! The theory experiments are one-dimensional, where the Euclidean ball and
//! the max-norm box coincide. A tensor-product two-dimensional variant is
//! provided for cross-checks.

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::geometry::Ball;
use crate::potentials::Potential;

/// Default node count of the one-dimensional grid.
pub const DEFAULT_NODES: usize = 4001;
/// Default nodes per axis of the two-dimensional tensor grid.
pub const DEFAULT_NODES_2D: usize = 401;
/// Target grid spacing in units of the boundary-layer width `1/(γ·max|∂ξΦ|)`.
const LAYER_RESOLUTION: f64 = 0.02;
const MAX_NODES: usize = 4_000_001;

/// Composite Simpson weights for `n` (odd) equally spaced nodes with spacing `h`.
pub fn simpson_weights(n: usize, h: f64) -> Vec<f64> {
    debug_assert!(n >= 3 && n % 2 == 1);
    (0..n)
        .map(|i| {
            let c = if i == 0 || i == n - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            c * h / 3.0
        })
        .collect()
}

pub fn simpson(values: &[f64], h: f64) -> f64 {
    simpson_weights(values.len(), h)
        .iter()
        .zip(values)
        .map(|(w, v)| w * v)
        .sum()
}

fn odd_nodes(n: usize) -> Result<usize> {
    if n < 3 {
        return Err(Error::InvalidInput(format!("quadrature grid needs at least 3 nodes, got {n}")));
    }
    Ok(if n % 2 == 0 { n + 1 } else { n })
}

/// `π^{γ,ε}(·|θ)` on a one-dimensional ball, tabulated on a Simpson grid.
#[derive(Debug, Clone)]
pub struct AdversarialDensity {
    gamma: f64,
    ball: Ball,
    theta: Vec<f64>,
    xs: Vec<f64>,
    step: f64,
    weights: Vec<f64>,
    /// Normalised density at the nodes.
    dens: Vec<f64>,
    phi: Vec<f64>,
    grad_theta: Vec<Vec<f64>>,
    log_shift: f64,
    log_norm: f64,
}

impl AdversarialDensity {
    /// Builds the density with at least `min_nodes` nodes, refining the grid
    /// until its spacing resolves the boundary layer of width
    /// `1/(γ·max|∂ξΦ|)` fifty times over.
    pub fn new(p: &dyn Potential, gamma: f64, ball: &Ball, theta: &[f64], min_nodes: usize) -> Result<Self> {
        let n = Self::resolved_nodes(p, gamma, ball, theta, min_nodes)?;
        Self::with_exact_nodes(p, gamma, ball, theta, n)
    }

    /// Node count [`AdversarialDensity::new`] would use at this `θ`. Fix it
    /// when differentiating in `θ` numerically, so the grid does not move.
    pub fn resolved_nodes(p: &dyn Potential, gamma: f64, ball: &Ball, theta: &[f64], min_nodes: usize) -> Result<usize> {
        let n0 = odd_nodes(min_nodes)?;
        Self::validate(p, gamma, ball, theta)?;
        let eps = ball.radius();
        let h0 = 2.0 * eps / (n0 - 1) as f64;
        let max_slope = (0..n0)
            .map(|i| {
                let x = -eps + i as f64 * h0;
                p.grad_xi(&[x], theta)[0].abs()
            })
            .fold(0.0, f64::max);
        let sharpness = gamma * max_slope;
        if sharpness == 0.0 {
            return Ok(n0);
        }
        let needed = (2.0 * eps * sharpness / LAYER_RESOLUTION).ceil() as usize + 1;
        odd_nodes(needed.clamp(n0, MAX_NODES))
    }

    fn validate(p: &dyn Potential, gamma: f64, ball: &Ball, theta: &[f64]) -> Result<()> {
        if ball.dim() != 1 || p.xi_dim() != 1 {
            return Err(Error::Precondition("the quadrature oracle is one-dimensional here; use AdversarialDensity2d".into()));
        }
        check_dim("theta", p.theta_dim(), theta.len())?;
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidInput(format!("inverse temperature must be finite and >= 0, got {gamma}")));
        }
        Ok(())
    }

    /// Builds the density on exactly `nodes` nodes (bumped to odd).
    pub fn with_exact_nodes(p: &dyn Potential, gamma: f64, ball: &Ball, theta: &[f64], nodes: usize) -> Result<Self> {
        let n = odd_nodes(nodes)?;
        Self::validate(p, gamma, ball, theta)?;
        let eps = ball.radius();
        let step = 2.0 * eps / (n - 1) as f64;
        let xs: Vec<f64> = (0..n).map(|i| if i == n - 1 { eps } else { -eps + i as f64 * step }).collect();
        let mut phi = Vec::with_capacity(n);
        let mut grad_theta = Vec::with_capacity(n);
        for x in &xs {
            let (v, g) = p.value_and_grad_theta(&[*x], theta);
            phi.push(v);
            grad_theta.push(g);
        }
        let log_shift = phi.iter().map(|v| gamma * v).fold(f64::NEG_INFINITY, f64::max);
        let weights = simpson_weights(n, step);
        let raw: Vec<f64> = phi.iter().map(|v| (gamma * v - log_shift).exp()).collect();
        let z: f64 = weights.iter().zip(&raw).map(|(w, r)| w * r).sum();
        if !(z.is_finite() && z > 0.0) {
            return Err(Error::Diverged {
                step: 0,
                what: format!("normalising constant {z}"),
            });
        }
        let dens = raw.iter().map(|r| r / z).collect();
        Ok(AdversarialDensity {
            gamma,
            ball: *ball,
            theta: theta.to_vec(),
            xs,
            step,
            weights,
            dens,
            phi,
            grad_theta,
            log_shift,
            log_norm: z.ln(),
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn ball(&self) -> &Ball {
        &self.ball
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn nodes(&self) -> &[f64] {
        &self.xs
    }

    pub fn node_density(&self) -> &[f64] {
        &self.dens
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    /// `log ∫_B exp(γΦ)`.
    pub fn log_normaliser(&self) -> f64 {
        self.log_norm + self.log_shift
    }

    /// Density at an arbitrary point; zero outside the ball.
    pub fn density(&self, p: &dyn Potential, at: f64) -> f64 {
        if at.abs() > self.ball.radius() {
            return 0.0;
        }
        (self.gamma * p.value(&[at], &self.theta) - self.log_shift - self.log_norm).exp()
    }

    fn integrate(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.weights.iter().enumerate().map(|(i, w)| w * self.dens[i] * f(i)).sum()
    }

    /// Simpson integral of the tabulated density (1 up to rounding).
    pub fn total_mass(&self) -> f64 {
        self.integrate(|_| 1.0)
    }

    /// `F(θ) = ∫ Φ(ξ,θ) π(dξ|θ)`.
    pub fn objective(&self) -> f64 {
        self.integrate(|i| self.phi[i])
    }

    /// `∇F(θ) = ∫∇_θΦ dπ + γ·Cov_π(Φ, ∇_θΦ)`.
    pub fn objective_grad(&self) -> Vec<f64> {
        let dim = self.theta.len();
        let f = self.objective();
        (0..dim)
            .map(|k| {
                let mean_grad = self.integrate(|i| self.grad_theta[i][k]);
                let cross = self.integrate(|i| self.phi[i] * self.grad_theta[i][k]);
                mean_grad + self.gamma * (cross - f * mean_grad)
            })
            .collect()
    }

    pub fn mean(&self) -> f64 {
        self.integrate(|i| self.xs[i])
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.integrate(|i| (self.xs[i] - m).powi(2))
    }

    /// Node of maximal density.
    pub fn mode(&self) -> f64 {
        let (i, _) = self
            .dens
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, d)| if *d > acc.1 { (i, *d) } else { acc });
        self.xs[i]
    }

    /// Cumulative distribution at the nodes (trapezoid, renormalised to end at 1).
    pub fn node_cdf(&self) -> Vec<f64> {
        let mut cdf = Vec::with_capacity(self.xs.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for i in 1..self.xs.len() {
            acc += 0.5 * (self.dens[i - 1] + self.dens[i]) * (self.xs[i] - self.xs[i - 1]);
            cdf.push(acc);
        }
        for c in &mut cdf {
            *c /= acc;
        }
        cdf
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let eps = self.ball.radius();
        if x <= -eps {
            return 0.0;
        }
        if x >= eps {
            return 1.0;
        }
        let cdf = self.node_cdf();
        let pos = (x + eps) / self.step;
        let i = (pos.floor() as usize).min(self.xs.len() - 2);
        let t = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        cdf[i] + t * (cdf[i + 1] - cdf[i])
    }

    /// Probability mass of `[lo, hi]`.
    pub fn mass_between(&self, lo: f64, hi: f64) -> f64 {
        (self.cdf(hi) - self.cdf(lo)).max(0.0)
    }

    fn quantile_with(&self, cdf: &[f64], u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let j = cdf.partition_point(|c| *c < u);
        if j == 0 {
            return self.xs[0];
        }
        if j >= cdf.len() {
            return self.xs[self.xs.len() - 1];
        }
        let (c0, c1) = (cdf[j - 1], cdf[j]);
        let t = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
        self.xs[j - 1] + t * (self.xs[j] - self.xs[j - 1])
    }

    pub fn quantile(&self, u: f64) -> f64 {
        self.quantile_with(&self.node_cdf(), u)
    }

    /// Independent draws by inverse-CDF sampling from the tabulated law.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<f64> {
        let cdf = self.node_cdf();
        (0..n).map(|_| self.quantile_with(&cdf, rng.random::<f64>())).collect()
    }
}

/// `F(θ)` for a one-dimensional ball.
pub fn objective(p: &dyn Potential, gamma: f64, ball: &Ball, theta: &[f64], min_nodes: usize) -> Result<f64> {
    Ok(AdversarialDensity::new(p, gamma, ball, theta, min_nodes)?.objective())
}

/// `∇F(θ)` for a one-dimensional ball.
pub fn objective_grad(p: &dyn Potential, gamma: f64, ball: &Ball, theta: &[f64], min_nodes: usize) -> Result<Vec<f64>> {
    Ok(AdversarialDensity::new(p, gamma, ball, theta, min_nodes)?.objective_grad())
}

/// Tensor-product Simpson version of the density on a two-dimensional ball.
/// Accuracy is limited by the indicator of the disc for the L2 ball; use it
/// for cross-checks at the percent level.
#[derive(Debug, Clone)]
pub struct AdversarialDensity2d {
    xs: Vec<f64>,
    weights: Vec<f64>,
    mask: Vec<bool>,
    dens: Vec<f64>,
    phi: Vec<f64>,
}

impl AdversarialDensity2d {
    pub fn new(p: &dyn Potential, gamma: f64, ball: &Ball, theta: &[f64], nodes_per_axis: usize) -> Result<Self> {
        if ball.dim() != 2 || p.xi_dim() != 2 {
            return Err(Error::Precondition("AdversarialDensity2d needs a two-dimensional ball".into()));
        }
        check_dim("theta", p.theta_dim(), theta.len())?;
        let n = odd_nodes(nodes_per_axis)?;
        let eps = ball.radius();
        let h = 2.0 * eps / (n - 1) as f64;
        let xs: Vec<f64> = (0..n).map(|i| -eps + i as f64 * h).collect();
        let w1 = simpson_weights(n, h);
        let mut weights = Vec::with_capacity(n * n);
        let mut mask = Vec::with_capacity(n * n);
        let mut phi = Vec::with_capacity(n * n);
        for (i, x) in xs.iter().enumerate() {
            for (j, y) in xs.iter().enumerate() {
                let pt = [*x, *y];
                weights.push(w1[i] * w1[j]);
                let inside = ball.contains(&pt);
                mask.push(inside);
                phi.push(if inside { p.value(&pt, theta) } else { 0.0 });
            }
        }
        let shift = phi
            .iter()
            .zip(&mask)
            .filter(|(_, m)| **m)
            .map(|(v, _)| gamma * v)
            .fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = phi
            .iter()
            .zip(&mask)
            .map(|(v, m)| if *m { (gamma * v - shift).exp() } else { 0.0 })
            .collect();
        let z: f64 = raw.iter().zip(&weights).map(|(r, w)| r * w).sum();
        let dens = raw.iter().map(|r| r / z).collect();
        Ok(AdversarialDensity2d {
            xs,
            weights,
            mask,
            dens,
            phi,
        })
    }

    fn integrate(&self, f: impl Fn(usize, usize) -> f64) -> f64 {
        let n = self.xs.len();
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let k = i * n + j;
                if self.mask[k] {
                    acc += self.weights[k] * self.dens[k] * f(i, j);
                }
            }
        }
        acc
    }

    pub fn total_mass(&self) -> f64 {
        self.integrate(|_, _| 1.0)
    }

    pub fn objective(&self) -> f64 {
        let n = self.xs.len();
        self.integrate(|i, j| self.phi[i * n + j])
    }

    pub fn mean(&self) -> [f64; 2] {
        [self.integrate(|i, _| self.xs[i]), self.integrate(|_, j| self.xs[j])]
    }
}

/// Uniformly weighted point set `(1/N)·Σ δ_{ξᵢ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    points: Vec<Vec<f64>>,
}

impl EmpiricalMeasure {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::InvalidInput("empirical measure needs at least one point".into()));
        };
        let d = first.len();
        for p in &points {
            check_dim("measure point", d, p.len())?;
        }
        Ok(EmpiricalMeasure { points })
    }

    /// As [`EmpiricalMeasure::new`], additionally checking every point lies in
    /// `ball` up to `1e-9`.
    pub fn in_ball(points: Vec<Vec<f64>>, ball: &Ball) -> Result<Self> {
        for p in &points {
            check_dim("measure point", ball.dim(), p.len())?;
            if ball.norm_kind().norm(p) > ball.radius() + 1e-9 {
                return Err(Error::InvalidInput("measure point outside the ball".into()));
            }
        }
        Self::new(points)
    }

    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        Self::new(xs.iter().map(|x| vec![*x]).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.points.len() as f64
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for p in &self.points {
            for (a, b) in m.iter_mut().zip(p) {
                *a += b;
            }
        }
        let w = self.weight();
        m.iter_mut().for_each(|v| *v *= w);
        m
    }

    /// Componentwise (population) variance.
    pub fn variance(&self) -> Vec<f64> {
        let m = self.mean();
        let mut v = vec![0.0; self.dim()];
        for p in &self.points {
            for k in 0..m.len() {
                v[k] += (p[k] - m[k]).powi(2);
            }
        }
        let w = self.weight();
        v.iter_mut().for_each(|x| *x *= w);
        v
    }

    fn sorted_scalars(&self) -> Result<Vec<f64>> {
        if self.dim() != 1 {
            return Err(Error::Precondition("one-dimensional measure required".into()));
        }
        let mut xs: Vec<f64> = self.points.iter().map(|p| p[0]).collect();
        xs.sort_by(f64::total_cmp);
        Ok(xs)
    }
}

/// Second argument of [`wasserstein2_1d`].
pub enum Target<'a> {
    Empirical(&'a EmpiricalMeasure),
    Density(&'a AdversarialDensity),
}

/// `W₂` between a one-dimensional empirical measure and another measure, by
/// the monotone (quantile) coupling.
pub fn wasserstein2_1d(a: &EmpiricalMeasure, b: Target<'_>) -> Result<f64> {
    let sq = match b {
        Target::Empirical(b) => wasserstein2_sq_empirical(a, b)?,
        Target::Density(d) => wasserstein2_sq_to_density(a, d)?,
    };
    Ok(sq.max(0.0).sqrt())
}

/// Exact `W₂²` between two one-dimensional empirical measures of arbitrary
/// sizes: `∫₀¹ (F_a⁻¹(u) − F_b⁻¹(u))² du` over merged quantile breakpoints.
pub fn wasserstein2_sq_empirical(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    let xa = a.sorted_scalars()?;
    let xb = b.sorted_scalars()?;
    let (n, m) = (xa.len() as u128, xb.len() as u128);
    // breakpoints i/n and j/m compared as i·m and j·n
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev: u128 = 0;
    let mut acc = 0.0;
    let denom = (n * m) as f64;
    while i < xa.len() && j < xb.len() {
        let next_a = (i as u128 + 1) * m;
        let next_b = (j as u128 + 1) * n;
        let next = next_a.min(next_b);
        acc += (next - prev) as f64 / denom * (xa[i] - xb[j]).powi(2);
        prev = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    Ok(acc)
}

/// `W₂²` between an empirical measure and the tabulated density, using the
/// piecewise-linear grid quantile function; each piece is integrated exactly.
pub fn wasserstein2_sq_to_density(a: &EmpiricalMeasure, d: &AdversarialDensity) -> Result<f64> {
    let xa = a.sorted_scalars()?;
    let cdf = d.node_cdf();
    let xs = d.nodes();
    let n = xa.len();
    let mut acc = 0.0;
    let mut u = 0.0;
    let mut j = 1; // current CDF piece [cdf[j-1], cdf[j]]
    let quantile_at = |j: usize, u: f64| {
        let (c0, c1) = (cdf[j - 1], cdf[j]);
        if c1 > c0 {
            xs[j - 1] + (u - c0) / (c1 - c0) * (xs[j] - xs[j - 1])
        } else {
            xs[j]
        }
    };
    for (i, x) in xa.iter().enumerate() {
        let u_end = (i + 1) as f64 / n as f64;
        while u < u_end {
            while j < cdf.len() - 1 && cdf[j] <= u {
                j += 1;
            }
            let seg_end = u_end.min(cdf[j]).max(u);
            let seg_end = if seg_end <= u { u_end } else { seg_end };
            let q0 = quantile_at(j, u);
            let q1 = quantile_at(j, seg_end);
            let len = seg_end - u;
            let (a0, dq) = (x - q0, q1 - q0);
            acc += len * (a0 * a0 - a0 * dq + dq * dq / 3.0);
            u = seg_end;
        }
    }
    Ok(acc)
}

/// Probability masses of a one-dimensional measure over equal-width bins of
/// `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedMeasure {
    pub lo: f64,
    pub hi: f64,
    pub masses: Vec<f64>,
}

/// Cube-root bin-count rule, capped at 200.
pub fn bin_count_rule(samples: usize) -> usize {
    ((samples as f64).cbrt().ceil() as usize).clamp(1, 200)
}

impl BinnedMeasure {
    fn check(lo: f64, hi: f64, bins: usize) -> Result<()> {
        if !(hi > lo) || bins == 0 {
            return Err(Error::InvalidInput(format!("bad binning [{lo}, {hi}] with {bins} bins")));
        }
        Ok(())
    }

    /// Normalised histogram. Samples outside `[lo, hi]` are clamped into the
    /// end bins.
    pub fn from_samples(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Self> {
        Self::check(lo, hi, bins)?;
        if samples.is_empty() {
            return Err(Error::InvalidInput("histogram of an empty sample".into()));
        }
        let mut counts = vec![0u64; bins];
        let width = (hi - lo) / bins as f64;
        for s in samples {
            let b = (((s - lo) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let total = samples.len() as f64;
        Ok(BinnedMeasure {
            lo,
            hi,
            masses: counts.iter().map(|c| *c as f64 / total).collect(),
        })
    }

    /// Bin masses of the tabulated adversarial density over its ball.
    pub fn from_density(d: &AdversarialDensity, bins: usize) -> Result<Self> {
        let eps = d.ball().radius();
        Self::check(-eps, eps, bins)?;
        let cdf = |k: usize| if k == bins { 1.0 } else { d.cdf(-eps + 2.0 * eps * k as f64 / bins as f64) };
        let masses = (0..bins).map(|k| (cdf(k + 1) - cdf(k)).max(0.0)).collect();
        Ok(BinnedMeasure { lo: -eps, hi: eps, masses })
    }

    /// Bin masses of a (not necessarily normalised) density function,
    /// integrated with Simpson inside each bin and then normalised.
    pub fn from_pdf(f: impl Fn(f64) -> f64, lo: f64, hi: f64, bins: usize) -> Result<Self> {
        Self::check(lo, hi, bins)?;
        let width = (hi - lo) / bins as f64;
        let sub = 33;
        let h = width / (sub - 1) as f64;
        let mut masses: Vec<f64> = (0..bins)
            .map(|k| {
                let a = lo + k as f64 * width;
                let vals: Vec<f64> = (0..sub).map(|i| f(a + i as f64 * h)).collect();
                simpson(&vals, h)
            })
            .collect();
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidInput("density has no mass on the binning range".into()));
        }
        masses.iter_mut().for_each(|m| *m /= total);
        Ok(BinnedMeasure { lo, hi, masses })
    }

    pub fn bins(&self) -> usize {
        self.masses.len()
    }
}

/// Total variation `½·Σ|aₖ − bₖ|` between two measures on the same bins.
pub fn tv_distance_1d(a: &BinnedMeasure, b: &BinnedMeasure) -> Result<f64> {
    if a.bins() != b.bins() || a.lo != b.lo || a.hi != b.hi {
        return Err(Error::InvalidInput(format!(
            "bin mismatch: {} bins on [{}, {}] vs {} bins on [{}, {}]",
            a.bins(),
            a.lo,
            a.hi,
            b.bins(),
            b.lo,
            b.hi
        )));
    }
    Ok(0.5 * a.masses.iter().zip(&b.masses).map(|(x, y)| (x - y).abs()).sum::<f64>())
}
