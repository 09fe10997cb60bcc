//! Energies `Φ(ξ, θ)` with analytic gradients in both arguments.
//!
//! `ξ` is the attack (a point of the perturbation ball) and `θ` the model
//! parameter. The attacker ascends `Φ` in `ξ`, the defender descends the
//! induced objective in `θ`.

use rand::Rng;

use crate::dynamics::g_estimate;
use crate::error::{check_dim, Result};
use crate::geometry::{l2_norm, Ball};
use crate::models::Classifier;
use crate::oracle::EmpiricalMeasure;
use crate::rng::stream;

/// An energy with gradients in the perturbation and in the parameter.
pub trait Potential: Send + Sync {
    fn xi_dim(&self) -> usize;
    fn theta_dim(&self) -> usize;
    fn value(&self, xi: &[f64], theta: &[f64]) -> f64;
    fn grad_xi(&self, xi: &[f64], theta: &[f64]) -> Vec<f64>;
    fn grad_theta(&self, xi: &[f64], theta: &[f64]) -> Vec<f64>;

    /// `Φ` and `∇_θΦ` together; models override this to share a forward pass.
    fn value_and_grad_theta(&self, xi: &[f64], theta: &[f64]) -> (f64, Vec<f64>) {
        (self.value(xi, theta), self.grad_theta(xi, theta))
    }
}

impl<P: Potential + ?Sized> Potential for &P {
    fn xi_dim(&self) -> usize {
        (**self).xi_dim()
    }
    fn theta_dim(&self) -> usize {
        (**self).theta_dim()
    }
    fn value(&self, xi: &[f64], theta: &[f64]) -> f64 {
        (**self).value(xi, theta)
    }
    fn grad_xi(&self, xi: &[f64], theta: &[f64]) -> Vec<f64> {
        (**self).grad_xi(xi, theta)
    }
    fn grad_theta(&self, xi: &[f64], theta: &[f64]) -> Vec<f64> {
        (**self).grad_theta(xi, theta)
    }
    fn value_and_grad_theta(&self, xi: &[f64], theta: &[f64]) -> (f64, Vec<f64>) {
        (**self).value_and_grad_theta(xi, theta)
    }
}

impl<P: Potential + ?Sized> Potential for Box<P> {
    fn xi_dim(&self) -> usize {
        (**self).xi_dim()
    }
    fn theta_dim(&self) -> usize {
        (**self).theta_dim()
    }
    fn value(&self, xi: &[f64], theta: &[f64]) -> f64 {
        (**self).value(xi, theta)
    }
    fn grad_xi(&self, xi: &[f64], theta: &[f64]) -> Vec<f64> {
        (**self).grad_xi(xi, theta)
    }
    fn grad_theta(&self, xi: &[f64], theta: &[f64]) -> Vec<f64> {
        (**self).grad_theta(xi, theta)
    }
    fn value_and_grad_theta(&self, xi: &[f64], theta: &[f64]) -> (f64, Vec<f64>) {
        (**self).value_and_grad_theta(xi, theta)
    }
}

pub fn check_dims(p: &dyn Potential, xi: &[f64], theta: &[f64]) -> Result<()> {
    check_dim("xi", p.xi_dim(), xi.len())?;
    check_dim("theta", p.theta_dim(), theta.len())
}

/// `Φ(ξ, θ) = (ξ − c)²/2`, independent of `θ` (one-dimensional `θ` slot).
#[derive(Debug, Clone, Copy)]
pub struct ShiftedQuadratic1d {
    pub c: f64,
}

pub fn shifted_quadratic_1d(c: f64) -> ShiftedQuadratic1d {
    ShiftedQuadratic1d { c }
}

impl Potential for ShiftedQuadratic1d {
    fn xi_dim(&self) -> usize {
        1
    }
    fn theta_dim(&self) -> usize {
        1
    }
    fn value(&self, xi: &[f64], _theta: &[f64]) -> f64 {
        0.5 * (xi[0] - self.c).powi(2)
    }
    fn grad_xi(&self, xi: &[f64], _theta: &[f64]) -> Vec<f64> {
        vec![xi[0] - self.c]
    }
    fn grad_theta(&self, _xi: &[f64], _theta: &[f64]) -> Vec<f64> {
        vec![0.0]
    }
}

/// `Φ(ξ, θ) = (ξ + θ)²/2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CoupledQuadratic1d;

pub fn coupled_quadratic_1d() -> CoupledQuadratic1d {
    CoupledQuadratic1d
}

impl Potential for CoupledQuadratic1d {
    fn xi_dim(&self) -> usize {
        1
    }
    fn theta_dim(&self) -> usize {
        1
    }
    fn value(&self, xi: &[f64], theta: &[f64]) -> f64 {
        0.5 * (xi[0] + theta[0]).powi(2)
    }
    fn grad_xi(&self, xi: &[f64], theta: &[f64]) -> Vec<f64> {
        vec![xi[0] + theta[0]]
    }
    fn grad_theta(&self, xi: &[f64], theta: &[f64]) -> Vec<f64> {
        vec![xi[0] + theta[0]]
    }
}

/// `Φ(ξ, θ) = ‖ξ − θ‖²`.
#[derive(Debug, Clone, Copy)]
pub struct LinearQuadratic {
    pub dim: usize,
}

pub fn linear_quadratic(dim: usize) -> LinearQuadratic {
    LinearQuadratic { dim }
}

impl Potential for LinearQuadratic {
    fn xi_dim(&self) -> usize {
        self.dim
    }
    fn theta_dim(&self) -> usize {
        self.dim
    }
    fn value(&self, xi: &[f64], theta: &[f64]) -> f64 {
        xi.iter().zip(theta).map(|(a, b)| (a - b) * (a - b)).sum()
    }
    fn grad_xi(&self, xi: &[f64], theta: &[f64]) -> Vec<f64> {
        xi.iter().zip(theta).map(|(a, b)| 2.0 * (a - b)).collect()
    }
    fn grad_theta(&self, xi: &[f64], theta: &[f64]) -> Vec<f64> {
        xi.iter().zip(theta).map(|(a, b)| 2.0 * (b - a)).collect()
    }
}

/// `Φ ≡ 0`; the frozen chain becomes a projected random walk.
#[derive(Debug, Clone, Copy)]
pub struct ZeroPotential {
    pub xi_dim: usize,
    pub theta_dim: usize,
}

impl Potential for ZeroPotential {
    fn xi_dim(&self) -> usize {
        self.xi_dim
    }
    fn theta_dim(&self) -> usize {
        self.theta_dim
    }
    fn value(&self, _xi: &[f64], _theta: &[f64]) -> f64 {
        0.0
    }
    fn grad_xi(&self, _xi: &[f64], _theta: &[f64]) -> Vec<f64> {
        vec![0.0; self.xi_dim]
    }
    fn grad_theta(&self, _xi: &[f64], _theta: &[f64]) -> Vec<f64> {
        vec![0.0; self.theta_dim]
    }
}

/// Smooth radial cut-off: `m(ξ) = ξ·s(‖ξ‖)` with `s ≡ 1` on `[0, eps]`,
/// `s ≡ 0` on `[1.9·eps, ∞)` and a cubic Hermite ramp in between.
#[derive(Debug, Clone, Copy)]
pub struct Mollifier {
    pub eps: f64,
}

impl Mollifier {
    pub fn new(eps: f64) -> Self {
        Mollifier { eps }
    }

    const RAMP_END: f64 = 1.9;

    /// Returns `(s(r), s'(r))`.
    fn profile(&self, r: f64) -> (f64, f64) {
        let width = (Self::RAMP_END - 1.0) * self.eps;
        if r <= self.eps {
            (1.0, 0.0)
        } else if r >= Self::RAMP_END * self.eps {
            (0.0, 0.0)
        } else {
            let t = (r - self.eps) / width;
            (1.0 - t * t * (3.0 - 2.0 * t), -6.0 * t * (1.0 - t) / width)
        }
    }

    pub fn eval(&self, xi: &[f64]) -> Vec<f64> {
        let (s, _) = self.profile(l2_norm(xi));
        xi.iter().map(|v| v * s).collect()
    }

    /// Row-major `d×d` Jacobian `s·I + s'(r)/r · ξξᵀ`.
    pub fn jacobian(&self, xi: &[f64]) -> Vec<f64> {
        let d = xi.len();
        let r = l2_norm(xi);
        let (s, ds) = self.profile(r);
        let coef = if r > 0.0 { ds / r } else { 0.0 };
        let mut jac = vec![0.0; d * d];
        for a in 0..d {
            for b in 0..d {
                jac[a * d + b] = coef * xi[a] * xi[b] + if a == b { s } else { 0.0 };
            }
        }
        jac
    }
}

/// `Φ̂(ξ, θ) = ‖m(ξ) − θ‖²`; satisfies a Neumann condition on the boundary of
/// the `2·eps` ball because `m` vanishes near it.
#[derive(Debug, Clone, Copy)]
pub struct MollifiedQuadratic {
    pub dim: usize,
    pub mollifier: Mollifier,
}

pub fn mollified_quadratic(dim: usize, eps: f64) -> MollifiedQuadratic {
    MollifiedQuadratic {
        dim,
        mollifier: Mollifier::new(eps),
    }
}

impl Potential for MollifiedQuadratic {
    fn xi_dim(&self) -> usize {
        self.dim
    }
    fn theta_dim(&self) -> usize {
        self.dim
    }
    fn value(&self, xi: &[f64], theta: &[f64]) -> f64 {
        let m = self.mollifier.eval(xi);
        m.iter().zip(theta).map(|(a, b)| (a - b) * (a - b)).sum()
    }
    fn grad_xi(&self, xi: &[f64], theta: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let m = self.mollifier.eval(xi);
        let jac = self.mollifier.jacobian(xi);
        (0..d)
            .map(|b| (0..d).map(|a| 2.0 * jac[a * d + b] * (m[a] - theta[a])).sum())
            .collect()
    }
    fn grad_theta(&self, xi: &[f64], theta: &[f64]) -> Vec<f64> {
        let m = self.mollifier.eval(xi);
        m.iter().zip(theta).map(|(a, b)| 2.0 * (b - a)).collect()
    }
}

/// `Φ(ξ, θ) = ℓ(g(y + ξ | θ), z)` for one labelled datum.
pub struct LossPotential<'a, M: Classifier + ?Sized> {
    model: &'a M,
    input: &'a [f64],
    label: usize,
}

pub fn loss_potential<'a, M: Classifier + ?Sized>(
    model: &'a M,
    input: &'a [f64],
    label: usize,
) -> Result<LossPotential<'a, M>> {
    check_dim("input", model.input_dim(), input.len())?;
    if label >= model.num_classes() {
        return Err(crate::error::Error::InvalidInput(format!(
            "label {label} out of range for {} classes",
            model.num_classes()
        )));
    }
    Ok(LossPotential { model, input, label })
}

impl<M: Classifier + ?Sized> LossPotential<'_, M> {
    fn shifted(&self, xi: &[f64]) -> Vec<f64> {
        self.input.iter().zip(xi).map(|(y, x)| y + x).collect()
    }
}

impl<M: Classifier + ?Sized> Potential for LossPotential<'_, M> {
    fn xi_dim(&self) -> usize {
        self.model.input_dim()
    }
    fn theta_dim(&self) -> usize {
        self.model.num_params()
    }
    fn value(&self, xi: &[f64], theta: &[f64]) -> f64 {
        self.model.loss(theta, &self.shifted(xi), self.label)
    }
    fn grad_xi(&self, xi: &[f64], theta: &[f64]) -> Vec<f64> {
        self.model.loss_grad_input(theta, &self.shifted(xi), self.label).1
    }
    fn grad_theta(&self, xi: &[f64], theta: &[f64]) -> Vec<f64> {
        self.model.loss_grad_params(theta, &self.shifted(xi), self.label).1
    }
    fn value_and_grad_theta(&self, xi: &[f64], theta: &[f64]) -> (f64, Vec<f64>) {
        self.model.loss_grad_params(theta, &self.shifted(xi), self.label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err_xi: f64,
    pub max_rel_err_theta: f64,
}

impl GradCheckReport {
    pub fn max(&self) -> f64 {
        self.max_rel_err_xi.max(self.max_rel_err_theta)
    }
}

/// Compares both analytic gradients against five-point centred differences
/// of `value` with step `h_fd`. Componentwise relative errors use a floor of
/// `1e-6` in the denominator so vanishing components do not blow up.
pub fn grad_check(p: &dyn Potential, xi: &[f64], theta: &[f64], h_fd: f64) -> Result<GradCheckReport> {
    check_dims(p, xi, theta)?;
    let gx = p.grad_xi(xi, theta);
    let gt = p.grad_theta(xi, theta);
    let fd = |f: &dyn Fn(&[f64]) -> f64, at: &[f64], k: usize| {
        let mut x = at.to_vec();
        let mut eval = |off: f64| {
            x[k] = at[k] + off;
            f(&x)
        };
        let (p1, m1, p2, m2) = (eval(h_fd), eval(-h_fd), eval(2.0 * h_fd), eval(-2.0 * h_fd));
        (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h_fd)
    };
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
    let max_rel_err_xi = (0..xi.len())
        .map(|k| rel(gx[k], fd(&|x| p.value(x, theta), xi, k)))
        .fold(0.0, f64::max);
    let max_rel_err_theta = (0..theta.len())
        .map(|k| rel(gt[k], fd(&|t| p.value(xi, t), theta, k)))
        .fold(0.0, f64::max);
    Ok(GradCheckReport {
        max_rel_err_xi,
        max_rel_err_theta,
    })
}

/// Empirical strong-convexity constant of `θ ↦ G(θ, ν)`:
/// the minimum of `⟨G(θ,ν) − G(θ̃,ν), θ − θ̃⟩ / (2‖θ − θ̃‖²)` over random
/// parameter pairs from `theta_region` and random point masses `ν` in
/// `xi_ball`.
///
/// The dynamics never project `θ`, so the constant is only informative on
/// the bounded region the parameter actually visits.
pub fn convexity_diagnostic(
    p: &dyn Potential,
    xi_ball: &Ball,
    theta_region: &Ball,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    check_dim("xi ball", p.xi_dim(), xi_ball.dim())?;
    check_dim("theta region", p.theta_dim(), theta_region.dim())?;
    let mut rng = stream(seed, 0);
    let mut lambda = f64::INFINITY;
    for _ in 0..samples {
        let a = theta_region.sample_uniform(&mut rng);
        let b = theta_region.sample_uniform(&mut rng);
        let gap: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let gap_sq: f64 = gap.iter().map(|v| v * v).sum();
        if gap_sq == 0.0 {
            continue;
        }
        let point = if rng.random_bool(0.5) {
            xi_ball.sample_uniform(&mut rng)
        } else {
            // include boundary atoms, where mollified potentials are flattest
            let mut x = xi_ball.sample_uniform(&mut rng);
            let scale = xi_ball.radius() / xi_ball.norm_kind().norm(&x).max(f64::MIN_POSITIVE);
            x.iter_mut().for_each(|v| *v *= scale);
            xi_ball.project_in_place(&mut x);
            x
        };
        let nu = EmpiricalMeasure::new(vec![point])?;
        let ga = g_estimate(&a, &nu, p, 1.0)?;
        let gb = g_estimate(&b, &nu, p, 1.0)?;
        let inner: f64 = ga.iter().zip(&gb).zip(&gap).map(|((u, v), d)| (u - v) * d).sum();
        lambda = lambda.min(inner / (2.0 * gap_sq));
    }
    Ok(lambda)
}
