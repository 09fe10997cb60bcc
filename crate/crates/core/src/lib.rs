//! Bayesian adversarial robustness by coupled particle/parameter dynamics.
//!
//! An attacker is modelled as a Gibbs measure `π(ξ|θ) ∝ exp(γΦ(ξ, θ))`
//! restricted to a norm ball, and the defender minimises
//! `F(θ) = ∫Φ(ξ, θ) π(dξ|θ)`. [`dynamics`] evolves `N` attack particles by
//! projected Langevin ascent and `θ` by gradient descent on the particle
//! estimate of `∇F`.
//!
//! Supporting modules:
//!
//! * [`geometry`]: balls, projections and uniform sampling.
//! * [`potentials`]: energies `Φ` with gradients in both arguments.
//! * [`oracle`]: quadrature ground truth for one-dimensional problems.
//! * [`sampler`]: the projected Euler–Maruyama chain and ergodicity checks.
//! * [`attacks`]: Bayesian, FGSM and PGD attacks with an evaluation harness.
//! * [`models`]: a small MLP, datasets and checkpoints.
//! * [`training`]: robust and plain training loops for classifiers.
//! * [`experiments`]: configuration and the command-line experiment drivers.
//! * [`stats`] and [`plot`]: rate fits, bootstrap intervals and SVG line plots.

pub mod attacks;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod models;
pub mod oracle;
pub mod plot;
pub mod potentials;
pub mod rng;
pub mod sampler;
pub mod stats;
pub mod training;

pub use error::{Error, Result};
pub use geometry::{Ball, NormKind};
pub use potentials::Potential;
pub use sampler::NoiseMode;
