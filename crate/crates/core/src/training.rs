//! Training loops for classifiers: the two particle dynamics plus plain and
//! FGSM-augmented mini-batch SGD as baselines.

use crate::attacks::{evaluate, fgsm_attack};
use crate::dynamics::{run_abram_observed, AbramConfig, Batching, ClassifierFamily, DataSampler, DataSchedule};
use crate::error::{check_dim, Error, Result};
use crate::geometry::Ball;
use crate::models::{Classifier, Dataset, Mlp};
use crate::potentials::loss_potential;
use crate::sampler::NoiseMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainAlgorithm {
    /// One datum per outer step shared by all particles.
    Abram,
    /// One datum per particle.
    Minibatch,
    /// SGD on FGSM-perturbed batches.
    FgsmBaseline,
    /// Plain SGD.
    Sgd,
}

impl TrainAlgorithm {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "abram" => Ok(TrainAlgorithm::Abram),
            "minibatch" => Ok(TrainAlgorithm::Minibatch),
            "fgsm-baseline" | "fgsm" => Ok(TrainAlgorithm::FgsmBaseline),
            "sgd" => Ok(TrainAlgorithm::Sgd),
            other => Err(Error::Config(format!("unknown training algorithm '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TrainAlgorithm::Abram => "abram",
            TrainAlgorithm::Minibatch => "minibatch",
            TrainAlgorithm::FgsmBaseline => "fgsm-baseline",
            TrainAlgorithm::Sgd => "sgd",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub algorithm: TrainAlgorithm,
    pub epochs: usize,
    /// Particles per outer step for the dynamics, batch size for SGD.
    pub batch: usize,
    /// Parameter learning rate.
    pub lr: f64,
    pub gamma: f64,
    /// Attack ball used during training.
    pub ball: Ball,
    /// Inner Langevin step of the training attack.
    pub xi_step: f64,
    pub inner_steps: usize,
    pub noise_mode: NoiseMode,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || self.inner_steps == 0 {
            return Err(Error::Config("epochs, batch and inner_steps must be at least 1".into()));
        }
        for (name, v) in [("lr", self.lr), ("gamma", self.gamma), ("xi_step", self.xi_step)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Outer steps per pass over `k` data.
    pub fn steps_per_epoch(&self, k: usize) -> usize {
        match self.algorithm {
            TrainAlgorithm::Abram => k,
            _ => k.div_ceil(self.batch),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub theta: Vec<f64>,
    /// Benign training accuracy after each epoch.
    pub epoch_accuracy: Vec<f64>,
}

/// Trains `model` from its seeded initialisation.
pub fn train(model: &Mlp, data: &Dataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    check_dim("features", model.input_dim(), data.dim())?;
    check_dim("attack ball", data.dim(), cfg.ball.dim())?;
    if data.num_classes > model.num_classes() {
        return Err(Error::InvalidInput(format!(
            "dataset has {} classes, model only {}",
            data.num_classes,
            model.num_classes()
        )));
    }
    let theta0 = model.init_params(cfg.seed);
    let per_epoch = cfg.steps_per_epoch(data.len());
    let mut epoch_accuracy = Vec::with_capacity(cfg.epochs);
    match cfg.algorithm {
        TrainAlgorithm::Abram | TrainAlgorithm::Minibatch => {
            let mut acfg = AbramConfig::new(
                cfg.gamma,
                cfg.ball,
                cfg.lr,
                cfg.batch,
                cfg.inner_steps,
                per_epoch * cfg.epochs,
                cfg.noise_mode,
                cfg.seed,
                theta0,
            )?;
            acfg.xi_step = Some(cfg.xi_step);
            acfg.schedule = DataSchedule::Epochs;
            acfg.record_theta = false;
            let batching = if cfg.algorithm == TrainAlgorithm::Abram {
                Batching::SingleDatum
            } else {
                Batching::PerParticle
            };
            let family = ClassifierFamily { model, data };
            let run = run_abram_observed(&acfg, &family, batching, &mut |state| {
                if state.iteration % per_epoch == 0 {
                    epoch_accuracy.push(evaluate(model, &state.theta, data, None)?);
                }
                Ok(())
            })?;
            Ok(TrainReport {
                theta: run.theta,
                epoch_accuracy,
            })
        }
        TrainAlgorithm::Sgd | TrainAlgorithm::FgsmBaseline => {
            let mut theta = theta0;
            let mut sampler = DataSampler::new(DataSchedule::Epochs, data.len(), cfg.seed);
            let mut batch = vec![0usize; cfg.batch];
            for _ in 0..cfg.epochs {
                for _ in 0..per_epoch {
                    batch.iter_mut().for_each(|k| *k = sampler.next_index());
                    let grad = if cfg.algorithm == TrainAlgorithm::Sgd {
                        model.batch_loss_grad(&theta, data, &batch).1
                    } else {
                        let mut g = vec![0.0; theta.len()];
                        for &k in &batch {
                            let p = loss_potential(model, &data.features[k], data.labels[k])?;
                            let zero = vec![0.0; data.dim()];
                            let xi = fgsm_attack(&zero, &p, &theta, &cfg.ball)?;
                            let adv: Vec<f64> = data.features[k].iter().zip(&xi).map(|(a, b)| a + b).collect();
                            let (_, gk) = model.loss_grad_params(&theta, &adv, data.labels[k]);
                            g.iter_mut().zip(&gk).for_each(|(a, b)| *a += b);
                        }
                        let inv = 1.0 / batch.len() as f64;
                        g.iter_mut().for_each(|v| *v *= inv);
                        g
                    };
                    theta.iter_mut().zip(&grad).for_each(|(t, g)| *t -= cfg.lr * g);
                    if theta.iter().any(|t| !t.is_finite()) {
                        return Err(Error::Diverged {
                            step: epoch_accuracy.len() * per_epoch,
                            what: "parameter became non-finite".into(),
                        });
                    }
                }
                epoch_accuracy.push(evaluate(model, &theta, data, None)?);
            }
            Ok(TrainReport { theta, epoch_accuracy })
        }
    }
}
