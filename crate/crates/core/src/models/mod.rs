//! Desk-scale differentiable classifiers.
//!
//! The only shipped family is a fully connected `tanh` network with a softmax
//! cross-entropy head, with hand-written backward passes for both the
//! parameters and the input.
//! Convolutional image models are not provided: the layer configuration
//! needed to match published MNIST numbers is underdetermined, and an MLP
//! keeps every backward pass checkable by finite differences.

mod checkpoint;
mod data;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use data::{load_csv, load_idx, make_blobs, parse_idx_images, parse_idx_labels, save_csv, Dataset};

use rand_distr::{Distribution, Normal};

use crate::error::{check_dim, Error, Result};
use crate::rng;

/// A classifier whose loss is differentiable in its parameters and input.
pub trait Classifier: Send + Sync {
    fn input_dim(&self) -> usize;
    fn num_classes(&self) -> usize;
    fn num_params(&self) -> usize;
    fn logits(&self, theta: &[f64], input: &[f64]) -> Vec<f64>;

    fn loss(&self, theta: &[f64], input: &[f64], label: usize) -> f64 {
        cross_entropy(&self.logits(theta, input), label)
    }

    /// Loss and its gradient with respect to the input.
    fn loss_grad_input(&self, theta: &[f64], input: &[f64], label: usize) -> (f64, Vec<f64>);

    /// Loss and its gradient with respect to the parameters.
    fn loss_grad_params(&self, theta: &[f64], input: &[f64], label: usize) -> (f64, Vec<f64>);

    fn predict(&self, theta: &[f64], input: &[f64]) -> usize {
        argmax(&self.logits(theta, input))
    }
}

pub fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, x)| if *x > acc.1 { (i, *x) } else { acc })
        .0
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub fn cross_entropy(logits: &[f64], label: usize) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    lse - logits[label]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Tanh => 0,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Activation::Tanh),
            t => Err(Error::InvalidInput(format!("unknown activation tag {t}"))),
        }
    }
}

/// Layer widths `[input, hidden.., classes]` and the hidden activation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    pub sizes: Vec<usize>,
    pub activation: Activation,
}

impl Architecture {
    pub fn new(sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|s| *s == 0) {
            return Err(Error::InvalidInput(format!("invalid layer sizes {sizes:?}")));
        }
        if *sizes.last().unwrap() < 2 {
            return Err(Error::InvalidInput("a classifier needs at least two classes".into()));
        }
        Ok(Architecture {
            sizes,
            activation: Activation::Tanh,
        })
    }

    pub fn parse(s: &str) -> Result<Self> {
        let sizes = s
            .trim_matches(|c| c == '[' || c == ']')
            .split([',', 'x', ' '])
            .filter(|t| !t.is_empty())
            .map(|t| t.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad layer size '{t}' in '{s}'"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(sizes)
    }

    pub fn num_params(&self) -> usize {
        self.sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// Flat parameter vector together with the architecture it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub theta: Vec<f64>,
    pub version: u32,
}

impl ModelParams {
    pub fn new(arch: Architecture, theta: Vec<f64>) -> Result<Self> {
        check_dim("parameter vector", arch.num_params(), theta.len())?;
        Ok(ModelParams {
            arch,
            theta,
            version: CHECKPOINT_VERSION,
        })
    }
}

/// Fully connected network: affine → tanh → … → affine → softmax.
///
/// Parameters are laid out layer by layer, each as a row-major weight
/// matrix `(out × in)` followed by the bias.
#[derive(Debug, Clone)]
pub struct Mlp {
    arch: Architecture,
    offsets: Vec<usize>,
}

pub fn mlp(arch: Architecture) -> Mlp {
    let mut offsets = Vec::with_capacity(arch.sizes.len());
    let mut off = 0;
    for w in arch.sizes.windows(2) {
        offsets.push(off);
        off += w[0] * w[1] + w[1];
    }
    offsets.push(off);
    Mlp { arch, offsets }
}

impl Mlp {
    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    fn layers(&self) -> usize {
        self.arch.sizes.len() - 1
    }

    /// Gaussian initialisation with variance `1/fan_in`, zero biases.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng::stream(seed, rng::INIT_STREAM);
        let mut theta = vec![0.0; self.arch.num_params()];
        for l in 0..self.layers() {
            let (fan_in, fan_out) = (self.arch.sizes[l], self.arch.sizes[l + 1]);
            let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("valid std");
            let off = self.offsets[l];
            for w in &mut theta[off..off + fan_in * fan_out] {
                *w = normal.sample(&mut rng);
            }
        }
        theta
    }

    /// Activations of every layer, input first, logits last.
    fn forward(&self, theta: &[f64], input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers() + 1);
        acts.push(input.to_vec());
        for l in 0..self.layers() {
            let (n_in, n_out) = (self.arch.sizes[l], self.arch.sizes[l + 1]);
            let off = self.offsets[l];
            let w = &theta[off..off + n_in * n_out];
            let b = &theta[off + n_in * n_out..off + n_in * n_out + n_out];
            let prev = &acts[l];
            let mut z: Vec<f64> = (0..n_out)
                .map(|o| b[o] + w[o * n_in..(o + 1) * n_in].iter().zip(prev).map(|(a, x)| a * x).sum::<f64>())
                .collect();
            if l + 1 < self.layers() {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }

    /// Backpropagates the cross-entropy error. Writes parameter gradients
    /// into `grad_params` when given and returns the gradient with respect to
    /// the input when `want_input` is set.
    fn backward(
        &self,
        theta: &[f64],
        acts: &[Vec<f64>],
        label: usize,
        mut grad_params: Option<&mut [f64]>,
        want_input: bool,
    ) -> Option<Vec<f64>> {
        let layers = self.layers();
        let mut delta = softmax(&acts[layers]);
        delta[label] -= 1.0;
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.arch.sizes[l], self.arch.sizes[l + 1]);
            let off = self.offsets[l];
            let prev = &acts[l];
            if let Some(g) = grad_params.as_deref_mut() {
                for o in 0..n_out {
                    let d = delta[o];
                    let row = &mut g[off + o * n_in..off + (o + 1) * n_in];
                    for (gi, x) in row.iter_mut().zip(prev) {
                        *gi += d * x;
                    }
                    g[off + n_in * n_out + o] += d;
                }
            }
            if l == 0 && !want_input {
                return None;
            }
            let w = &theta[off..off + n_in * n_out];
            let mut back = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (bi, wi) in back.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *bi += d * wi;
                }
            }
            if l > 0 {
                for (bi, a) in back.iter_mut().zip(prev) {
                    *bi *= 1.0 - a * a;
                }
            }
            delta = back;
        }
        Some(delta)
    }

    /// Mean loss and mean parameter gradient over a batch of data indices.
    pub fn batch_loss_grad(&self, theta: &[f64], data: &Dataset, indices: &[usize]) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; theta.len()];
        let mut loss = 0.0;
        for &k in indices {
            let acts = self.forward(theta, &data.features[k]);
            loss += cross_entropy(&acts[self.layers()], data.labels[k]);
            self.backward(theta, &acts, data.labels[k], Some(&mut grad), false);
        }
        let inv = 1.0 / indices.len() as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        (loss * inv, grad)
    }
}

impl Classifier for Mlp {
    fn input_dim(&self) -> usize {
        self.arch.sizes[0]
    }

    fn num_classes(&self) -> usize {
        *self.arch.sizes.last().unwrap()
    }

    fn num_params(&self) -> usize {
        self.arch.num_params()
    }

    fn logits(&self, theta: &[f64], input: &[f64]) -> Vec<f64> {
        self.forward(theta, input).pop().unwrap()
    }

    fn loss_grad_input(&self, theta: &[f64], input: &[f64], label: usize) -> (f64, Vec<f64>) {
        let acts = self.forward(theta, input);
        let loss = cross_entropy(&acts[self.layers()], label);
        (loss, self.backward(theta, &acts, label, None, true).unwrap())
    }

    fn loss_grad_params(&self, theta: &[f64], input: &[f64], label: usize) -> (f64, Vec<f64>) {
        let acts = self.forward(theta, input);
        let loss = cross_entropy(&acts[self.layers()], label);
        let mut grad = vec![0.0; theta.len()];
        self.backward(theta, &acts, label, Some(&mut grad), false);
        (loss, grad)
    }
}

/// Mean cross-entropy over a dataset.
pub fn mean_loss(model: &dyn Classifier, theta: &[f64], data: &Dataset) -> f64 {
    data.features
        .iter()
        .zip(&data.labels)
        .map(|(x, z)| model.loss(theta, x, *z))
        .sum::<f64>()
        / data.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::{grad_check, loss_potential};
    use rand::Rng;

    #[test]
    fn linear_softmax_with_zero_weights_has_log2_loss() {
        let m = mlp(Architecture::new(vec![5, 2]).unwrap());
        let theta = vec![0.0; m.num_params()];
        let mut rng = rng::stream(1, 0);
        for _ in 0..10 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            assert!((m.loss(&theta, &x, 1) - std::f64::consts::LN_2).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_is_a_distribution_and_loss_nonnegative() {
        let m = mlp(Architecture::new(vec![4, 8, 3]).unwrap());
        let theta = m.init_params(3);
        let mut rng = rng::stream(2, 0);
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let p = softmax(&m.logits(&theta, &x));
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(p.iter().all(|v| *v >= 0.0));
            assert!(m.loss(&theta, &x, 0) >= 0.0);
        }
        assert!(cross_entropy(&[800.0, 0.0, 0.0], 0) == 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for sizes in [vec![4, 8, 3], vec![3, 2], vec![6, 5, 4, 2]] {
            let m = mlp(Architecture::new(sizes.clone()).unwrap());
            let mut rng = rng::stream(10, 0);
            for trial in 0..20 {
                let theta: Vec<f64> = m.init_params(trial);
                let y: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(0.0..1.0)).collect();
                let label = rng.random_range(0..*sizes.last().unwrap());
                let p = loss_potential(&m, &y, label).unwrap();
                let xi: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-0.1..0.1)).collect();
                let r = grad_check(&p, &xi, &theta, 1e-4).unwrap();
                assert!(r.max() < 1e-5, "{sizes:?}: {r:?}");
            }
        }
    }

    #[test]
    fn architecture_parsing() {
        assert_eq!(Architecture::parse("[784,64,3]").unwrap().sizes, vec![784, 64, 3]);
        assert_eq!(Architecture::parse("4x8x3").unwrap().num_params(), 4 * 8 + 8 + 8 * 3 + 3);
        assert!(Architecture::parse("4").is_err());
        assert!(Architecture::parse("4,1").is_err());
    }
}
