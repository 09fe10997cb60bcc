//! Norm balls: membership, nearest-point projection, boundary normals and
//! uniform sampling.
//!
//! Both the Euclidean ball and the max-norm box are supported. The theory
//! experiments run on the Euclidean ball, the learning experiments on the box
//! (the usual `‖ξ‖∞ ≤ ε` image-attack convention). In one dimension the two
//! coincide. No upper bound is imposed on the radius, although the
//! convergence theory assumes `ε < 1`.

use rand::Rng;

use crate::error::{check_dim, Error, Result};
use crate::rng::fill_standard_normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    L2,
    LInf,
}

impl NormKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" | "2" => Ok(NormKind::L2),
            "linf" | "inf" | "l_inf" => Ok(NormKind::LInf),
            other => Err(Error::Config(format!("unknown norm '{other}' (expected l2 or linf)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NormKind::L2 => "l2",
            NormKind::LInf => "linf",
        }
    }

    pub fn norm(self, x: &[f64]) -> f64 {
        match self {
            NormKind::L2 => l2_norm(x),
            NormKind::LInf => x.iter().fold(0.0_f64, |m, v| m.max(v.abs())),
        }
    }
}

pub fn l2_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// The constraint set `{ξ : ‖ξ‖ ≤ radius}` in `dim` dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ball {
    radius: f64,
    norm: NormKind,
    dim: usize,
}

impl Ball {
    pub fn new(radius: f64, norm: NormKind, dim: usize) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidInput(format!("ball radius must be positive, got {radius}")));
        }
        if dim == 0 {
            return Err(Error::InvalidInput("ball dimension must be positive".into()));
        }
        Ok(Ball { radius, norm, dim })
    }

    pub fn l2(radius: f64, dim: usize) -> Result<Self> {
        Self::new(radius, NormKind::L2, dim)
    }

    pub fn linf(radius: f64, dim: usize) -> Result<Self> {
        Self::new(radius, NormKind::LInf, dim)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn norm_kind(&self) -> NormKind {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Same shape, different dimension.
    pub fn with_dim(&self, dim: usize) -> Result<Self> {
        Self::new(self.radius, self.norm, dim)
    }

    /// Exact membership test, no tolerance.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim && self.norm.norm(x) <= self.radius
    }

    /// Nearest point of the ball to `x`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("point", self.dim, x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("cannot project a non-finite point".into()));
        }
        let mut out = x.to_vec();
        self.project_in_place(&mut out);
        Ok(out)
    }

    /// In-place projection for hot loops. The caller guarantees a finite
    /// point of the right dimension.
    pub fn project_in_place(&self, x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        match self.norm {
            NormKind::LInf => {
                for v in x.iter_mut() {
                    *v = v.clamp(-self.radius, self.radius);
                }
            }
            NormKind::L2 => {
                let n = l2_norm(x);
                if n <= self.radius {
                    return;
                }
                let scale = self.radius / n;
                for v in x.iter_mut() {
                    *v *= scale;
                }
                // Rescaling can land a few ulps outside; shrink until the exact
                // membership test passes so projection stays idempotent.
                let mut shrink = 1.0 - f64::EPSILON;
                while l2_norm(x) > self.radius {
                    for v in x.iter_mut() {
                        *v *= shrink;
                    }
                    shrink *= shrink;
                }
            }
        }
    }

    /// Inner unit normal `-x/‖x‖` at a boundary point of the Euclidean ball.
    pub fn inner_normal(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("point", self.dim, x.len())?;
        if self.norm != NormKind::L2 {
            return Err(Error::Precondition("inner normals are only defined for the L2 ball".into()));
        }
        let n = l2_norm(x);
        if (n - self.radius).abs() > 1e-9 {
            return Err(Error::Precondition(format!(
                "point with norm {n} is not on the boundary of radius {}",
                self.radius
            )));
        }
        Ok(x.iter().map(|v| -v / n).collect())
    }

    /// Uniform draw from the ball.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.sample_uniform_into(rng, &mut out);
        out
    }

    pub fn sample_uniform_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self.norm {
            NormKind::LInf => {
                for v in out.iter_mut() {
                    *v = rng.random_range(-self.radius..=self.radius);
                }
            }
            NormKind::L2 => {
                loop {
                    fill_standard_normal(rng, out);
                    if l2_norm(out) > 0.0 {
                        break;
                    }
                }
                let n = l2_norm(out);
                let u: f64 = rng.random();
                let r = self.radius * u.powf(1.0 / self.dim as f64);
                for v in out.iter_mut() {
                    *v *= r / n;
                }
                self.project_in_place(out);
            }
        }
    }
}
