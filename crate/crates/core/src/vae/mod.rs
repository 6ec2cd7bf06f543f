//! Convolutional VAE for 28×28 single-channel images with a 2-D latent.
//!
//! ```text
//! encoder: 1×28×28 ─conv 32, s2─▶ 32×14×14 ─conv 64, s2─▶ 64×7×7 ─dense─▶ μ ‖ log σ²
//! decoder: z ─dense─▶ 32×7×7 ─deconv 64, s2─▶ 64×14×14 ─deconv 32, s2─▶ 32×28×28 ─deconv 1─▶ logits
//! ```
//!
//! All kernels are 3×3 with 'same' padding and every hidden layer uses ReLU.

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::losses::LatentDistribution;
use crate::tensor::{Float, Padding, Tensor};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Fingerprint};

pub const IMAGE_SIDE: usize = 28;
pub const LATENT_DIM: usize = 2;
const FLAT: usize = 64 * 7 * 7;
const SEED_SHAPE: [usize; 3] = [32, 7, 7];

/// Name and shape of every parameter tensor, in storage order.
pub const PARAM_SPECS: [(&str, &[usize]); 14] = [
    ("encoder.conv1.kernel", &[32, 1, 3, 3]),
    ("encoder.conv1.bias", &[32]),
    ("encoder.conv2.kernel", &[64, 32, 3, 3]),
    ("encoder.conv2.bias", &[64]),
    ("encoder.dense.kernel", &[FLAT, 2 * LATENT_DIM]),
    ("encoder.dense.bias", &[2 * LATENT_DIM]),
    ("decoder.dense.kernel", &[LATENT_DIM, 32 * 7 * 7]),
    ("decoder.dense.bias", &[32 * 7 * 7]),
    ("decoder.deconv1.kernel", &[32, 64, 3, 3]),
    ("decoder.deconv1.bias", &[64]),
    ("decoder.deconv2.kernel", &[64, 32, 3, 3]),
    ("decoder.deconv2.bias", &[32]),
    ("decoder.deconv3.kernel", &[32, 1, 3, 3]),
    ("decoder.deconv3.bias", &[1]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct Vae {
    params: Vec<Tensor>,
}

/// A latent draw together with the noise that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSample {
    pub z: Tensor,
    pub eps: Tensor,
}

impl Vae {
    /// Glorot-uniform kernels and zero biases drawn from `seed`.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = PARAM_SPECS
            .iter()
            .map(|(_, shape)| {
                if shape.len() == 1 {
                    return Tensor::zeros(shape);
                }
                let receptive: usize = shape[2..].iter().product();
                let limit = (6.0 / ((shape[0] + shape[1]) * receptive) as Float).sqrt();
                Tensor::from_fn(shape, |_| rng.random_range(-limit..limit))
            })
            .collect();
        Self { params }
    }

    pub fn zeros() -> Self {
        Self {
            params: PARAM_SPECS.iter().map(|(_, s)| Tensor::zeros(s)).collect(),
        }
    }

    /// Builds a model from tensors in [`PARAM_SPECS`] order.
    pub fn from_params(params: Vec<Tensor>) -> Result<Self> {
        if params.len() != PARAM_SPECS.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter tensors, got {}",
                PARAM_SPECS.len(),
                params.len()
            )));
        }
        for ((name, shape), p) in PARAM_SPECS.iter().zip(&params) {
            if p.shape() != *shape {
                return Err(Error::InvalidShape {
                    op: "vae_params",
                    detail: format!("{name} should be {shape:?}, got {:?}", p.shape()),
                });
            }
        }
        Ok(Self { params })
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn named(&self) -> impl Iterator<Item = (&'static str, &Tensor)> {
        PARAM_SPECS.iter().map(|(n, _)| *n).zip(&self.params)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Records the parameters on `tape`, as leaves when `trainable`.
    pub fn bind(&self, tape: &Tape, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| if trainable { tape.leaf(p.clone()) } else { tape.constant(p.clone()) })
            .collect();
        Bound { vars }
    }

    pub fn encode(&self, x: &Tensor) -> Result<LatentDistribution> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        let (mu, log_var) = bound.encode(&tape.constant(as_image_batch(x)?))?;
        LatentDistribution::new(mu.value().clone(), log_var.value().clone())
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        let tape = Tape::new();
        let bound = self.bind(&tape, false);
        Ok(bound.decode(&tape.constant(as_latent_batch(z)?))?.value().clone())
    }

    /// `sigmoid(decode(z))`, shape `[B, 1, 28, 28]`.
    pub fn decode_sample(&self, z: &Tensor) -> Result<Tensor> {
        Ok(self.decode(z)?.sigmoid())
    }

    /// Deterministic reconstruction through the posterior mean.
    pub fn reconstruct(&self, x: &Tensor) -> Result<Tensor> {
        let q = self.encode(x)?;
        self.decode_sample(&q.mu)
    }

    /// `n` images `[28, 28]` decoded from `z ~ N(0, I)` drawn with `seed`.
    pub fn generate(&self, n: usize, seed: u64) -> Result<Vec<Tensor>> {
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = Tensor::from_fn(&[n, LATENT_DIM], |_| StandardNormal.sample(&mut rng));
        let images = self.decode_sample(&z)?;
        (0..n)
            .map(|i| images.index_axis0(i)?.into_reshape(&[IMAGE_SIDE, IMAGE_SIDE]))
            .collect()
    }
}

/// `z = μ + exp(log σ² / 2) ⊙ ε`.
pub fn reparameterize(q: &LatentDistribution, eps: &Tensor) -> Result<LatentSample> {
    let sigma = q.log_var.scale(0.5).exp();
    let z = q.mu.add(&sigma.mul(eps)?)?;
    Ok(LatentSample { z, eps: eps.clone() })
}

pub fn reparameterize_var(mu: &Var, log_var: &Var, eps: &Tensor) -> Result<Var> {
    let noise = mu.tape().constant(eps.clone());
    mu.add(&log_var.scale(0.5).exp().mul(&noise)?)
}

/// Standard normal noise shaped like a latent batch.
pub fn sample_noise(rng: &mut impl Rng, batch: usize) -> Tensor {
    Tensor::from_fn(&[batch, LATENT_DIM], |_| StandardNormal.sample(rng))
}

/// Accepts `[28, 28]`, `[B, 28, 28]` or `[B, 1, 28, 28]` and returns the
/// last form.
pub fn as_image_batch(x: &Tensor) -> Result<Tensor> {
    let s = IMAGE_SIDE;
    let batch = match x.shape() {
        [h, w] if (*h, *w) == (s, s) => 1,
        [b, h, w] if (*h, *w) == (s, s) => *b,
        [b, 1, h, w] if (*h, *w) == (s, s) => *b,
        other => {
            return Err(Error::InvalidShape {
                op: "encode",
                detail: format!("expected 28x28 single-channel images, got {other:?}"),
            })
        }
    };
    x.reshape(&[batch, 1, s, s])
}

fn as_latent_batch(z: &Tensor) -> Result<Tensor> {
    match z.shape() {
        [d] if *d == LATENT_DIM => z.reshape(&[1, LATENT_DIM]),
        [_, d] if *d == LATENT_DIM => Ok(z.clone()),
        other => Err(Error::InvalidShape {
            op: "decode",
            detail: format!("expected latent vectors of size {LATENT_DIM}, got {other:?}"),
        }),
    }
}

/// Parameters recorded on a tape.
#[derive(Debug, Clone)]
pub struct Bound {
    pub vars: Vec<Var>,
}

impl Bound {
    /// `[B, 1, 28, 28]` → `(μ, log σ²)`, each `[B, latent]`.
    pub fn encode(&self, x: &Var) -> Result<(Var, Var)> {
        let v = &self.vars;
        let batch = x.shape()[0];
        let h = x.conv2d(&v[0], 2, Padding::Same)?.add_bias(&v[1])?.relu();
        let h = h.conv2d(&v[2], 2, Padding::Same)?.add_bias(&v[3])?.relu();
        let stats = h.reshape(&[batch, FLAT])?.matmul(&v[4])?.add_bias(&v[5])?;
        Ok((stats.slice_cols(0, LATENT_DIM)?, stats.slice_cols(LATENT_DIM, LATENT_DIM)?))
    }

    /// `[B, latent]` → logits `[B, 1, 28, 28]`.
    pub fn decode(&self, z: &Var) -> Result<Var> {
        let v = &self.vars;
        let batch = z.shape()[0];
        let h = z.matmul(&v[6])?.add_bias(&v[7])?.relu();
        let h = h.reshape(&[batch, SEED_SHAPE[0], SEED_SHAPE[1], SEED_SHAPE[2]])?;
        let h = h.conv2d_transpose(&v[8], 2, Padding::Same)?.add_bias(&v[9])?.relu();
        let h = h.conv2d_transpose(&v[10], 2, Padding::Same)?.add_bias(&v[11])?.relu();
        h.conv2d_transpose(&v[12], 1, Padding::Same)?.add_bias(&v[13])
    }
}
