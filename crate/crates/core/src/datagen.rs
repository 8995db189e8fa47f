//! Synthetic corrupted linear-regression data with ground truth.
//!
//! Each batch draws `x ~ N(0, I_p)`, forms `y* = Xᵀw* + ε` with
//! `ε ~ N(0, σ²)`, then adds `u ~ U[-c‖y*‖∞, c‖y*‖∞]` (per-batch ∞-norm,
//! `c = corruption_scale`) to an exact-size uniformly random subset.
//! `w*` comes from RNG stream 0 and batch `i` from stream `i + 1` of one
//! ChaCha generator, so resizing one batch leaves the others untouched.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DsplError, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;
use crate::types::Batch;

/// Fraction of corrupted responses, shared or per batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Corruption {
    Uniform(f64),
    PerBatch(Vec<f64>),
}

impl Corruption {
    pub fn ratio(&self, batch: usize) -> f64 {
        match self {
            Corruption::Uniform(r) => *r,
            Corruption::PerBatch(rs) => rs[batch],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub p: usize,
    pub n_per_batch: Vec<usize>,
    pub corruption: Corruption,
    pub noise_sigma: f64,
    pub corruption_scale: f64,
    pub seed: u64,
}

impl SynthConfig {
    /// `m` equal batches of `n / m` instances (the remainder goes to the first batches).
    pub fn balanced(p: usize, n: usize, m: usize, ratio: f64, seed: u64) -> Self {
        let base = n / m.max(1);
        let extra = n % m.max(1);
        Self {
            p,
            n_per_batch: (0..m).map(|i| base + usize::from(i < extra)).collect(),
            corruption: Corruption::Uniform(ratio),
            noise_sigma: 0.1,
            corruption_scale: 5.0,
            seed,
        }
    }

    /// p = 20, n = 2000 over 10 batches.
    pub fn desk(ratio: f64, seed: u64) -> Self {
        Self::balanced(20, 2000, 10, ratio, seed)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DsplError::InvalidParameter(m));
        if self.p == 0 {
            return bad("p must be at least 1".into());
        }
        if self.n_per_batch.is_empty() || self.n_per_batch.contains(&0) {
            return bad("every batch needs at least one instance".into());
        }
        if let Corruption::PerBatch(rs) = &self.corruption {
            if rs.len() != self.n_per_batch.len() {
                return bad(format!(
                    "{} corruption ratios for {} batches",
                    rs.len(),
                    self.n_per_batch.len()
                ));
            }
        }
        for i in 0..self.n_per_batch.len() {
            let r = self.corruption.ratio(i);
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("corruption ratio {r} outside [0, 1]"));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be a finite non-negative number".into());
        }
        if !(self.corruption_scale >= 0.0 && self.corruption_scale.is_finite()) {
            return bad("corruption_scale must be a finite non-negative number".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset<T> {
    pub batches: Vec<Batch<T>>,
    /// Unit-norm ground truth.
    pub w_star: Vec<T>,
    /// `true` marks a corrupted response.
    pub corruption_mask: Vec<Vec<bool>>,
}

impl<T: Scalar> SynthDataset<T> {
    pub fn corrupted_count(&self) -> usize {
        self.corruption_mask
            .iter()
            .flatten()
            .filter(|c| **c)
            .count()
    }

    pub fn clean_count(&self) -> usize {
        self.corruption_mask
            .iter()
            .flatten()
            .filter(|c| !**c)
            .count()
    }
}

fn stream(seed: u64, id: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn generate<T: Scalar>(config: &SynthConfig) -> Result<SynthDataset<T>> {
    config.validate()?;
    let p = config.p;

    let mut rng = stream(config.seed, 0);
    let mut w_star: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
    let norm = w_star.iter().map(|v| v * v).sum::<f64>().sqrt();
    w_star.iter_mut().for_each(|v| *v /= norm);

    let mut batches = Vec::with_capacity(config.n_per_batch.len());
    let mut masks = Vec::with_capacity(config.n_per_batch.len());
    for (i, &n) in config.n_per_batch.iter().enumerate() {
        let mut rng = stream(config.seed, i as u64 + 1);
        let x: Vec<f64> = (0..p * n).map(|_| rng.sample(StandardNormal)).collect();
        let mut y: Vec<f64> = x
            .chunks_exact(p)
            .map(|col| {
                let clean: f64 = col.iter().zip(&w_star).map(|(a, b)| a * b).sum();
                let noise: f64 = rng.sample(StandardNormal);
                clean + config.noise_sigma * noise
            })
            .collect();
        let bound = config.corruption_scale * y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let k = (config.corruption.ratio(i) * n as f64).round() as usize;
        let mut mask = vec![false; n];
        let mut picked = sample(&mut rng, n, k).into_vec();
        picked.sort_unstable();
        for j in picked {
            mask[j] = true;
            let u = if bound > 0.0 {
                rng.random_range(-bound..=bound)
            } else {
                0.0
            };
            y[j] += u;
        }
        let x = Matrix::from_col_major(p, n, x.into_iter().map(T::lit).collect())?;
        batches.push(Batch::new(i, x, y.into_iter().map(T::lit).collect())?);
        masks.push(mask);
    }

    Ok(SynthDataset {
        batches,
        w_star: w_star.into_iter().map(T::lit).collect(),
        corruption_mask: masks,
    })
}
