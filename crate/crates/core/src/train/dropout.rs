use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, Result};
use crate::tensor::Tensor;

/// Inverted-dropout mask: `1/keep_prob` with probability `keep_prob`, else 0.
pub fn dropout_mask<R: Rng + ?Sized>(dim: usize, keep_prob: f64, rng: &mut R) -> Result<Tensor> {
    check_keep_prob(keep_prob)?;
    if keep_prob == 1.0 {
        return Ok(Tensor::filled(&[dim], 1.0));
    }
    let scale = 1.0 / keep_prob;
    let data = (0..dim)
        .map(|_| if rng.random::<f64>() < keep_prob { scale } else { 0.0 })
        .collect();
    Tensor::new(vec![dim], data)
}

pub(crate) fn check_keep_prob(keep_prob: f64) -> Result<()> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return config_err(format!("keep_prob must lie in (0, 1], got {keep_prob}"));
    }
    Ok(())
}

/// Seeded source of dropout masks for one forward pass.
///
/// Two streams built from the same seed hand out identical masks in the same
/// call order, which is what finite-difference checks rely on.
#[derive(Debug, Clone)]
pub struct Dropout {
    keep_prob: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(keep_prob: f64, seed: u64) -> Result<Self> {
        check_keep_prob(keep_prob)?;
        Ok(Self {
            keep_prob,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn keep_prob(&self) -> f64 {
        self.keep_prob
    }

    pub fn mask(&mut self, dim: usize) -> Tensor {
        dropout_mask(dim, self.keep_prob, &mut self.rng).expect("keep_prob validated")
    }
}
