#![allow(dead_code)]

pub mod enumerate;

use ofrnn_core::data::GeneratorConfig;
use ofrnn_core::model::{FeatureMaps, ModelDims, ModelParams};
use ofrnn_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dims(c: usize, k: usize, m: usize) -> ModelDims {
    ModelDims {
        labels: c,
        feature_dim: k,
        hidden: 5,
        attention: 4,
        pred_hidden: 6,
        regions: m,
    }
}

pub fn uniform_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, dims: &[usize], scale: f64) -> Tensor {
    Tensor::new(dims.to_vec(), uniform_vec(rng, dims.iter().product(), scale)).unwrap()
}

pub fn random_features(rng: &mut ChaCha8Rng, m: usize, k: usize) -> FeatureMaps {
    FeatureMaps::from_rows(m, k, uniform_vec(rng, m * k, 1.5)).unwrap()
}

/// Every tensor uniform in `±scale`, so logits spread well beyond zero.
pub fn random_model(seed: u64, d: ModelDims, scale: f64) -> ModelParams {
    let mut r = rng(seed);
    let mut p = ModelParams::zeros(d).unwrap();
    for (_, _, t) in p.tensors_mut() {
        for v in t.data_mut() {
            *v = r.random_range(-scale..scale);
        }
    }
    p
}

/// Four labels on a 2×2 grid, small enough for quick training runs.
pub fn small_generator(seed: u64, n_train: usize, n_test: usize) -> GeneratorConfig {
    let mut cooc = vec![vec![0.0; 4]; 4];
    cooc[0][1] = 1.0;
    cooc[1][0] = 1.0;
    GeneratorConfig {
        labels: 4,
        grid: 2,
        feature_dim: 6,
        n_train,
        n_test,
        label_freqs: vec![0.5, 0.3, 0.2, 0.1],
        cooc,
        size_map: vec![1, 1, 1, 1],
        noise_sigma: 0.2,
        prototype_norm: 3.0,
        gibbs_sweeps: 10,
        seed,
    }
}
