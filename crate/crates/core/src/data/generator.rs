use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{DatasetManifest, Instance};
use crate::error::{config_err, Result};
use crate::math::sigmoid;
use crate::model::FeatureMaps;

/// Knobs of the planted-region generator.
///
/// Label sets come from a pairwise binary model: label `i` has log-odds
/// `logit(label_freqs[i]) + Σ_j cooc[i][j] y_j` given the others, sampled by
/// Gibbs sweeps. Every positive label then stamps its prototype into
/// `size_map[i]` cells not used by any other label of the same image.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub labels: usize,
    /// The image is a `grid × grid` arrangement of regions.
    pub grid: usize,
    pub feature_dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub label_freqs: Vec<f64>,
    /// Symmetric log-odds boosts; the diagonal is ignored.
    pub cooc: Vec<Vec<f64>>,
    pub size_map: Vec<usize>,
    pub noise_sigma: f64,
    /// Euclidean norm of every label prototype.
    pub prototype_norm: f64,
    pub gibbs_sweeps: usize,
    pub seed: u64,
}

impl GeneratorConfig {
    /// Twelve labels on a 6×6 grid: three frequent large objects, three rare
    /// single-cell objects, six in between, and one strongly co-occurring
    /// (frequent, rare) pair.
    pub fn benchmark(seed: u64) -> Self {
        let labels = 12;
        let label_freqs = vec![
            0.5, 0.5, 0.5, // frequent
            0.05, 0.05, 0.05, // rare
            0.2, 0.2, 0.15, 0.15, 0.1, 0.1,
        ];
        let size_map = vec![8, 8, 8, 1, 1, 1, 2, 2, 2, 1, 1, 1];
        let mut cooc = vec![vec![0.0; labels]; labels];
        let mut link = |a: usize, b: usize, w: f64| {
            cooc[a][b] = w;
            cooc[b][a] = w;
        };
        link(0, 3, 3.0);
        link(1, 6, 1.5);
        link(2, 8, 1.0);
        Self {
            labels,
            grid: 6,
            feature_dim: 16,
            n_train: 2000,
            n_test: 500,
            label_freqs,
            cooc,
            size_map,
            noise_sigma: 0.3,
            prototype_norm: 6.0,
            gibbs_sweeps: 10,
            seed,
        }
    }

    pub fn regions(&self) -> usize {
        self.grid * self.grid
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.labels;
        if c == 0 || self.grid == 0 || self.feature_dim == 0 {
            return config_err("labels, grid and feature_dim must be positive");
        }
        if self.label_freqs.len() != c || self.size_map.len() != c || self.cooc.len() != c {
            return config_err("label_freqs, size_map and cooc must have one entry per label");
        }
        if self.label_freqs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return config_err("label frequencies must lie in [0, 1]");
        }
        if self.label_freqs.iter().all(|&p| p == 0.0) {
            return config_err("at least one label needs a positive frequency");
        }
        for (i, row) in self.cooc.iter().enumerate() {
            if row.len() != c {
                return config_err("cooc must be c x c");
            }
            for (j, w) in row.iter().enumerate() {
                if !w.is_finite() || *w != self.cooc[j][i] {
                    return config_err(format!("cooc must be finite and symmetric (at {i},{j})"));
                }
            }
        }
        if self.size_map.iter().any(|&s| s == 0) {
            return config_err("size_map entries must be at least 1");
        }
        let worst: usize = self
            .size_map
            .iter()
            .zip(&self.label_freqs)
            .filter(|(_, &p)| p > 0.0)
            .map(|(s, _)| s)
            .sum();
        if worst > self.regions() {
            return config_err(format!(
                "labels that can co-occur need {worst} cells but the grid has {}",
                self.regions()
            ));
        }
        if !(self.noise_sigma >= 0.0) || !(self.prototype_norm >= 0.0) {
            return config_err("noise_sigma and prototype_norm must be non-negative");
        }
        Ok(())
    }

    fn log_odds(&self) -> Vec<f64> {
        self.label_freqs.iter().map(|&p| (p / (1.0 - p)).ln()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSplits {
    pub train: DatasetManifest,
    pub test: DatasetManifest,
    /// One prototype of length `feature_dim` per label.
    pub prototypes: Vec<Vec<f64>>,
}

/// Prototypes from stream 0: Gaussian draws, Gram-Schmidt orthogonalized for
/// the first `min(labels, feature_dim)`, all scaled to `prototype_norm`.
fn prototypes(cfg: &GeneratorConfig) -> Vec<Vec<f64>> {
    let mut rng = stream(cfg.seed, 0);
    let k = cfg.feature_dim;
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(cfg.labels);
    for i in 0..cfg.labels {
        let mut v: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
        if i < k {
            for u in &out {
                let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                for (a, b) in v.iter_mut().zip(u) {
                    *a -= d * b;
                }
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        for a in &mut v {
            *a /= norm;
        }
        out.push(v);
    }
    for v in &mut out {
        for a in v.iter_mut() {
            *a *= cfg.prototype_norm;
        }
    }
    out
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Draws one non-empty label vector by Gibbs sweeps, restarting on an empty draw.
pub(crate) fn sample_labels<R: Rng>(cfg: &GeneratorConfig, log_odds: &[f64], rng: &mut R) -> Vec<bool> {
    let c = cfg.labels;
    loop {
        let mut y: Vec<bool> = cfg.label_freqs.iter().map(|&p| rng.random::<f64>() < p).collect();
        for _ in 0..cfg.gibbs_sweeps {
            for i in 0..c {
                let field: f64 = log_odds[i]
                    + (0..c)
                        .filter(|&j| j != i && y[j])
                        .map(|j| cfg.cooc[i][j])
                        .sum::<f64>();
                y[i] = rng.random::<f64>() < sigmoid(field);
            }
        }
        if y.iter().any(|&b| b) {
            return y;
        }
    }
}

fn make_instance(
    cfg: &GeneratorConfig,
    protos: &[Vec<f64>],
    log_odds: &[f64],
    id: String,
    rng: &mut ChaCha8Rng,
) -> Result<Instance> {
    let (m, k) = (cfg.regions(), cfg.feature_dim);
    let y = sample_labels(cfg, log_odds, rng);
    let labels: Vec<usize> = (0..cfg.labels).filter(|&l| y[l]).collect();

    let mut cells: Vec<usize> = (0..m).collect();
    cells.shuffle(rng);
    let mut values = vec![0.0; m * k];
    let mut planted = Vec::with_capacity(labels.len());
    let mut next = 0;
    for &l in &labels {
        let mut mine = cells[next..next + cfg.size_map[l]].to_vec();
        next += cfg.size_map[l];
        mine.sort_unstable();
        for &cell in &mine {
            values[cell * k..(cell + 1) * k].copy_from_slice(&protos[l]);
        }
        planted.push(mine);
    }
    if cfg.noise_sigma > 0.0 {
        for v in &mut values {
            let n: f64 = StandardNormal.sample(rng);
            *v += cfg.noise_sigma * n;
        }
    }
    Ok(Instance {
        id,
        features: FeatureMaps::from_rows(m, k, values)?,
        labels,
        planted,
    })
}

/// Builds the train and test splits. Instance `i` (train first, then test)
/// draws from its own RNG stream, so any instance can be regenerated alone.
pub fn generate_dataset(cfg: &GeneratorConfig) -> Result<SyntheticSplits> {
    cfg.validate()?;
    let protos = prototypes(cfg);
    let log_odds = cfg.log_odds();
    let manifest = |instances| DatasetManifest {
        labels: cfg.labels,
        regions: cfg.regions(),
        feature_dim: cfg.feature_dim,
        instances,
    };
    let build = |prefix: &str, count: usize, offset: usize| -> Result<Vec<Instance>> {
        (0..count)
            .map(|i| {
                let mut rng = stream(cfg.seed, (offset + i + 1) as u64);
                make_instance(cfg, &protos, &log_odds, format!("{prefix}-{i:05}"), &mut rng)
            })
            .collect()
    };
    let train = build("train", cfg.n_train, 0)?;
    let test = build("test", cfg.n_test, cfg.n_train)?;
    Ok(SyntheticSplits {
        train: manifest(train),
        test: manifest(test),
        prototypes: protos,
    })
}
