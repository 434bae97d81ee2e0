//! Synthetic planted-region dataset: generation, file format and label orderings.

pub mod format;
mod generator;

pub use format::{load_dataset, save_dataset};
pub use generator::{generate_dataset, GeneratorConfig, SyntheticSplits};

use crate::error::{contract_err, Result};
use crate::model::FeatureMaps;

/// One synthetic image.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: String,
    pub features: FeatureMaps,
    /// Positive labels, ascending.
    pub labels: Vec<usize>,
    /// Cells holding each positive label's prototype, parallel to `labels`.
    pub planted: Vec<Vec<usize>>,
}

impl Instance {
    /// Dense 0/1 target of length `labels`.
    pub fn target(&self, labels: usize) -> Vec<f64> {
        let mut y = vec![0.0; labels];
        for &l in &self.labels {
            y[l] = 1.0;
        }
        y
    }

    pub fn planted_cells(&self, label: usize) -> Option<&[usize]> {
        self.labels
            .iter()
            .position(|&l| l == label)
            .map(|i| self.planted[i].as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub labels: usize,
    pub regions: usize,
    pub feature_dim: usize,
    pub instances: Vec<Instance>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Flattened feature dimension `m · k`.
    pub fn flat_dim(&self) -> usize {
        self.regions * self.feature_dim
    }

    /// Side of the square region grid, if `regions` is a perfect square.
    pub fn grid_side(&self) -> Option<usize> {
        let g = (self.regions as f64).sqrt().round() as usize;
        (g * g == self.regions).then_some(g)
    }

    pub fn find(&self, id: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }

    /// Most positive labels on any one instance.
    pub fn max_label_count(&self) -> usize {
        self.instances.iter().map(|i| i.labels.len()).max().unwrap_or(0)
    }

    pub fn label_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.labels];
        for inst in &self.instances {
            for &l in &inst.labels {
                counts[l] += 1;
            }
        }
        counts
    }

    /// Splits off the last `n` instances.
    pub fn split_tail(mut self, n: usize) -> (Self, Self) {
        let at = self.instances.len().saturating_sub(n);
        let tail = self.instances.split_off(at);
        let rest = Self {
            instances: tail,
            ..self.clone()
        };
        (self, rest)
    }

    pub fn validate(&self) -> Result<()> {
        for inst in &self.instances {
            if inst.features.regions() != self.regions || inst.features.feature_dim() != self.feature_dim {
                return contract_err(format!("instance {} has mismatched feature dims", inst.id));
            }
            if inst.planted.len() != inst.labels.len() {
                return contract_err(format!("instance {} planted/labels mismatch", inst.id));
            }
            if !inst.labels.windows(2).all(|w| w[0] < w[1]) || inst.labels.iter().any(|&l| l >= self.labels) {
                return contract_err(format!("instance {} has invalid labels", inst.id));
            }
            for cells in &inst.planted {
                if cells.is_empty() || cells.iter().any(|&c| c >= self.regions) {
                    return contract_err(format!("instance {} has invalid planted cells", inst.id));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrequencyDirection {
    /// Most frequent first.
    Descending,
    /// Exact reverse of [`FrequencyDirection::Descending`].
    Ascending,
}

/// Labels ordered by positive count in `ds`; ties in the descending order go to the lower index.
pub fn label_frequency_order(ds: &DatasetManifest, direction: FrequencyDirection) -> Vec<usize> {
    order_by_counts(&ds.label_counts(), direction)
}

pub fn order_by_counts(counts: &[usize], direction: FrequencyDirection) -> Vec<usize> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    if direction == FrequencyDirection::Ascending {
        order.reverse();
    }
    order
}
