//! Per-class (C-) and overall (O-) precision, recall and F1 over predicted label sets.
//!
//! C-metrics average the per-label ratios over all `c` labels, including labels
//! that never occur in the evaluated split. O-metrics pool the counts first.
//! Any `0/0` ratio is taken as 0.

use crate::error::{contract_err, Result};

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

impl ConfusionCounts {
    pub fn new(labels: usize) -> Self {
        Self {
            tp: vec![0; labels],
            fp: vec![0; labels],
            fn_: vec![0; labels],
        }
    }

    pub fn labels(&self) -> usize {
        self.tp.len()
    }

    /// Adds one instance's prediction against its ground truth.
    pub fn add(&mut self, pred: &[usize], truth: &[usize]) -> Result<()> {
        let c = self.labels();
        let mut p = vec![false; c];
        let mut t = vec![false; c];
        for (set, flags) in [(pred, &mut p), (truth, &mut t)] {
            for &l in set {
                if l >= c {
                    return contract_err(format!("label {l} outside 0..{c}"));
                }
                flags[l] = true;
            }
        }
        for l in 0..c {
            match (p[l], t[l]) {
                (true, true) => self.tp[l] += 1,
                (true, false) => self.fp[l] += 1,
                (false, true) => self.fn_[l] += 1,
                (false, false) => {}
            }
        }
        Ok(())
    }

    /// Counts merge by addition, so shards can be accumulated independently.
    pub fn merge(&mut self, other: &ConfusionCounts) {
        for (a, b) in [(&mut self.tp, &other.tp), (&mut self.fp, &other.fp), (&mut self.fn_, &other.fn_)] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

pub fn accumulate(preds: &[Vec<usize>], truths: &[Vec<usize>], labels: usize) -> Result<ConfusionCounts> {
    if preds.len() != truths.len() {
        return contract_err(format!("{} predictions for {} instances", preds.len(), truths.len()));
    }
    let mut counts = ConfusionCounts::new(labels);
    for (p, t) in preds.iter().zip(truths) {
        counts.add(p, t)?;
    }
    Ok(counts)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Harmonic mean; 0 when both inputs are 0. Works on fractions or percentages alike.
pub fn f1(precision: f64, recall: f64) -> Result<f64> {
    if precision < 0.0 || recall < 0.0 || precision.is_nan() || recall.is_nan() {
        return contract_err(format!("f1 of negative input ({precision}, {recall})"));
    }
    let s = precision + recall;
    Ok(if s == 0.0 { 0.0 } else { 2.0 * precision * recall / s })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_pr(precision: f64, recall: f64) -> Self {
        Self {
            precision,
            recall,
            f1: f1(precision, recall).expect("ratios are non-negative"),
        }
    }
}

/// Macro averages over labels.
pub fn per_class_prf(counts: &ConfusionCounts) -> Prf {
    let c = counts.labels();
    if c == 0 {
        return Prf::from_pr(0.0, 0.0);
    }
    let (mut p, mut r) = (0.0, 0.0);
    for l in 0..c {
        p += ratio(counts.tp[l], counts.tp[l] + counts.fp[l]);
        r += ratio(counts.tp[l], counts.tp[l] + counts.fn_[l]);
    }
    Prf::from_pr(p / c as f64, r / c as f64)
}

/// Micro averages over pooled counts.
pub fn overall_prf(counts: &ConfusionCounts) -> Prf {
    let tp: u64 = counts.tp.iter().sum();
    let fp: u64 = counts.fp.iter().sum();
    let fn_: u64 = counts.fn_.iter().sum();
    Prf::from_pr(ratio(tp, tp + fp), ratio(tp, tp + fn_))
}

/// The six numbers of one evaluation row, stored as fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub per_class: Prf,
    pub overall: Prf,
}

impl Evaluation {
    pub fn from_counts(counts: &ConfusionCounts) -> Self {
        Self {
            per_class: per_class_prf(counts),
            overall: overall_prf(counts),
        }
    }

    /// `method\tC-P\tC-R\tC-F1\tO-P\tO-R\tO-F1` in percent with one decimal.
    pub fn report_line(&self, method: &str) -> String {
        let vals = [
            self.per_class.precision,
            self.per_class.recall,
            self.per_class.f1,
            self.overall.precision,
            self.overall.recall,
            self.overall.f1,
        ];
        let mut line = method.to_string();
        for v in vals {
            line.push_str(&format!("\t{:.1}", 100.0 * v));
        }
        line
    }
}

pub const REPORT_HEADER: &str = "method\tC-P\tC-R\tC-F1\tO-P\tO-R\tO-F1";
