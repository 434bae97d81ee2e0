//! Pool-constrained label selection, greedy decoding and beam search.

mod pool;

pub use pool::{pool_select, pool_update, CandidatePool};

use std::cmp::Ordering;

use crate::autodiff::Tape;
use crate::error::{config_err, contract_err, Result};
use crate::math::{log_sigmoid, sigmoid};
use crate::model::{decoder_step, BoundParams, DecoderState, FeatureMaps, ModelParams, RegionContext, StepVars, Trainable};

/// What the stopping threshold is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThresholdMode {
    /// Probability of the next label alone.
    #[default]
    Node,
    /// Probability of the whole path after adding the next label.
    Path,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeamConfig {
    /// Beam width `K`.
    pub width: usize,
    /// A successor is admissible only if its probability is strictly above this floor.
    pub threshold: f64,
    pub max_len: usize,
    pub threshold_mode: ThresholdMode,
    /// Decode with learned attention; when false, weights are uniform.
    pub attention: bool,
}

impl BeamConfig {
    pub fn new(width: usize, threshold: f64, max_len: usize) -> Self {
        Self {
            width,
            threshold,
            max_len,
            threshold_mode: ThresholdMode::Node,
            attention: true,
        }
    }

    pub fn validate(&self, labels: usize) -> Result<()> {
        if self.width == 0 {
            return config_err("beam width must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return config_err(format!("threshold {} outside [0, 1]", self.threshold));
        }
        if self.max_len > labels {
            return config_err(format!("max_len {} exceeds label count {labels}", self.max_len));
        }
        Ok(())
    }

    fn admits(&self, parent_log_prob: f64, logit: f64) -> bool {
        let floor = self.threshold.ln();
        match self.threshold_mode {
            ThresholdMode::Node => log_sigmoid(logit) > floor,
            ThresholdMode::Path => parent_log_prob + log_sigmoid(logit) > floor,
        }
    }
}

/// Ordered distinct labels with the probability of each node.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionPath {
    pub labels: Vec<usize>,
    pub node_probs: Vec<f64>,
    /// `Σ ln σ(p)` over the nodes.
    pub log_prob: f64,
    pub terminated: bool,
}

impl PredictionPath {
    pub fn empty() -> Self {
        Self {
            labels: Vec::new(),
            node_probs: Vec::new(),
            log_prob: 0.0,
            terminated: false,
        }
    }

    pub fn p_path(&self) -> f64 {
        self.log_prob.exp()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Labels as an ascending set.
    pub fn label_set(&self) -> Vec<usize> {
        let mut s = self.labels.clone();
        s.sort_unstable();
        s
    }

    fn extended(&self, label: usize, logit: f64) -> Self {
        let mut next = self.clone();
        next.labels.push(label);
        next.node_probs.push(sigmoid(logit));
        next.log_prob += log_sigmoid(logit);
        next
    }
}

/// Higher probability first, then lexicographically smaller labels, then shorter.
pub fn path_order(a: &PredictionPath, b: &PredictionPath) -> Ordering {
    b.log_prob
        .total_cmp(&a.log_prob)
        .then_with(|| a.labels.cmp(&b.labels))
        .then_with(|| a.len().cmp(&b.len()))
}

/// `Π p_i`, accumulated in the log domain.
pub fn path_probability(node_probs: &[f64]) -> Result<f64> {
    let mut log = 0.0;
    for &p in node_probs {
        if !(p > 0.0 && p <= 1.0) {
            return contract_err(format!("node probability {p} outside (0, 1]"));
        }
        log += p.ln();
    }
    Ok(f64::exp(log))
}

#[derive(Debug, Clone)]
pub struct BeamOutput {
    /// Ascending label set of the best path.
    pub labels: Vec<usize>,
    pub best: PredictionPath,
    /// Every path that stopped, best first.
    pub terminated: Vec<PredictionPath>,
}

struct Hypothesis {
    path: PredictionPath,
    state: DecoderState,
}

struct Session {
    tape: Tape,
    bound: BoundParams,
    ctx: RegionContext,
}

impl Session {
    fn start(params: &ModelParams, fm: &FeatureMaps, attention: bool) -> Result<(Self, DecoderState)> {
        params.check_features(fm)?;
        let mut tape = Tape::new();
        let bound = BoundParams::bind(&mut tape, params, Trainable::NONE);
        let ctx = RegionContext::new(&mut tape, fm, &bound, params.dims.labels, attention)?;
        let (state, _) = DecoderState::initial(&mut tape, &bound, &ctx, params.dims.hidden)?;
        Ok((Self { tape, bound, ctx }, state))
    }

    fn step(&mut self, state: &DecoderState) -> Result<StepVars> {
        decoder_step(&mut self.tape, &self.bound, &self.ctx, state, None)
    }
}

/// Best-`K` search over label sequences scored by the product of node probabilities.
///
/// A live path stops when it reaches `max_len` or when none of its remaining
/// labels is admissible under the threshold; stopped paths keep their label set.
/// The answer is the stopped path with the highest probability.
pub fn beam_search(params: &ModelParams, fm: &FeatureMaps, cfg: &BeamConfig) -> Result<BeamOutput> {
    cfg.validate(params.dims.labels)?;
    let (mut session, init) = Session::start(params, fm, cfg.attention)?;
    let mut live = vec![Hypothesis {
        path: PredictionPath::empty(),
        state: init,
    }];
    let mut finished: Vec<PredictionPath> = Vec::new();

    while !live.is_empty() {
        let mut steps: Vec<Option<StepVars>> = Vec::with_capacity(live.len());
        let mut candidates: Vec<(usize, PredictionPath)> = Vec::new();
        for (i, hyp) in live.iter_mut().enumerate() {
            if hyp.path.len() >= cfg.max_len {
                steps.push(None);
                continue;
            }
            let step = session.step(&hyp.state)?;
            let logits = session.tape.value(step.logits).data();
            let before = candidates.len();
            for l in hyp.state.pool.iter() {
                if cfg.admits(hyp.path.log_prob, logits[l]) {
                    candidates.push((i, hyp.path.extended(l, logits[l])));
                }
            }
            steps.push((candidates.len() > before).then_some(step));
        }
        for (hyp, step) in live.iter_mut().zip(&steps) {
            if step.is_none() {
                hyp.path.terminated = true;
                finished.push(hyp.path.clone());
            }
        }

        candidates.sort_by(|a, b| path_order(&a.1, &b.1));
        candidates.truncate(cfg.width);
        let mut next = Vec::with_capacity(candidates.len());
        for (parent, path) in candidates {
            let step = steps[parent].expect("parent expanded");
            let label = *path.labels.last().expect("extended path");
            let state = live[parent].state.advance(&mut session.tape, &step, label)?;
            next.push(Hypothesis { path, state });
        }
        live = next;
    }

    finished.sort_by(path_order);
    let best = finished[0].clone();
    Ok(BeamOutput {
        labels: best.label_set(),
        best,
        terminated: finished,
    })
}

/// One emitted step of a greedy decode.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub label: usize,
    /// `σ(p_t)` of the emitted label.
    pub confidence: f64,
    pub alpha: Vec<f64>,
    /// Pool size after the label was removed.
    pub pool_len: usize,
}

/// Greedy decode that also records the attention used for every emitted label.
pub fn greedy_trace(params: &ModelParams, fm: &FeatureMaps, cfg: &BeamConfig) -> Result<(PredictionPath, Vec<TraceStep>)> {
    cfg.validate(params.dims.labels)?;
    let (mut session, mut state) = Session::start(params, fm, cfg.attention)?;
    let mut path = PredictionPath::empty();
    let mut trace = Vec::new();
    while path.len() < cfg.max_len {
        let step = session.step(&state)?;
        let logits = session.tape.value(step.logits).data();
        let label = pool_select(logits, &state.pool)?;
        let logit = logits[label];
        if !cfg.admits(path.log_prob, logit) {
            break;
        }
        path = path.extended(label, logit);
        let alpha = session.tape.value(step.alpha).data().to_vec();
        state = state.advance(&mut session.tape, &step, label)?;
        trace.push(TraceStep {
            label,
            confidence: *path.node_probs.last().expect("just extended"),
            alpha,
            pool_len: state.pool.len(),
        });
    }
    path.terminated = true;
    Ok((path, trace))
}

/// Repeatedly takes the most confident remaining label until the threshold or `max_len` stops it.
/// `cfg.width` is ignored.
pub fn greedy_decode(params: &ModelParams, fm: &FeatureMaps, cfg: &BeamConfig) -> Result<PredictionPath> {
    greedy_trace(params, fm, cfg).map(|(path, _)| path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_probability_examples() {
        assert!((path_probability(&[0.9]).unwrap() - 0.9).abs() < 1e-15);
        assert!((path_probability(&[0.9, 0.5]).unwrap() - 0.45).abs() < 1e-15);
        assert_eq!(path_probability(&[]).unwrap(), 1.0);
        assert!(path_probability(&[0.5, 0.0]).is_err());
        assert!(path_probability(&[1.2]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(BeamConfig::new(0, 0.5, 2).validate(4).is_err());
        assert!(BeamConfig::new(1, 1.5, 2).validate(4).is_err());
        assert!(BeamConfig::new(1, 0.5, 5).validate(4).is_err());
        assert!(BeamConfig::new(3, 0.5, 4).validate(4).is_ok());
    }

    #[test]
    fn admissibility_edges() {
        let cfg = BeamConfig::new(1, 1.0, 3);
        assert!(!cfg.admits(0.0, 60.0));
        let cfg = BeamConfig::new(1, 0.0, 3);
        assert!(cfg.admits(0.0, -900.0));
        let mut cfg = BeamConfig::new(1, 0.3, 3);
        assert!(cfg.admits(0.5f64.ln(), 0.0));
        cfg.threshold_mode = ThresholdMode::Path;
        assert!(!cfg.admits(0.5f64.ln(), 0.0));
    }

    #[test]
    fn ordering_prefers_probability_then_labels() {
        let mk = |labels: Vec<usize>, lp: f64| PredictionPath {
            labels,
            node_probs: vec![],
            log_prob: lp,
            terminated: true,
        };
        let mut v = vec![mk(vec![2], -0.1), mk(vec![0, 1], -0.1), mk(vec![1], -0.05)];
        v.sort_by(path_order);
        assert_eq!(v[0].labels, vec![1]);
        assert_eq!(v[1].labels, vec![0, 1]);
    }
}
