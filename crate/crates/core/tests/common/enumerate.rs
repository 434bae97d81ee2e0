//! Exhaustive enumeration of every path the threshold rule admits.

use ofrnn_core::decode::{BeamConfig, PredictionPath, ThresholdMode};
use ofrnn_core::math::sigmoid;
use ofrnn_core::model::{unroll_states, FeatureMaps, ModelParams, UnrollOptions};

/// Logits at the step after `prefix`, from a forced-order unroll.
pub fn logits_after(params: &ModelParams, fm: &FeatureMaps, prefix: &[usize]) -> Vec<f64> {
    let c = params.dims.labels;
    let next = (0..c).find(|l| !prefix.contains(l)).expect("room for one more");
    let mut order = prefix.to_vec();
    order.push(next);
    let opts = UnrollOptions {
        attention_on: true,
        forced_order: Some(&order),
        dropout: None,
    };
    let states = unroll_states(fm, params, order.len(), opts).unwrap();
    states.last().unwrap().p.data().to_vec()
}

fn admissible(cfg: &BeamConfig, parent: f64, logit: f64) -> bool {
    let q = sigmoid(logit);
    match cfg.threshold_mode {
        ThresholdMode::Node => q > cfg.threshold,
        ThresholdMode::Path => parent * q > cfg.threshold,
    }
}

/// Every terminated path reachable under the threshold rule, by depth-first enumeration.
pub fn enumerate(params: &ModelParams, fm: &FeatureMaps, cfg: &BeamConfig) -> Vec<PredictionPath> {
    fn walk(
        params: &ModelParams,
        fm: &FeatureMaps,
        cfg: &BeamConfig,
        path: PredictionPath,
        out: &mut Vec<PredictionPath>,
    ) {
        if path.len() == cfg.max_len {
            out.push(PredictionPath { terminated: true, ..path });
            return;
        }
        let logits = logits_after(params, fm, &path.labels);
        let parent: f64 = path.node_probs.iter().product();
        let mut any = false;
        for l in 0..params.dims.labels {
            if path.labels.contains(&l) || !admissible(cfg, parent, logits[l]) {
                continue;
            }
            any = true;
            let mut next = path.clone();
            next.labels.push(l);
            next.node_probs.push(sigmoid(logits[l]));
            next.log_prob = next.node_probs.iter().map(|p| p.ln()).sum();
            walk(params, fm, cfg, next, out);
        }
        if !any {
            out.push(PredictionPath { terminated: true, ..path });
        }
    }
    let mut out = Vec::new();
    walk(params, fm, cfg, PredictionPath::empty(), &mut out);
    out
}

/// The beam's best path must be one of the oracle's best paths. Paths whose
/// probabilities agree to rounding (e.g. permutations of the same nodes) all count.
pub fn oracle_agrees(best: &PredictionPath, all: &[PredictionPath]) -> Result<(), String> {
    let top = all.iter().map(|p| p.log_prob).fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<&PredictionPath> = all.iter().filter(|p| (p.log_prob - top).abs() < 1e-12).collect();
    if !tied.iter().any(|p| p.labels == best.labels) {
        return Err(format!("beam {best:?} not among oracle best {tied:?}"));
    }
    let dp = (best.p_path() - top.exp()).abs();
    if dp >= 1e-12 {
        return Err(format!("|dp_path| = {dp:e}"));
    }
    Ok(())
}

pub fn check_against_oracle(best: &PredictionPath, all: &[PredictionPath]) {
    if let Err(e) = oracle_agrees(best, all) {
        panic!("{e}");
    }
}
