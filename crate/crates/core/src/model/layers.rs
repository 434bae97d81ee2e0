//! Layer builders. The `record_*` functions append to a tape and are what the
//! unroll uses; the plain functions evaluate one layer on owned tensors.

use crate::autodiff::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::model::bind::{AttentionVars, FeatureVars, LstmVars, PredictionVars};
use crate::model::{AttentionParams, FeatureHead, FeatureMaps, LstmParams, PredictionHead};
use crate::tensor::Tensor;

/// Feature-head logits: linear layer on the mean of the region vectors.
pub fn record_feature_logits(
    tape: &mut Tape,
    features: Var,
    uniform: Var,
    head: &FeatureVars,
) -> Result<Var> {
    let pooled = tape.weighted_rows(uniform, features)?;
    tape.linear(pooled, head.weight, Some(head.bias))
}

/// `regions × attention` projection of every region; independent of time.
pub fn record_region_projection(tape: &mut Tape, features: Var, att: &AttentionVars) -> Result<Var> {
    tape.matmul_t(features, att.w_region)
}

/// One additive-attention score per region.
pub fn record_scores(tape: &mut Tape, projected: Var, h_prev: Var, att: &AttentionVars) -> Result<Var> {
    let from_hidden = tape.linear(h_prev, att.w_hidden, Some(att.bias))?;
    let pre = tape.add_row(projected, from_hidden)?;
    let act = tape.tanh(pre);
    tape.linear(att.w_score, act, None)
}

/// Standard LSTM cell on an already concatenated input.
pub fn record_lstm_cell(
    tape: &mut Tape,
    input: Var,
    h_prev: Var,
    cell_prev: Var,
    lstm: &LstmVars,
) -> Result<(Var, Var)> {
    let hidden = tape.value(h_prev).len();
    if tape.value(cell_prev).len() != hidden {
        return shape_err("lstm: hidden and cell state lengths differ");
    }
    let from_input = tape.linear(input, lstm.w_input, Some(lstm.bias))?;
    let from_hidden = tape.linear(h_prev, lstm.w_hidden, None)?;
    let gates = tape.add(from_input, from_hidden)?;
    if tape.value(gates).len() != 4 * hidden {
        return shape_err("lstm: gate rows must be 4 x hidden");
    }
    let i = tape.slice(gates, 0, hidden)?;
    let f = tape.slice(gates, hidden, hidden)?;
    let g = tape.slice(gates, 2 * hidden, hidden)?;
    let o = tape.slice(gates, 3 * hidden, hidden)?;
    let (i, f, g, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(g), tape.sigmoid(o));
    let keep = tape.mul(f, cell_prev)?;
    let write = tape.mul(i, g)?;
    let cell = tape.add(keep, write)?;
    let squashed = tape.tanh(cell);
    let h = tape.mul(o, squashed)?;
    Ok((h, cell))
}

/// Two fully-connected layers with a ReLU between them, returning raw logits.
pub fn record_prediction(
    tape: &mut Tape,
    input: Var,
    pred: &PredictionVars,
    hidden_mask: Option<Var>,
) -> Result<Var> {
    let hidden = tape.linear(input, pred.w1, Some(pred.b1))?;
    let mut hidden = tape.relu(hidden);
    if let Some(mask) = hidden_mask {
        hidden = tape.mul(hidden, mask)?;
    }
    tape.linear(hidden, pred.w2, Some(pred.b2))
}

fn uniform_weights(m: usize) -> Tensor {
    Tensor::filled(&[m], 1.0 / m as f64)
}

/// Preliminary per-label probabilities `σ(W mean(v_i) + b)`.
pub fn feature_map_forward(fm: &FeatureMaps, head: &FeatureHead) -> Result<Tensor> {
    let mut tape = Tape::new();
    let features = tape.constant(fm.values().clone());
    let uniform = tape.constant(uniform_weights(fm.regions()));
    let vars = FeatureVars {
        weight: tape.constant(head.weight.clone()),
        bias: tape.constant(head.bias.clone()),
    };
    let logits = record_feature_logits(&mut tape, features, uniform, &vars)?;
    let probs = tape.sigmoid(logits);
    Ok(tape.value(probs).clone())
}

fn attention_vars(tape: &mut Tape, att: &AttentionParams) -> AttentionVars {
    AttentionVars {
        w_region: tape.constant(att.w_region.clone()),
        w_hidden: tape.constant(att.w_hidden.clone()),
        bias: tape.constant(att.bias.clone()),
        w_score: tape.constant(att.w_score.clone()),
    }
}

pub fn attention_scores(fm: &FeatureMaps, h_prev: &Tensor, att: &AttentionParams) -> Result<Tensor> {
    let mut tape = Tape::new();
    let features = tape.constant(fm.values().clone());
    let h = tape.constant(h_prev.clone());
    let vars = attention_vars(&mut tape, att);
    let projected = record_region_projection(&mut tape, features, &vars)?;
    let eps = record_scores(&mut tape, projected, h, &vars)?;
    Ok(tape.value(eps).clone())
}

pub fn attention_weights(eps: &Tensor) -> Result<Tensor> {
    crate::autodiff::softmax(eps)
}

/// Convex combination `Σ α_i v_i`.
pub fn context_vector(fm: &FeatureMaps, alpha: &Tensor) -> Result<Tensor> {
    if alpha.len() != fm.regions() {
        return shape_err(format!("{} weights for {} regions", alpha.len(), fm.regions()));
    }
    let mut tape = Tape::new();
    let features = tape.constant(fm.values().clone());
    let a = tape.constant(alpha.clone());
    let z = tape.weighted_rows(a, features)?;
    Ok(tape.value(z).clone())
}

/// One LSTM step on `[v_pred, z, ỹ_prev]`; returns `(h, cell)`.
pub fn lstm_step(
    v_pred: &Tensor,
    z: &Tensor,
    y_hard_prev: &Tensor,
    h_prev: &Tensor,
    cell_prev: &Tensor,
    lstm: &LstmParams,
) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let parts = [v_pred, z, y_hard_prev].map(|t| tape.constant(t.clone()));
    let input = tape.concat(&parts)?;
    let h = tape.constant(h_prev.clone());
    let c = tape.constant(cell_prev.clone());
    let vars = LstmVars {
        w_input: tape.constant(lstm.w_input.clone()),
        w_hidden: tape.constant(lstm.w_hidden.clone()),
        bias: tape.constant(lstm.bias.clone()),
    };
    let (h, c) = record_lstm_cell(&mut tape, input, h, c, &vars)?;
    Ok((tape.value(h).clone(), tape.value(c).clone()))
}

/// Prediction-head logits from `[v_pred, z, ỹ_prev, h]`.
pub fn predict_step(
    v_pred: &Tensor,
    z: &Tensor,
    y_hard_prev: &Tensor,
    h: &Tensor,
    pred: &PredictionHead,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let parts = [v_pred, z, y_hard_prev, h].map(|t| tape.constant(t.clone()));
    let input = tape.concat(&parts)?;
    let vars = PredictionVars {
        w1: tape.constant(pred.w1.clone()),
        b1: tape.constant(pred.b1.clone()),
        w2: tape.constant(pred.w2.clone()),
        b2: tape.constant(pred.b2.clone()),
    };
    let p = record_prediction(&mut tape, input, &vars, None)?;
    Ok(tape.value(p).clone())
}
