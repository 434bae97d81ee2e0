use std::cell::Cell;

use crate::autodiff::{Tape, Var};
use crate::decode::{pool_select, CandidatePool};
use crate::error::{contract_err, Result};
use crate::model::bind::{BoundParams, Trainable};
use crate::model::layers::{
    record_feature_logits, record_lstm_cell, record_prediction, record_region_projection,
    record_scores,
};
use crate::model::{FeatureMaps, ModelParams};
use crate::tensor::Tensor;
use crate::train::Dropout;

thread_local! {
    static STEP_CALLS: Cell<u64> = const { Cell::new(0) };
}

/// Number of times [`decoder_step`] has run on this thread.
///
/// Training and every decoder route through that one function; tests read
/// this counter to confirm it.
pub fn shared_step_calls() -> u64 {
    STEP_CALLS.with(Cell::get)
}

/// Per-image values that stay fixed across time steps.
#[derive(Debug, Clone, Copy)]
pub struct RegionContext {
    pub features: Var,
    /// `W_v v_i` for every region; `None` when attention is disabled.
    pub projected: Option<Var>,
    pub uniform: Var,
    pub labels: usize,
}

impl RegionContext {
    pub fn new(
        tape: &mut Tape,
        fm: &FeatureMaps,
        bound: &BoundParams,
        labels: usize,
        attention_on: bool,
    ) -> Result<Self> {
        let features = tape.constant(fm.values().clone());
        let m = fm.regions();
        let uniform = tape.constant(Tensor::filled(&[m], 1.0 / m as f64));
        let projected = if attention_on {
            Some(record_region_projection(tape, features, &bound.attention)?)
        } else {
            None
        };
        Ok(Self {
            features,
            projected,
            uniform,
            labels,
        })
    }

    pub fn attention_on(&self) -> bool {
        self.projected.is_some()
    }
}

/// Recurrent state carried between steps.
#[derive(Debug, Clone)]
pub struct DecoderState {
    /// Steps taken so far.
    pub t: usize,
    pub h: Var,
    pub cell: Var,
    /// `v_prob` before the first step, `σ(p_{t-1})` afterwards.
    pub v_pred: Var,
    /// Hard prediction vector: 1 for every label emitted so far.
    pub y_hard: Vec<f64>,
    pub pool: CandidatePool,
}

/// Tape handles produced by one step.
#[derive(Debug, Clone, Copy)]
pub struct StepVars {
    pub alpha: Var,
    pub z: Var,
    pub h: Var,
    pub cell: Var,
    pub logits: Var,
}

impl DecoderState {
    /// Runs the feature head and returns `(state at t = 0, feature-head logits)`.
    pub fn initial(tape: &mut Tape, bound: &BoundParams, ctx: &RegionContext, hidden: usize) -> Result<(Self, Var)> {
        let logits = record_feature_logits(tape, ctx.features, ctx.uniform, &bound.feature)?;
        let v_prob = tape.sigmoid(logits);
        let zeros = Tensor::zeros(&[hidden]);
        let state = Self {
            t: 0,
            h: tape.constant(zeros.clone()),
            cell: tape.constant(zeros),
            v_pred: v_prob,
            y_hard: vec![0.0; ctx.labels],
            pool: CandidatePool::full(ctx.labels),
        };
        Ok((state, logits))
    }

    /// State after emitting `label` from `step`. Gradient flows through `σ(p_t)`
    /// into the next `v_pred`; the hard vector and the pool are constants.
    pub fn advance(&self, tape: &mut Tape, step: &StepVars, label: usize) -> Result<Self> {
        let mut pool = self.pool.clone();
        pool.remove(label)?;
        let mut y_hard = self.y_hard.clone();
        y_hard[label] = 1.0;
        Ok(Self {
            t: self.t + 1,
            h: step.h,
            cell: step.cell,
            v_pred: tape.sigmoid(step.logits),
            y_hard,
            pool,
        })
    }
}

/// Attention, LSTM and prediction head for one time step.
///
/// This is the only place the recurrent step is built; the trainer, the greedy
/// decoder and beam search all call it.
pub fn decoder_step(
    tape: &mut Tape,
    bound: &BoundParams,
    ctx: &RegionContext,
    state: &DecoderState,
    dropout: Option<&mut Dropout>,
) -> Result<StepVars> {
    STEP_CALLS.with(|c| c.set(c.get() + 1));

    let alpha = match ctx.projected {
        Some(projected) => {
            let scores = record_scores(tape, projected, state.h, &bound.attention)?;
            tape.softmax(scores)?
        }
        None => ctx.uniform,
    };
    let z = tape.weighted_rows(alpha, ctx.features)?;
    let y_prev = tape.constant(Tensor::vector(state.y_hard.clone()));
    let input = tape.concat(&[state.v_pred, z, y_prev])?;

    let (lstm_input, hidden_mask) = match dropout {
        Some(d) => {
            let in_mask = tape.constant(d.mask(tape.value(input).len()));
            let hid_mask = tape.constant(d.mask(tape.value(bound.prediction.b1).len()));
            (tape.mul(input, in_mask)?, Some(hid_mask))
        }
        None => (input, None),
    };
    let (h, cell) = record_lstm_cell(tape, lstm_input, state.h, state.cell, &bound.lstm)?;
    let head_input = tape.concat(&[input, h])?;
    let logits = record_prediction(tape, head_input, &bound.prediction, hidden_mask)?;
    Ok(StepVars {
        alpha,
        z,
        h,
        cell,
        logits,
    })
}

/// Switches for [`unroll`].
#[derive(Debug, Default)]
pub struct UnrollOptions<'a> {
    /// When false, attention weights are fixed at `1/m` and `θ_a` is never used.
    pub attention_on: bool,
    /// Labels to emit in order instead of the most confident one.
    pub forced_order: Option<&'a [usize]>,
    pub dropout: Option<&'a mut Dropout>,
}

impl UnrollOptions<'_> {
    pub fn confidence() -> Self {
        Self {
            attention_on: true,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct UnrolledStep {
    pub vars: StepVars,
    pub label: usize,
    /// State the step was computed from.
    pub before: DecoderState,
}

#[derive(Debug, Clone)]
pub struct Unrolled {
    pub feature_logits: Var,
    pub steps: Vec<UnrolledStep>,
    pub last: DecoderState,
}

fn check_forced_order(order: &[usize], steps: usize, labels: usize) -> Result<()> {
    if order.len() != steps {
        return contract_err(format!("forced order has {} labels for {steps} steps", order.len()));
    }
    let mut seen = vec![false; labels];
    for &l in order {
        if l >= labels {
            return contract_err(format!("forced label {l} outside 0..{labels}"));
        }
        if std::mem::replace(&mut seen[l], true) {
            return contract_err(format!("forced order repeats label {l}"));
        }
    }
    Ok(())
}

/// Runs the feature head once and then `steps` decoder steps, choosing each
/// label from the candidate pool (or from `forced_order`).
pub fn unroll(
    tape: &mut Tape,
    bound: &BoundParams,
    fm: &FeatureMaps,
    params: &ModelParams,
    steps: usize,
    opts: UnrollOptions<'_>,
) -> Result<Unrolled> {
    let c = params.dims.labels;
    params.check_features(fm)?;
    if steps == 0 || steps > c {
        return contract_err(format!("unroll length {steps} outside 1..={c}"));
    }
    if let Some(order) = opts.forced_order {
        check_forced_order(order, steps, c)?;
    }
    let ctx = RegionContext::new(tape, fm, bound, c, opts.attention_on)?;
    let (mut state, feature_logits) = DecoderState::initial(tape, bound, &ctx, params.dims.hidden)?;
    let mut dropout = opts.dropout;
    let mut out = Vec::with_capacity(steps);
    for t in 0..steps {
        let vars = decoder_step(tape, bound, &ctx, &state, dropout.as_deref_mut())?;
        let label = match opts.forced_order {
            Some(order) => order[t],
            None => pool_select(tape.value(vars.logits).data(), &state.pool)?,
        };
        let next = state.advance(tape, &vars, label)?;
        out.push(UnrolledStep {
            vars,
            label,
            before: std::mem::replace(&mut state, next),
        });
    }
    Ok(Unrolled {
        feature_logits,
        steps: out,
        last: state,
    })
}

/// Snapshot of one unrolled step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepState {
    /// 1-based step index.
    pub t: usize,
    pub h: Tensor,
    pub cell: Tensor,
    /// Raw logits `p_t`.
    pub p: Tensor,
    pub alpha: Tensor,
    pub z: Tensor,
    /// `ỹ_t`, including the label chosen at this step.
    pub y_hard: Tensor,
    /// Pool left after this step's selection.
    pub pool: CandidatePool,
    /// Soft vector fed into this step.
    pub v_pred: Tensor,
    pub label: usize,
}

/// Value-level [`unroll`] with every parameter held constant.
pub fn unroll_states(
    fm: &FeatureMaps,
    params: &ModelParams,
    steps: usize,
    opts: UnrollOptions<'_>,
) -> Result<Vec<StepState>> {
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params, Trainable::NONE);
    let run = unroll(&mut tape, &bound, fm, params, steps, opts)?;
    let after = run
        .steps
        .iter()
        .skip(1)
        .map(|s| &s.before)
        .chain(std::iter::once(&run.last));
    Ok(run
        .steps
        .iter()
        .zip(after)
        .map(|(s, next)| StepState {
            t: next.t,
            h: tape.value(s.vars.h).clone(),
            cell: tape.value(s.vars.cell).clone(),
            p: tape.value(s.vars.logits).clone(),
            alpha: tape.value(s.vars.alpha).clone(),
            z: tape.value(s.vars.z).clone(),
            y_hard: Tensor::vector(next.y_hard.clone()),
            pool: next.pool.clone(),
            v_pred: tape.value(s.before.v_pred).clone(),
            label: s.label,
        })
        .collect())
}
