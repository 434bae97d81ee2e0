//! Two-phase training: the feature head alone, then attention, LSTM and
//! prediction head together on the model's own label sequences.

mod adam;
mod dropout;
mod eval;

pub use adam::{adam_update, AdamState, Moments, BETA1, BETA2, EPSILON};
pub use dropout::{dropout_mask, Dropout};
pub use eval::{evaluate, feature_head_predictions, predict_dataset, tune_threshold, ThresholdSweep};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::data::{label_frequency_order, DatasetManifest, FrequencyDirection, Instance};
use crate::decode::BeamConfig;
use crate::error::{config_err, contract_err, Result};
use crate::metrics::Evaluation;
use crate::model::{unroll, BoundParams, ModelDims, ModelParams, ParamGroup, Trainable, UnrollOptions};
use crate::model::layers::record_feature_logits;
use crate::tensor::Tensor;

/// How labels are ordered along the unroll during phase 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OrderMode {
    /// Most confident remaining label at every step.
    #[default]
    Confidence,
    /// Instance positives sorted by training-set frequency, high to low.
    FrequencyFirst,
    /// Exact reverse of `FrequencyFirst`.
    RareFirst,
}

impl OrderMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Confidence => "confidence",
            Self::FrequencyFirst => "frequency_first",
            Self::RareFirst => "rare_first",
        }
    }
}

impl std::str::FromStr for OrderMode {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "confidence" => Ok(Self::Confidence),
            "frequency_first" | "frequency-first" => Ok(Self::FrequencyFirst),
            "rare_first" | "rare-first" => Ok(Self::RareFirst),
            other => config_err(format!("unknown order mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub keep_prob: f64,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub seed: u64,
    /// Instances whose gradients are averaged into one update.
    pub batch: usize,
    pub order_mode: OrderMode,
    /// When false, phase 2 runs with uniform attention and `θ_a` is zeroed.
    pub attention_on: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            keep_prob: 0.8,
            epochs_phase1: 5,
            epochs_phase2: 20,
            seed: 0,
            batch: 1,
            order_mode: OrderMode::Confidence,
            attention_on: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return config_err(format!("learning rate must be finite and non-negative, got {}", self.lr));
        }
        dropout::check_keep_prob(self.keep_prob)?;
        if self.batch == 0 {
            return config_err("batch must be at least 1");
        }
        Ok(())
    }
}

/// SplitMix64 finalizer over the words, for deriving independent seeds.
pub fn derive_seed(words: &[u64]) -> u64 {
    let mut x: u64 = 0x9E37_79B9_7F4A_7C15;
    for &w in words {
        x = x.wrapping_add(w).wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = x;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        x = z ^ (z >> 31);
    }
    x
}

fn epoch_permutation(n: usize, seed: u64, phase: u64, epoch: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, phase, epoch]));
    idx.shuffle(&mut rng);
    idx
}

fn check_instance(params: &ModelParams, inst: &Instance) -> Result<()> {
    params.check_features(&inst.features)?;
    if let Some(&l) = inst.labels.iter().find(|&&l| l >= params.dims.labels) {
        return contract_err(format!("instance {} has label {l} outside the model", inst.id));
    }
    Ok(())
}

/// Feature-head BCE loss and its gradients (only `θ_R` non-zero).
pub fn feature_loss_and_grads(params: &ModelParams, inst: &Instance) -> Result<(f64, Vec<Tensor>)> {
    check_instance(params, inst)?;
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params, Trainable::FEATURE_ONLY);
    let m = inst.features.regions();
    let features = tape.constant(inst.features.values().clone());
    let uniform = tape.constant(Tensor::filled(&[m], 1.0 / m as f64));
    let logits = record_feature_logits(&mut tape, features, uniform, &bound.feature)?;
    let loss = tape.bce_with_logits(logits, &inst.target(params.dims.labels))?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).data()[0], bound.gradients(&grads)))
}

fn active_mask(params: &ModelParams, trainable: Trainable) -> Vec<bool> {
    params.group_of().into_iter().map(|g| trainable.contains(g)).collect()
}

fn apply_mean(
    params: &mut ModelParams,
    opt: &mut AdamState,
    sum: &mut [Tensor],
    count: usize,
    active: &[bool],
    lr: f64,
) -> Result<()> {
    if count > 1 {
        for g in sum.iter_mut() {
            for v in g.data_mut() {
                *v /= count as f64;
            }
        }
    }
    let mut refs: Vec<&mut Tensor> = params.tensors_mut().into_iter().map(|(_, _, t)| t).collect();
    opt.apply(&mut refs, sum, active, lr)?;
    for g in sum.iter_mut() {
        g.data_mut().fill(0.0);
    }
    Ok(())
}

fn accumulate(sum: &mut [Tensor], grads: &[Tensor]) {
    for (s, g) in sum.iter_mut().zip(grads) {
        for (a, b) in s.data_mut().iter_mut().zip(g.data()) {
            *a += b;
        }
    }
}

/// Phase 1: Adam on `θ_R` alone, every other tensor left untouched.
/// Returns the mean loss of each epoch.
pub fn train_feature_layer(ds: &DatasetManifest, params: &mut ModelParams, cfg: &TrainConfig) -> Result<Vec<f64>> {
    train_feature_epochs(ds, params, cfg, |_, _, _| Ok(()))
}

fn train_feature_epochs(
    ds: &DatasetManifest,
    params: &mut ModelParams,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64, &ModelParams) -> Result<()>,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if ds.is_empty() {
        return contract_err("cannot train on an empty dataset");
    }
    let mut opt = AdamState::new(params.to_tensors().iter());
    let active = active_mask(params, Trainable::FEATURE_ONLY);
    let mut sum: Vec<Tensor> = params.to_tensors().iter().map(|t| Tensor::zeros(t.dims())).collect();
    let mut losses = Vec::with_capacity(cfg.epochs_phase1);
    for epoch in 0..cfg.epochs_phase1 {
        let mut total = 0.0;
        let mut pending = 0;
        for i in epoch_permutation(ds.len(), cfg.seed, 1, epoch as u64) {
            let (loss, grads) = feature_loss_and_grads(params, &ds.instances[i])?;
            total += loss;
            accumulate(&mut sum, &grads);
            pending += 1;
            if pending == cfg.batch {
                apply_mean(params, &mut opt, &mut sum, pending, &active, cfg.lr)?;
                pending = 0;
            }
        }
        if pending > 0 {
            apply_mean(params, &mut opt, &mut sum, pending, &active, cfg.lr)?;
        }
        let mean = total / ds.len() as f64;
        on_epoch(epoch + 1, mean, params)?;
        losses.push(mean);
    }
    Ok(losses)
}

/// Positives of `inst` in the order of `global` (see [`global_order`]), or
/// `None` in confidence mode.
pub fn instance_order(inst: &Instance, mode: OrderMode, global: &[usize]) -> Option<Vec<usize>> {
    match mode {
        OrderMode::Confidence => None,
        OrderMode::FrequencyFirst | OrderMode::RareFirst => {
            Some(global.iter().copied().filter(|l| inst.labels.contains(l)).collect())
        }
    }
}

/// Global label order used by the fixed-order modes.
pub fn global_order(train: &DatasetManifest, mode: OrderMode) -> Vec<usize> {
    match mode {
        OrderMode::RareFirst => label_frequency_order(train, FrequencyDirection::Ascending),
        _ => label_frequency_order(train, FrequencyDirection::Descending),
    }
}

/// Phase-2 loss `Σ_t BCE(p_t, y)` over `T = |positives|` steps and the gradient
/// of every tensor (exact zeros for `θ_R`, and for `θ_a` when attention is off).
pub fn joint_loss_and_grads(
    params: &ModelParams,
    inst: &Instance,
    cfg: &TrainConfig,
    forced_order: Option<&[usize]>,
    dropout_seed: u64,
) -> Result<(f64, Vec<Tensor>)> {
    check_instance(params, inst)?;
    let steps = inst.labels.len();
    let target = inst.target(params.dims.labels);
    let mut tape = Tape::new();
    let bound = BoundParams::bind(&mut tape, params, Trainable::JOINT);
    let mut dropout = Dropout::new(cfg.keep_prob, dropout_seed)?;
    let use_dropout = cfg.keep_prob < 1.0;
    let run = unroll(
        &mut tape,
        &bound,
        &inst.features,
        params,
        steps,
        UnrollOptions {
            attention_on: cfg.attention_on,
            forced_order,
            dropout: use_dropout.then_some(&mut dropout),
        },
    )?;
    let mut loss = None;
    for step in &run.steps {
        let l = tape.bce_with_logits(step.vars.logits, &target)?;
        loss = Some(match loss {
            None => l,
            Some(acc) => tape.add(acc, l)?,
        });
    }
    let loss = loss.expect("at least one step");
    let value = tape.value(loss).data()[0];
    if !value.is_finite() {
        return contract_err(format!("non-finite loss on instance {}", inst.id));
    }
    let grads = tape.backward(loss)?;
    Ok((value, bound.gradients(&grads)))
}

fn joint_trainable(cfg: &TrainConfig) -> Trainable {
    Trainable {
        attention: cfg.attention_on,
        ..Trainable::JOINT
    }
}

/// One phase-2 update on a single instance. Returns `None` (and changes
/// nothing) when the instance has no positive label.
pub fn joint_train_step(
    inst: &Instance,
    params: &mut ModelParams,
    opt: &mut AdamState,
    cfg: &TrainConfig,
    forced_order: Option<&[usize]>,
    dropout_seed: u64,
) -> Result<Option<f64>> {
    if inst.labels.is_empty() {
        return Ok(None);
    }
    let (loss, mut grads) = joint_loss_and_grads(params, inst, cfg, forced_order, dropout_seed)?;
    let active = active_mask(params, joint_trainable(cfg));
    apply_mean(params, opt, &mut grads, 1, &active, cfg.lr)?;
    Ok(Some(loss))
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: u8,
    pub mean_loss: f64,
    pub validation: Option<Evaluation>,
}

impl EpochLog {
    /// `epoch\tphase\tmean_loss\tval_C-F1\tval_O-F1`; `-` when there is no validation set.
    pub fn line(&self) -> String {
        let (c, o) = match &self.validation {
            Some(e) => (format!("{:.4}", e.per_class.f1), format!("{:.4}", e.overall.f1)),
            None => ("-".into(), "-".into()),
        };
        format!("{}\t{}\t{:.6}\t{c}\t{o}", self.epoch, self.phase, self.mean_loss)
    }
}

pub const LOG_HEADER: &str = "epoch\tphase\tmean_loss\tval_C-F1\tval_O-F1";

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    /// Instances skipped in phase 2 for having no positive label, summed over epochs.
    pub skipped: usize,
}

/// Initializes a model and runs both phases back to back.
///
/// Validation after a phase-1 epoch thresholds the feature head at 0.5; after
/// a phase-2 epoch it decodes with `val_beam`.
pub fn train(
    train_set: &DatasetManifest,
    validation: Option<&DatasetManifest>,
    dims: ModelDims,
    cfg: &TrainConfig,
    val_beam: &BeamConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    train_set.validate()?;
    if dims.labels != train_set.labels || dims.feature_dim != train_set.feature_dim || dims.regions != train_set.regions {
        return config_err("model dims do not match the training set");
    }
    let mut params = ModelParams::init(dims, derive_seed(&[cfg.seed, 0]))?;
    if !cfg.attention_on {
        for (g, _, t) in params.tensors_mut() {
            if g == ParamGroup::Attention {
                t.data_mut().fill(0.0);
            }
        }
    }
    let val_beam = BeamConfig {
        attention: cfg.attention_on,
        ..*val_beam
    };

    let mut log = Vec::new();
    let emit = |entry: EpochLog, log: &mut Vec<EpochLog>| {
        log::info!("{}", entry.line());
        log.push(entry);
    };

    train_feature_epochs(train_set, &mut params, cfg, |epoch, mean_loss, params| {
        let validation = match validation {
            Some(v) => Some(eval::score(&feature_head_predictions(params, v, 0.5)?, v)?),
            None => None,
        };
        emit(EpochLog { epoch, phase: 1, mean_loss, validation }, &mut log);
        Ok(())
    })?;

    let global = global_order(train_set, cfg.order_mode);
    let trainable = joint_trainable(cfg);
    let active = active_mask(&params, trainable);
    let mut opt = AdamState::new(params.to_tensors().iter());
    let mut sum: Vec<Tensor> = params.to_tensors().iter().map(|t| Tensor::zeros(t.dims())).collect();
    let mut skipped = 0;
    for epoch in 0..cfg.epochs_phase2 {
        let mut total = 0.0;
        let mut seen = 0;
        let mut pending = 0;
        for i in epoch_permutation(train_set.len(), cfg.seed, 2, epoch as u64) {
            let inst = &train_set.instances[i];
            if inst.labels.is_empty() {
                skipped += 1;
                continue;
            }
            let order = instance_order(inst, cfg.order_mode, &global);
            let seed = derive_seed(&[cfg.seed, 2, epoch as u64, i as u64]);
            let (loss, grads) = joint_loss_and_grads(&params, inst, cfg, order.as_deref(), seed)?;
            total += loss;
            seen += 1;
            accumulate(&mut sum, &grads);
            pending += 1;
            if pending == cfg.batch {
                apply_mean(&mut params, &mut opt, &mut sum, pending, &active, cfg.lr)?;
                pending = 0;
            }
        }
        if pending > 0 {
            apply_mean(&mut params, &mut opt, &mut sum, pending, &active, cfg.lr)?;
        }
        let validation = match validation {
            Some(v) => Some(evaluate(&params, v, &val_beam)?),
            None => None,
        };
        let mean_loss = if seen == 0 { 0.0 } else { total / seen as f64 };
        emit(EpochLog { epoch: epoch + 1, phase: 2, mean_loss, validation }, &mut log);
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} instance visits without positive labels");
    }
    Ok(TrainReport { params, log, skipped })
}
