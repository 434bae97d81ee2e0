//! The network: feature head, additive attention, LSTM cell and two-layer
//! prediction head, plus the per-image unroll that chains them.

mod bind;
pub mod checkpoint;
pub mod layers;
mod unroll;

pub use bind::{AttentionVars, BoundParams, FeatureVars, LstmVars, PredictionVars, Trainable};
pub use layers::{
    attention_scores, attention_weights, context_vector, feature_map_forward, lstm_step,
    predict_step,
};
pub use unroll::{
    decoder_step, shared_step_calls, unroll, unroll_states, DecoderState, RegionContext,
    StepState, StepVars, UnrollOptions, Unrolled,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config_err, shape_err, Result};
use crate::tensor::Tensor;

/// Region vectors of one image: `regions × feature_dim`, row per region.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    values: Tensor,
}

impl FeatureMaps {
    pub fn new(values: Tensor) -> Result<Self> {
        values.shape2()?;
        if !values.is_finite() {
            return shape_err("feature maps must be finite");
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(Tensor::matrix(rows, cols, data)?)
    }

    pub fn regions(&self) -> usize {
        self.values.dims()[0]
    }

    pub fn feature_dim(&self) -> usize {
        self.values.dims()[1]
    }

    pub fn region(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }
}

/// Layer sizes. `regions` is carried so checkpoints can be matched against datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub labels: usize,
    pub feature_dim: usize,
    pub hidden: usize,
    pub attention: usize,
    pub pred_hidden: usize,
    pub regions: usize,
}

impl ModelDims {
    /// Defaults for the hidden sizes (64 / 32 / 64).
    pub fn with_defaults(labels: usize, feature_dim: usize, regions: usize) -> Self {
        Self {
            labels,
            feature_dim,
            hidden: 64,
            attention: 32,
            pred_hidden: 64,
            regions,
        }
    }

    /// Width of `[v_pred, z, ỹ]`.
    pub fn step_input(&self) -> usize {
        2 * self.labels + self.feature_dim
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.labels,
            self.feature_dim,
            self.hidden,
            self.attention,
            self.pred_hidden,
            self.regions,
        ];
        if all.iter().any(|&d| d == 0) {
            return config_err(format!("all model dims must be positive: {self:?}"));
        }
        Ok(())
    }
}

/// Which of the four trainable groups a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Feature,
    Attention,
    Lstm,
    Prediction,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [Self::Feature, Self::Attention, Self::Lstm, Self::Prediction];

    pub fn name(self) -> &'static str {
        match self {
            Self::Feature => "theta_R",
            Self::Attention => "theta_a",
            Self::Lstm => "theta_L",
            Self::Prediction => "theta_p",
        }
    }
}

/// Fully-connected layer on mean-pooled regions: `labels × feature_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// `score_i = w_scoreᵀ tanh(w_region v_i + w_hidden h + bias)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_region: Tensor,
    pub w_hidden: Tensor,
    pub bias: Tensor,
    pub w_score: Tensor,
}

/// Gate rows are stacked as input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_input: Tensor,
    pub w_hidden: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionHead {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub feature: FeatureHead,
    pub attention: AttentionParams,
    pub lstm: LstmParams,
    pub prediction: PredictionHead,
}

/// Name and shape of every tensor, in checkpoint order.
pub fn param_layout(d: &ModelDims) -> Vec<(ParamGroup, &'static str, Vec<usize>)> {
    use ParamGroup::*;
    let (c, k, h, a, hp) = (d.labels, d.feature_dim, d.hidden, d.attention, d.pred_hidden);
    let x = d.step_input();
    vec![
        (Feature, "weight", vec![c, k]),
        (Feature, "bias", vec![c]),
        (Attention, "w_region", vec![a, k]),
        (Attention, "w_hidden", vec![a, h]),
        (Attention, "bias", vec![a]),
        (Attention, "w_score", vec![a]),
        (Lstm, "w_input", vec![4 * h, x]),
        (Lstm, "w_hidden", vec![4 * h, h]),
        (Lstm, "bias", vec![4 * h]),
        (Prediction, "w1", vec![hp, x + h]),
        (Prediction, "b1", vec![hp]),
        (Prediction, "w2", vec![c, hp]),
        (Prediction, "b2", vec![c]),
    ]
}

impl ModelParams {
    pub fn zeros(dims: ModelDims) -> Result<Self> {
        dims.validate()?;
        let tensors = param_layout(&dims)
            .into_iter()
            .map(|(_, _, shape)| Tensor::zeros(&shape))
            .collect();
        Self::from_tensors(dims, tensors)
    }

    /// Uniform `±1/sqrt(fan_in)` weights, zero biases, forget-gate bias 1.
    pub fn init(dims: ModelDims, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(dims)?;
        for (_, name, t) in params.tensors_mut() {
            if t.rank() == 2 || name == "w_score" {
                let fan_in = *t.dims().last().expect("rank >= 1") as f64;
                let s = 1.0 / fan_in.sqrt();
                for v in t.data_mut() {
                    *v = rng.random_range(-s..s);
                }
            }
        }
        let h = dims.hidden;
        for v in &mut params.lstm.bias.data_mut()[h..2 * h] {
            *v = 1.0;
        }
        Ok(params)
    }

    /// Rebuilds from tensors listed in [`param_layout`] order.
    pub fn from_tensors(dims: ModelDims, tensors: Vec<Tensor>) -> Result<Self> {
        dims.validate()?;
        let layout = param_layout(&dims);
        if tensors.len() != layout.len() {
            return shape_err(format!("expected {} tensors, got {}", layout.len(), tensors.len()));
        }
        for ((g, name, shape), t) in layout.iter().zip(&tensors) {
            if t.dims() != shape.as_slice() {
                return shape_err(format!(
                    "{}.{name}: expected {shape:?}, got {:?}",
                    g.name(),
                    t.dims()
                ));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        Ok(Self {
            dims,
            feature: FeatureHead {
                weight: next(),
                bias: next(),
            },
            attention: AttentionParams {
                w_region: next(),
                w_hidden: next(),
                bias: next(),
                w_score: next(),
            },
            lstm: LstmParams {
                w_input: next(),
                w_hidden: next(),
                bias: next(),
            },
            prediction: PredictionHead {
                w1: next(),
                b1: next(),
                w2: next(),
                b2: next(),
            },
        })
    }

    pub fn tensors(&self) -> Vec<(ParamGroup, &'static str, &Tensor)> {
        use ParamGroup::*;
        vec![
            (Feature, "weight", &self.feature.weight),
            (Feature, "bias", &self.feature.bias),
            (Attention, "w_region", &self.attention.w_region),
            (Attention, "w_hidden", &self.attention.w_hidden),
            (Attention, "bias", &self.attention.bias),
            (Attention, "w_score", &self.attention.w_score),
            (Lstm, "w_input", &self.lstm.w_input),
            (Lstm, "w_hidden", &self.lstm.w_hidden),
            (Lstm, "bias", &self.lstm.bias),
            (Prediction, "w1", &self.prediction.w1),
            (Prediction, "b1", &self.prediction.b1),
            (Prediction, "w2", &self.prediction.w2),
            (Prediction, "b2", &self.prediction.b2),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(ParamGroup, &'static str, &mut Tensor)> {
        use ParamGroup::*;
        vec![
            (Feature, "weight", &mut self.feature.weight),
            (Feature, "bias", &mut self.feature.bias),
            (Attention, "w_region", &mut self.attention.w_region),
            (Attention, "w_hidden", &mut self.attention.w_hidden),
            (Attention, "bias", &mut self.attention.bias),
            (Attention, "w_score", &mut self.attention.w_score),
            (Lstm, "w_input", &mut self.lstm.w_input),
            (Lstm, "w_hidden", &mut self.lstm.w_hidden),
            (Lstm, "bias", &mut self.lstm.bias),
            (Prediction, "w1", &mut self.prediction.w1),
            (Prediction, "b1", &mut self.prediction.b1),
            (Prediction, "w2", &mut self.prediction.w2),
            (Prediction, "b2", &mut self.prediction.b2),
        ]
    }

    /// Owned copies in [`param_layout`] order.
    pub fn to_tensors(&self) -> Vec<Tensor> {
        self.tensors().into_iter().map(|(_, _, t)| t.clone()).collect()
    }

    pub fn group_of(&self) -> Vec<ParamGroup> {
        self.tensors().into_iter().map(|(g, _, _)| g).collect()
    }

    pub fn check_features(&self, fm: &FeatureMaps) -> Result<()> {
        if fm.feature_dim() != self.dims.feature_dim {
            return shape_err(format!(
                "feature maps have k={}, model expects {}",
                fm.feature_dim(),
                self.dims.feature_dim
            ));
        }
        Ok(())
    }
}
