use crate::autodiff::{Gradients, Tape, Var};
use crate::model::{ModelParams, ParamGroup};
use crate::tensor::Tensor;

/// Which parameter groups become trainable leaves when bound to a tape.
/// Frozen groups are recorded as constants and so receive no gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub feature: bool,
    pub attention: bool,
    pub lstm: bool,
    pub prediction: bool,
}

impl Trainable {
    pub const ALL: Self = Self {
        feature: true,
        attention: true,
        lstm: true,
        prediction: true,
    };
    pub const NONE: Self = Self {
        feature: false,
        attention: false,
        lstm: false,
        prediction: false,
    };
    /// First training phase.
    pub const FEATURE_ONLY: Self = Self {
        feature: true,
        ..Self::NONE
    };
    /// Second training phase: everything except the feature head.
    pub const JOINT: Self = Self {
        feature: false,
        ..Self::ALL
    };

    pub fn contains(&self, group: ParamGroup) -> bool {
        match group {
            ParamGroup::Feature => self.feature,
            ParamGroup::Attention => self.attention,
            ParamGroup::Lstm => self.lstm,
            ParamGroup::Prediction => self.prediction,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FeatureVars {
    pub weight: Var,
    pub bias: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub w_region: Var,
    pub w_hidden: Var,
    pub bias: Var,
    pub w_score: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    pub w_input: Var,
    pub w_hidden: Var,
    pub bias: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct PredictionVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// Model parameters recorded as leaves of one tape.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub feature: FeatureVars,
    pub attention: AttentionVars,
    pub lstm: LstmVars,
    pub prediction: PredictionVars,
    vars: Vec<Var>,
}

impl BoundParams {
    pub fn bind(tape: &mut Tape, params: &ModelParams, trainable: Trainable) -> Self {
        let vars: Vec<Var> = params
            .tensors()
            .into_iter()
            .map(|(group, _, t)| {
                if trainable.contains(group) {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Self::from_vars(vars)
    }

    /// Wraps leaves already on the tape, in [`crate::model::param_layout`] order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        assert_eq!(vars.len(), 13, "one var per model tensor");
        let v = &vars;
        Self {
            feature: FeatureVars {
                weight: v[0],
                bias: v[1],
            },
            attention: AttentionVars {
                w_region: v[2],
                w_hidden: v[3],
                bias: v[4],
                w_score: v[5],
            },
            lstm: LstmVars {
                w_input: v[6],
                w_hidden: v[7],
                bias: v[8],
            },
            prediction: PredictionVars {
                w1: v[9],
                b1: v[10],
                w2: v[11],
                b2: v[12],
            },
            vars,
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Per-tensor gradients in layout order; exact zeros for tensors the loss never reached.
    pub fn gradients(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|&v| grads.get(v)).collect()
    }
}
