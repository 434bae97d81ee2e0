use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moments for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
}

impl Moments {
    pub fn zeros_like(t: &Tensor) -> Self {
        Self {
            m: Tensor::zeros(t.dims()),
            v: Tensor::zeros(t.dims()),
        }
    }
}

/// Bias-corrected Adam step `t` (1-based) on one tensor.
pub fn adam_update(param: &mut Tensor, grad: &Tensor, moments: &mut Moments, t: u64, lr: f64) -> Result<()> {
    if !param.same_shape(grad) || !param.same_shape(&moments.m) || !param.same_shape(&moments.v) {
        return shape_err(format!(
            "adam: param {:?}, grad {:?}, moments {:?}",
            param.dims(),
            grad.dims(),
            moments.m.dims()
        ));
    }
    let c1 = 1.0 - BETA1.powi(t as i32);
    let c2 = 1.0 - BETA2.powi(t as i32);
    let m = moments.m.data_mut();
    let v = moments.v.data_mut();
    for (i, (p, &g)) in param.data_mut().iter_mut().zip(grad.data()).enumerate() {
        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g;
        v[i] = BETA2 * v[i] + (1.0 - BETA2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + EPSILON);
    }
    Ok(())
}

/// Adam state for a list of tensors sharing one step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub moments: Vec<Moments>,
    pub step: u64,
}

impl AdamState {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        Self {
            moments: params.into_iter().map(Moments::zeros_like).collect(),
            step: 0,
        }
    }

    /// One step over `params[i]` for every `i` where `active[i]`; the counter
    /// advances once per call.
    pub fn apply(&mut self, params: &mut [&mut Tensor], grads: &[Tensor], active: &[bool], lr: f64) -> Result<()> {
        if params.len() != self.moments.len() || grads.len() != params.len() || active.len() != params.len() {
            return shape_err(format!(
                "adam: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.moments.len()
            ));
        }
        self.step += 1;
        for (i, p) in params.iter_mut().enumerate() {
            if active[i] {
                adam_update(p, &grads[i], &mut self.moments[i], self.step, lr)?;
            }
        }
        Ok(())
    }
}
