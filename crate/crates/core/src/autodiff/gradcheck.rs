use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// `max |analytic - fd| / max(1, |analytic|, |fd|)` over every coordinate.
    pub max_rel_error: f64,
    /// `(parameter index, flat offset)` where the maximum occurred.
    pub worst: (usize, usize),
    pub coordinates: usize,
}

/// Checks every coordinate of `params` by central differences with step `eps`.
///
/// `f` must build the same deterministic scalar on whatever tape it is given;
/// it is called once with parameter leaves for the analytic pass and twice per
/// coordinate for the numeric pass.
pub fn grad_check<F>(params: &[Tensor], eps: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();

    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.constant(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
    };
    for pi in 0..params.len() {
        for j in 0..params[pi].len() {
            let orig = params[pi].data()[j];
            work[pi].data_mut()[j] = orig + eps;
            let up = eval(&work)?;
            work[pi].data_mut()[j] = orig - eps;
            let down = eval(&work)?;
            work[pi].data_mut()[j] = orig;

            let fd = (up - down) / (2.0 * eps);
            let an = analytic[pi].data()[j];
            let rel = (an - fd).abs() / 1f64.max(an.abs()).max(fd.abs());
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (pi, j);
            }
            report.coordinates += 1;
        }
    }
    Ok(report)
}
