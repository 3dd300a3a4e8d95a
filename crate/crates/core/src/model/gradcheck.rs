use serde::Serialize;

use super::{backward, forward, head, hidden_state, ModelError, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    /// Worst per-tensor relative error
    /// `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞, 1e-12)`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub worst_tensor: &'static str,
}

/// Compares `backward` against central finite differences of the loss for
/// every parameter.
///
/// In head-only mode the analytic gradient treats `h` as a constant, so the
/// finite differences are taken with `h` frozen at its unperturbed value.
pub fn grad_check(params: &ModelParams, context: &[usize], target: usize, step: f64) -> Result<GradCheckReport, ModelError> {
    if !(1e-7..=1e-3).contains(&step) {
        return Err(ModelError::BadStep(step));
    }
    let trace = forward(params, context, target)?;
    let analytic = backward(params, &trace)?;
    let frozen_h = params.head_only_grad.then(|| trace.h.clone());

    let loss = |p: &ModelParams| -> Result<f64, ModelError> {
        match &frozen_h {
            Some(h) => Ok(head(p.output_table(), h, target)?.2),
            None => {
                let (_, h) = hidden_state(p, context)?;
                Ok(head(p.output_table(), &h, target)?.2)
            }
        }
    };

    let mut work = params.clone();
    let names: Vec<&'static str> = params.tensors().iter().map(|(n, _)| *n).collect();
    let mut report = GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, worst_tensor: names[0] };
    for (t, name) in names.iter().enumerate() {
        let len = params.tensors()[t].1.len();
        let mut numeric = vec![0.0; len];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let orig = params.tensors()[t].1[k];
            work.tensors_mut()[t].1[k] = orig + step;
            let up = loss(&work)?;
            work.tensors_mut()[t].1[k] = orig - step;
            let down = loss(&work)?;
            work.tensors_mut()[t].1[k] = orig;
            *slot = (up - down) / (2.0 * step);
        }
        let exact = analytic.tensors()[t].1;
        let inf = |xs: &[f64]| xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let diff = exact.iter().zip(&numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        let rel = diff / inf(exact).max(inf(&numeric)).max(1e-12);
        report.max_abs_error = report.max_abs_error.max(diff);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_tensor = name;
        }
    }
    Ok(report)
}
