use super::{mse_loss, ModelGraph, NnError, Result, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Max over all checked entries of `|a − n| / max(|a|, |n|, 1e-8)`.
    pub max_rel_error: f64,
    /// Where the maximum occurred, e.g. `param 3[17]` or `input[5]`.
    pub worst: String,
    pub entries_checked: usize,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares backpropagated MSE gradients against central differences
/// `(L(p+ε) − L(p−ε)) / 2ε` for every parameter entry and every input entry.
///
/// The forward pass runs in the model's own mode with its own seed, so
/// dropout masks are frozen across perturbations.
pub fn gradient_check(model: &ModelGraph, batch: &Tensor, targets: &Tensor, epsilon: f64) -> Result<GradCheckReport> {
    if !(1e-6..=1e-4).contains(&epsilon) {
        return Err(NnError::InvalidArgument(format!(
            "epsilon {epsilon} outside [1e-6, 1e-4]"
        )));
    }
    let loss_of = |m: &ModelGraph, x: &Tensor| -> Result<f64> {
        let (y, _) = m.forward(x)?;
        Ok(mse_loss(&y, targets)?.0)
    };

    let (y1, cache) = model.forward(batch)?;
    let (y2, _) = model.forward(batch)?;
    if y1.data().iter().zip(y2.data()).any(|(a, b)| a.to_bits() != b.to_bits()) {
        return Err(NnError::NonDeterministicForward);
    }
    let (_, dy) = mse_loss(&y1, targets)?;
    let grads = model.backward(&cache, &dy)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        entries_checked: 0,
    };
    let mut record = |err: f64, at: String| {
        report.entries_checked += 1;
        if err > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = at;
        }
    };

    let base = model.clone_params();
    let mut probe = model.clone();
    for (p, analytic) in grads.params.iter().enumerate() {
        for e in 0..base[p].len() {
            let mut plus = base.clone();
            plus[p].data_mut()[e] += epsilon;
            probe.set_params(plus)?;
            let lp = loss_of(&probe, batch)?;
            let mut minus = base.clone();
            minus[p].data_mut()[e] -= epsilon;
            probe.set_params(minus)?;
            let lm = loss_of(&probe, batch)?;
            let numeric = (lp - lm) / (2.0 * epsilon);
            record(rel_error(analytic.data()[e], numeric), format!("param {p}[{e}]"));
        }
    }

    for e in 0..batch.len() {
        let mut plus = batch.clone();
        plus.data_mut()[e] += epsilon;
        let mut minus = batch.clone();
        minus.data_mut()[e] -= epsilon;
        let numeric = (loss_of(model, &plus)? - loss_of(model, &minus)?) / (2.0 * epsilon);
        record(rel_error(grads.input.data()[e], numeric), format!("input[{e}]"));
    }
    Ok(report)
}
