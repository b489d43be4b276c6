use super::{NnError, Result, Tensor};

/// Mean squared error and its gradient `2(ŷ−y)/n` with respect to `ŷ`.
pub fn mse_loss(predictions: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    if !predictions.same_shape(targets) {
        return Err(NnError::ShapeMismatch(format!(
            "predictions {:?} vs targets {:?}",
            predictions.shape(),
            targets.shape()
        )));
    }
    let n = predictions.len() as f64;
    let mut loss = 0.0;
    let grad = predictions
        .data()
        .iter()
        .zip(targets.data())
        .map(|(p, t)| {
            let r = p - t;
            loss += r * r;
            2.0 * r / n
        })
        .collect();
    Ok((loss / n, Tensor::new(predictions.shape().to_vec(), grad)?))
}
