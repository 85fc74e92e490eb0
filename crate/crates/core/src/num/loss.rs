use crate::error::Result;
use crate::num::Tensor3;

/// Mean absolute error over every element of a batch, with its gradient
/// `sign(pred - target) / N` (sign(0) = 0).
pub fn l1_loss_batch(pred: &[Tensor3], target: &[Tensor3]) -> Result<(f64, Vec<Tensor3>)> {
    if pred.len() != target.len() {
        return Err(crate::error::shape_err(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    let total: usize = pred.iter().map(|t| t.len()).sum();
    let inv = if total > 0 { 1.0 / total as f64 } else { 0.0 };
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(pred.len());
    for (p, t) in pred.iter().zip(target) {
        p.check_same_shape(t)?;
        let mut g = Tensor3::zeros(p.channels, p.height, p.width);
        for ((gv, &a), &b) in g.data.iter_mut().zip(&p.data).zip(&t.data) {
            let d = a - b;
            loss += d.abs();
            *gv = if d > 0.0 {
                inv
            } else if d < 0.0 {
                -inv
            } else {
                0.0
            };
        }
        grads.push(g);
    }
    Ok((loss * inv, grads))
}

pub fn l1_loss(pred: &Tensor3, target: &Tensor3) -> Result<(f64, Tensor3)> {
    let (loss, mut g) = l1_loss_batch(std::slice::from_ref(pred), std::slice::from_ref(target))?;
    Ok((loss, g.remove(0)))
}
