use crate::error::{shape_err, Error, Result};
use crate::num::{Mode, Tensor3};
use crate::rng::Rng;

pub fn relu_forward(x: &Tensor3) -> Tensor3 {
    let mut y = x.clone();
    y.data.iter_mut().for_each(|v| *v = v.max(0.0));
    y
}

/// Passes the gradient where `x > 0`; the subgradient at zero is zero.
pub fn relu_backward(x: &Tensor3, grad_out: &Tensor3) -> Result<Tensor3> {
    x.check_same_shape(grad_out)?;
    let mut g = grad_out.clone();
    g.data
        .iter_mut()
        .zip(&x.data)
        .for_each(|(g, &x)| if x <= 0.0 { *g = 0.0 });
    Ok(g)
}

/// Per-element multipliers applied by a training-mode dropout pass: zero
/// for dropped elements, `1 / (1 - rate)` for survivors.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    scale: Vec<f64>,
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Parameter(format!("dropout rate {rate} outside [0, 1)")));
    }
    Ok(())
}

/// Inverted dropout. Inference (and rate 0) is the identity and consumes no
/// random numbers.
pub fn dropout_forward(x: &Tensor3, rate: f64, rng: &mut Rng, mode: Mode) -> Result<(Tensor3, Option<DropoutMask>)> {
    check_rate(rate)?;
    if mode == Mode::Infer || rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let keep = 1.0 / (1.0 - rate);
    let scale: Vec<f64> = (0..x.len())
        .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
        .collect();
    let mut y = x.clone();
    y.data.iter_mut().zip(&scale).for_each(|(v, s)| *v *= s);
    Ok((y, Some(DropoutMask { scale })))
}

pub fn dropout_backward(grad_out: &Tensor3, mask: Option<&DropoutMask>) -> Result<Tensor3> {
    let mut g = grad_out.clone();
    if let Some(mask) = mask {
        if mask.scale.len() != g.len() {
            return Err(shape_err(format!("mask of {} for {} values", mask.scale.len(), g.len())));
        }
        g.data.iter_mut().zip(&mask.scale).for_each(|(v, s)| *v *= s);
    }
    Ok(g)
}
