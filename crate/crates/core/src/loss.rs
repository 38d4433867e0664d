//! Binary cross-entropy plus soft Dice training objective.

use crate::error::{Error, Result};
use crate::nn::sigmoid;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Smoothing constant shared by the Dice loss and the Dice metric.
pub const DICE_EPSILON: f64 = 1e-5;
/// Weight of the cross-entropy term in the combined objective.
pub const BCE_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub bce: f64,
    pub dice: f64,
}

fn check<T: Scalar>(logits: &Tensor4<T>, target: &Tensor4<T>) -> Result<()> {
    if logits.shape() != target.shape() {
        return Err(Error::shape("loss", logits.shape(), target.shape()));
    }
    if let Some(v) = target
        .data()
        .iter()
        .find(|&&v| v != T::zero() && v != T::one())
    {
        return Err(Error::Input(format!(
            "loss target must be binary, found value {v}"
        )));
    }
    Ok(())
}

/// `max(x, 0) - x*y + ln(1 + e^-|x|)`, the overflow-free form of `-[y ln s + (1-y) ln(1-s)]`.
fn bce_term(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy on logits.
pub fn bce_loss<T: Scalar>(logits: &Tensor4<T>, target: &Tensor4<T>) -> Result<f64> {
    check(logits, target)?;
    let n = logits.len().max(1) as f64;
    let sum: f64 = logits
        .data()
        .iter()
        .zip(target.data())
        .map(|(&x, &y)| bce_term(x.as_f64(), y.as_f64()))
        .sum();
    Ok(sum / n)
}

/// `(2 sum(p y) + eps) / (sum p + sum y + eps)` for probabilities or hard masks.
pub fn dice_coefficient<T: Scalar>(pred: &[T], target: &[T]) -> f64 {
    let (mut inter, mut total) = (0.0, 0.0);
    for (&p, &y) in pred.iter().zip(target) {
        let (p, y) = (p.as_f64(), y.as_f64());
        inter += p * y;
        total += p + y;
    }
    (2.0 * inter + DICE_EPSILON) / (total + DICE_EPSILON)
}

/// One minus the soft Dice coefficient of `sigmoid(logits)`.
pub fn dice_loss<T: Scalar>(logits: &Tensor4<T>, target: &Tensor4<T>) -> Result<f64> {
    check(logits, target)?;
    let probs: Vec<f64> = logits.data().iter().map(|&x| sigmoid(x.as_f64())).collect();
    let y: Vec<f64> = target.data().iter().map(|v| v.as_f64()).collect();
    Ok(1.0 - dice_coefficient(&probs, &y))
}

/// `0.5 * BCE + Dice loss`.
pub fn combined_loss<T: Scalar>(logits: &Tensor4<T>, target: &Tensor4<T>) -> Result<LossValue> {
    let bce = bce_loss(logits, target)?;
    let dice = dice_loss(logits, target)?;
    Ok(LossValue {
        total: BCE_WEIGHT * bce + dice,
        bce,
        dice,
    })
}

/// Combined loss together with its gradient with respect to the logits.
pub fn combined_loss_with_grad<T: Scalar>(
    logits: &Tensor4<T>,
    target: &Tensor4<T>,
) -> Result<(LossValue, Tensor4<T>)> {
    let value = combined_loss(logits, target)?;
    let n = logits.len().max(1) as f64;
    let probs: Vec<f64> = logits.data().iter().map(|&x| sigmoid(x.as_f64())).collect();
    let (mut inter, mut total) = (0.0, 0.0);
    for (&p, y) in probs.iter().zip(target.data()) {
        inter += p * y.as_f64();
        total += p + y.as_f64();
    }
    let num = 2.0 * inter + DICE_EPSILON;
    let den = total + DICE_EPSILON;
    let mut grad = Tensor4::zeros(logits.shape());
    for ((g, &p), y) in grad.data_mut().iter_mut().zip(&probs).zip(target.data()) {
        let y = y.as_f64();
        let d_bce = (p - y) / n;
        let d_dice_dp = -(2.0 * y * den - num) / (den * den);
        *g = T::lit(BCE_WEIGHT * d_bce + d_dice_dp * p * (1.0 - p));
    }
    if !value.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss evaluated to {}",
            value.total
        )));
    }
    Ok((value, grad))
}
