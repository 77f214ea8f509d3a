//! Loss values together with their gradients with respect to the network
//! outputs they are computed from. Gradients are then fed back through the
//! recorded graphs as seeds.

use histosynth_nn::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, FieldError, Result};

/// Probability clamp used in every log term.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.7,
            gamma: 0.0001,
            lambda1: 0.001,
            lambda2: 0.01,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let errors: Vec<FieldError> = [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
        ]
        .into_iter()
        .filter(|(_, v)| !(v.is_finite() && *v >= 0.0))
        .map(|(f, _)| FieldError::new(f, "must be finite and >= 0"))
        .collect();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Params(errors))
        }
    }
}

/// A scalar loss and its gradient with respect to one input.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Tensor,
}

fn clamp_p(p: f64) -> (f64, bool) {
    let c = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    (c, c == p)
}

/// Batch mean of `λ1‖Ĩ−I‖₁ + λ2‖Ĩ−I‖₂`, norms per sample over all values.
/// The gradient is taken with respect to `refined`.
pub fn reg_loss(input: &Tensor, refined: &Tensor, lambda1: f64, lambda2: f64) -> Result<LossGrad> {
    if input.dims() != refined.dims() {
        return Err(Error::Shape(format!(
            "reg_loss: {:?} vs {:?}",
            input.dims(),
            refined.dims()
        )));
    }
    let n = input.n();
    let mut grad = Tensor::zeros(input.dims());
    let mut total = 0.0;
    for s in 0..n {
        let (a, b) = (input.sample(s), refined.sample(s));
        let l1: f64 = a.iter().zip(b).map(|(x, y)| (y - x).abs()).sum();
        let l2 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (y - x) * (y - x))
            .sum::<f64>()
            .sqrt();
        total += lambda1 * l1 + lambda2 * l2;
        let g = grad.sample_mut(s);
        for ((gv, x), y) in g.iter_mut().zip(a).zip(b) {
            let d = y - x;
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            let l2g = if l2 > 0.0 { d / l2 } else { 0.0 };
            *gv = (lambda1 * sign + lambda2 * l2g) / n as f64;
        }
    }
    Ok(LossGrad {
        value: total / n as f64,
        grad,
    })
}

/// Batch mean of `log(1 − D)`. The gradient is with respect to the
/// discriminator outputs.
pub fn real_loss(d: &[f64]) -> (f64, Vec<f64>) {
    let n = d.len().max(1) as f64;
    let mut value = 0.0;
    let grad = d
        .iter()
        .map(|&p| {
            let (c, inside) = clamp_p(p);
            value += (1.0 - c).ln();
            if inside {
                -1.0 / ((1.0 - c) * n)
            } else {
                0.0
            }
        })
        .collect();
    (value / n, grad)
}

/// `−E[log D(S′,S)] − E[log(1 − D(Ĩ,S))]` with gradients for both output sets.
pub fn disc_loss(d_real: &[f64], d_fake: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let nr = d_real.len().max(1) as f64;
    let nf = d_fake.len().max(1) as f64;
    let mut value = 0.0;
    let g_real = d_real
        .iter()
        .map(|&p| {
            let (c, inside) = clamp_p(p);
            value -= c.ln() / nr;
            if inside {
                -1.0 / (c * nr)
            } else {
                0.0
            }
        })
        .collect();
    let g_fake = d_fake
        .iter()
        .map(|&p| {
            let (c, inside) = clamp_p(p);
            value -= (1.0 - c).ln() / nf;
            if inside {
                1.0 / ((1.0 - c) * nf)
            } else {
                0.0
            }
        })
        .collect();
    (value, g_real, g_fake)
}

pub fn total_refiner_loss(w: &LossWeights, l_reg: f64, l_real: f64, l_hard: f64) -> f64 {
    w.alpha * l_reg + w.beta * l_real + w.gamma * l_hard
}

/// Mean per-element binary cross-entropy; gradient with respect to `pred`.
pub fn bce_loss(pred: &[f64], gt: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::Shape(format!(
            "bce: {} predictions vs {} targets",
            pred.len(),
            gt.len()
        )));
    }
    let n = pred.len() as f64;
    let mut value = 0.0;
    let grad = pred
        .iter()
        .zip(gt)
        .map(|(&p, &y)| {
            let (c, inside) = clamp_p(p);
            value -= y * c.ln() + (1.0 - y) * (1.0 - c).ln();
            if inside {
                (-(y / c) + (1.0 - y) / (1.0 - c)) / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((value / n, grad))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Mean categorical cross-entropy of `probs` (rows of `k`) against integer
/// labels; gradient with respect to `probs`.
pub fn ce_loss(probs: &[f64], k: usize, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    if k == 0 || probs.len() != k * labels.len() || labels.is_empty() {
        return Err(Error::Shape(format!(
            "ce: {} probabilities for {} labels of {k} classes",
            probs.len(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Invalid(format!(
            "label {bad} out of range for {k} classes"
        )));
    }
    let n = labels.len() as f64;
    let mut grad = vec![0.0; probs.len()];
    let mut value = 0.0;
    for (row, &label) in labels.iter().enumerate() {
        let (c, inside) = clamp_p(probs[row * k + label]);
        value -= c.ln();
        if inside {
            grad[row * k + label] = -1.0 / (c * n);
        }
    }
    Ok((value / n, grad))
}

/// The hard-example objective is the negated task loss.
pub fn hard_loss(task_loss: f64) -> f64 {
    -task_loss
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reg_examples() {
        let a = Tensor::zeros([1, 3, 1, 1]);
        let b = Tensor::from_vec([1, 3, 1, 1], vec![0.3, 0.0, 0.0]).unwrap();
        assert!((reg_loss(&a, &b, 1.0, 1.0).unwrap().value - 0.6).abs() < 1e-12);
        assert_eq!(reg_loss(&b, &b, 1.0, 1.0).unwrap().value, 0.0);
        let scaled = reg_loss(&a, &b, 3.0, 3.0).unwrap().value;
        assert!((scaled - 1.8).abs() < 1e-12);
    }

    #[test]
    fn real_and_disc_examples() {
        let (v, _) = real_loss(&[0.5; 4]);
        assert!((v - 0.5f64.ln()).abs() < 1e-12);
        let (v, _, _) = disc_loss(&[0.5; 3], &[0.5; 5]);
        assert!((v + 2.0 * 0.5f64.ln()).abs() < 1e-12);
        let (v, _, _) = disc_loss(&[1.0], &[0.0]);
        assert!(v < 1e-6);
    }

    #[test]
    fn weighted_total() {
        let v = total_refiner_loss(&LossWeights::default(), 0.2, -0.69, 3.0);
        assert!((v + 0.2827).abs() < 1e-12);
    }

    #[test]
    fn bce_and_ce() {
        let (v, _) = bce_loss(&[0.5; 6], &[0.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!((v - 2f64.ln()).abs() < 1e-12);
        let (v, _) = bce_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert!(v < 1e-6);
        let p = softmax(&[0.3, -1.0, 2.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let (v, _) = ce_loss(&[0.25; 8], 4, &[0, 3]).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-12);
    }
}
