//! Batch-mean losses and their gradients with respect to network outputs.

use crate::error::{Error, Result};
use crate::net::activation::{sigmoid, softplus};

/// Floor added to predicted variances; keeps the likelihood finite when the
/// variance head saturates low.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Probability clamp for the cross-entropy loss.
const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Loss {
    /// Mean squared error on a single regression output.
    Mse,
    /// Binary cross-entropy on a single probability output.
    Bce,
    /// Gaussian negative log-likelihood on a (mean, raw variance) pair.
    GaussianNll,
}

/// Mean squared error between targets and scalar predictions.
pub fn mse(y_true: &[f64], y_pred: &[f64]) -> Result<f64> {
    check_lengths(y_true.len(), y_pred.len())?;
    let n = y_true.len() as f64;
    Ok(y_true
        .iter()
        .zip(y_pred)
        .map(|(y, p)| (y - p) * (y - p))
        .sum::<f64>()
        / n)
}

/// Binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7].
pub fn bce(labels: &[f64], probs: &[f64]) -> Result<f64> {
    check_lengths(labels.len(), probs.len())?;
    let n = labels.len() as f64;
    let mut acc = 0.0;
    for (&d, &p) in labels.iter().zip(probs) {
        if !(0.0..=1.0).contains(&d) {
            return Err(Error::InvalidArgument(format!("label {d} outside [0, 1]")));
        }
        let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
        acc -= d * p.ln() + (1.0 - d) * (1.0 - p).ln();
    }
    Ok(acc / n)
}

/// Per-row Gaussian negative log-likelihood given (mean, raw) output pairs.
/// The raw head is mapped to a variance via softplus plus a small floor.
pub fn gaussian_nll(y_true: &[f64], outputs: &[Vec<f64>]) -> Result<f64> {
    check_lengths(y_true.len(), outputs.len())?;
    let n = y_true.len() as f64;
    let mut acc = 0.0;
    for (&y, out) in y_true.iter().zip(outputs) {
        if out.len() != 2 {
            return Err(Error::Shape(format!(
                "likelihood head expects 2 outputs, got {}",
                out.len()
            )));
        }
        let var = softplus(out[1]) + VARIANCE_FLOOR;
        let d = y - out[0];
        acc += 0.5 * (2.0 * std::f64::consts::PI * var).ln() + d * d / (2.0 * var);
    }
    Ok(acc / n)
}

/// Loss value plus dL/d(output) rows for the batch mean loss.
pub fn loss_and_output_grad(
    loss: Loss,
    y_true: &[f64],
    outputs: &[Vec<f64>],
) -> Result<(f64, Vec<Vec<f64>>)> {
    check_lengths(y_true.len(), outputs.len())?;
    let n = y_true.len() as f64;
    match loss {
        Loss::Mse => {
            let preds = scalar_outputs(outputs)?;
            let value = mse(y_true, &preds)?;
            let grads = y_true
                .iter()
                .zip(&preds)
                .map(|(y, p)| vec![2.0 * (p - y) / n])
                .collect();
            Ok((value, grads))
        }
        Loss::Bce => {
            let probs = scalar_outputs(outputs)?;
            let value = bce(y_true, &probs)?;
            let grads = y_true
                .iter()
                .zip(&probs)
                .map(|(d, p)| {
                    let pc = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                    vec![(pc - d) / (pc * (1.0 - pc)) / n]
                })
                .collect();
            Ok((value, grads))
        }
        Loss::GaussianNll => {
            let value = gaussian_nll(y_true, outputs)?;
            let grads = y_true
                .iter()
                .zip(outputs)
                .map(|(&y, out)| {
                    let var = softplus(out[1]) + VARIANCE_FLOOR;
                    let d = out[0] - y;
                    let d_mean = d / var / n;
                    // d(var)/d(raw) = sigmoid(raw).
                    let d_var = (0.5 / var - d * d / (2.0 * var * var)) * sigmoid(out[1]);
                    vec![d_mean, d_var / n]
                })
                .collect();
            Ok((value, grads))
        }
    }
}

fn scalar_outputs(outputs: &[Vec<f64>]) -> Result<Vec<f64>> {
    outputs
        .iter()
        .map(|row| {
            if row.len() != 1 {
                Err(Error::Shape(format!(
                    "scalar loss expects 1 output, got {}",
                    row.len()
                )))
            } else {
                Ok(row[0])
            }
        })
        .collect()
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a == 0 {
        return Err(Error::Degenerate("loss over an empty batch".into()));
    }
    if a != b {
        return Err(Error::Shape(format!("{a} targets vs {b} predictions")));
    }
    Ok(())
}
