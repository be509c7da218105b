//! L2-regularized logistic regression trained by deterministic full-batch
//! gradient descent with backtracking line search.
//!
//! No stochastic solver on purpose: downstream results must be reproducible
//! bit-for-bit across runs. The regularization knob follows the inverse
//! convention (`l2` plays the role of C: larger means weaker penalty) and the
//! bias is never penalized.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::ops::activation::sigmoid_scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegConfig {
    /// Inverse regularization strength (sklearn's C).
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            l2: 1.0,
            max_iter: 1000,
            tol: 1e-6,
            seed: 0,
        }
    }
}

/// Convergence footprint of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub iterations: usize,
    pub final_loss: f64,
    pub final_grad_norm: f64,
    pub loss_trace: Vec<f64>,
}

/// One binary task head: weight vector plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskModel {
    pub name: String,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub report: ConvergenceReport,
}

/// The downstream classifier: one head per binary task.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    pub tasks: Vec<TaskModel>,
    pub l2: f64,
}

impl TaskModel {
    pub fn param_count(&self) -> usize {
        self.weights.len() + 1
    }

    /// `sigmoid(w.x + b)` per row plus thresholded predictions.
    pub fn predict(&self, embeddings: &Tensor, threshold: f64) -> Result<(Vec<f64>, Vec<bool>)> {
        let (b, k) = embeddings.dims2("predict")?;
        if k != self.weights.len() {
            return Err(CoreError::shape(
                "predict",
                format!(
                    "embedding width {k} vs model width {} for task '{}'",
                    self.weights.len(),
                    self.name
                ),
            ));
        }
        let mut probs = Vec::with_capacity(b);
        for row in embeddings.data().chunks(k) {
            let z: f64 = row
                .iter()
                .zip(&self.weights)
                .map(|(&x, &w)| x * w)
                .sum::<f64>()
                + self.bias;
            probs.push(sigmoid_scalar(z));
        }
        let preds = probs.iter().map(|&p| p >= threshold).collect();
        Ok((probs, preds))
    }
}

impl LogRegModel {
    pub fn param_count(&self) -> usize {
        self.tasks.iter().map(TaskModel::param_count).sum()
    }
}

/// Mean NLL of the labels plus `||w||^2 / (2 C B)`, with gradients.
///
/// Exposed so the finite-difference harness can verify the gradient path.
pub fn logistic_loss_and_grad(
    weights: &[f64],
    bias: f64,
    embeddings: &Tensor,
    labels: &[bool],
    l2: f64,
) -> Result<(f64, Vec<f64>, f64)> {
    let (b, k) = embeddings.dims2("logistic_loss")?;
    if k != weights.len() || b != labels.len() {
        return Err(CoreError::shape(
            "logistic_loss",
            format!(
                "embeddings {:?} vs {} weights / {} labels",
                embeddings.dims(),
                weights.len(),
                labels.len()
            ),
        ));
    }
    let nf = b as f64;
    let mut loss = 0.0;
    let mut grad_w = vec![0.0; k];
    let mut grad_b = 0.0;
    for (row, &y) in embeddings.data().chunks(k).zip(labels) {
        let z: f64 = row.iter().zip(weights).map(|(&x, &w)| x * w).sum::<f64>() + bias;
        let t = if y { 1.0 } else { -1.0 };
        // softplus(-t z), computed without overflow
        let u = -t * z;
        loss += u.max(0.0) + libm::log1p(libm::exp(-u.abs()));
        let residual = sigmoid_scalar(z) - if y { 1.0 } else { 0.0 };
        for (g, &x) in grad_w.iter_mut().zip(row) {
            *g += residual * x;
        }
        grad_b += residual;
    }
    loss /= nf;
    grad_b /= nf;
    let reg = 1.0 / (l2 * nf);
    for (g, &w) in grad_w.iter_mut().zip(weights) {
        *g = *g / nf + reg * w;
    }
    loss += weights.iter().map(|w| w * w).sum::<f64>() * reg / 2.0;
    Ok((loss, grad_w, grad_b))
}

/// Trains one binary head. Requires both classes in the labels.
pub fn train_logreg(
    embeddings: &Tensor,
    labels: &[bool],
    name: &str,
    cfg: &LogRegConfig,
) -> Result<TaskModel> {
    let (b, k) = embeddings.dims2("train_logreg")?;
    if b != labels.len() {
        return Err(CoreError::shape(
            "train_logreg",
            format!("{b} embedding rows vs {} labels", labels.len()),
        ));
    }
    if b < 2 || labels.iter().all(|&y| y) || labels.iter().all(|&y| !y) {
        return Err(CoreError::data(format!(
            "task '{name}': training labels contain a single class"
        )));
    }
    if !(cfg.l2 > 0.0) {
        return Err(CoreError::build(format!(
            "l2 (inverse regularization) must be positive, got {}",
            cfg.l2
        )));
    }
    embeddings.ensure_finite("training embeddings")?;

    let mut w = vec![0.0; k];
    let mut bias = 0.0;
    let (mut loss, mut gw, mut gb) = logistic_loss_and_grad(&w, bias, embeddings, labels, cfg.l2)?;
    let mut trace = vec![loss];
    let mut step = 1.0f64;
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_norm = grad_norm_of(&gw, gb);

    for it in 0..cfg.max_iter {
        iterations = it + 1;
        if grad_norm < cfg.tol {
            converged = true;
            iterations = it;
            break;
        }
        // backtracking line search along the negative gradient
        let sq = grad_norm * grad_norm;
        let mut accepted = false;
        for _ in 0..60 {
            let cand_w: Vec<f64> = w.iter().zip(&gw).map(|(&wi, &g)| wi - step * g).collect();
            let cand_b = bias - step * gb;
            let (cand_loss, cand_gw, cand_gb) =
                logistic_loss_and_grad(&cand_w, cand_b, embeddings, labels, cfg.l2)?;
            if cand_loss <= loss - 1e-4 * step * sq {
                w = cand_w;
                bias = cand_b;
                loss = cand_loss;
                gw = cand_gw;
                gb = cand_gb;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // step underflowed; gradient is numerically flat
            converged = grad_norm < cfg.tol * 100.0;
            break;
        }
        trace.push(loss);
        grad_norm = grad_norm_of(&gw, gb);
        step = (step * 2.0).min(1e6);
    }
    if grad_norm < cfg.tol {
        converged = true;
    }

    Ok(TaskModel {
        name: String::from(name),
        weights: w,
        bias,
        report: ConvergenceReport {
            converged,
            iterations,
            final_loss: loss,
            final_grad_norm: grad_norm,
            loss_trace: trace,
        },
    })
}

fn grad_norm_of(gw: &[f64], gb: f64) -> f64 {
    libm::sqrt(gw.iter().map(|g| g * g).sum::<f64>() + gb * gb)
}

/// Four (or however many) independent binary heads over shared embeddings.
///
/// A single-class column fails its own task; the others still train.
pub fn train_one_vs_all(
    embeddings: &Tensor,
    label_columns: &[(String, Vec<bool>)],
    cfg: &LogRegConfig,
) -> Vec<Result<TaskModel>> {
    label_columns
        .iter()
        .map(|(name, labels)| train_logreg(embeddings, labels, name, cfg))
        .collect()
}
