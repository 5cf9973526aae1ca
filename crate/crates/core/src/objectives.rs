//! Training objectives: cross-entropy, the uniform-posterior outlier term,
//! the confidence-branch outlier term and the density margin hinge.
//!
//! Every loss here is computed from logits in the log domain. The `*_grad`
//! kernels return the loss together with its gradient with respect to the
//! logits (or branch pre-activations), scaled by `coef`; backpropagation
//! through the network lives in [`crate::nn::grad`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{self, Batch, NetworkParams};

/// Smallest branch probability that enters a logarithm.
pub const BRANCH_PROB_FLOOR: f64 = 1e-12;

/// Coefficient on `E[log b(x)]` over outliers for the confidence branch.
pub const BRANCH_OE_COEFFICIENT: f64 = 0.5;

pub const DEFAULT_CLASSIFIER_LAMBDA: f64 = 0.5;
pub const DEFAULT_TOKEN_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    PlainCe,
    MulticlassOe,
    ConfidenceBranchOe,
    DensityMargin,
    TokenUniformCe,
}

impl ObjectiveKind {
    pub fn uses_outliers(self) -> bool {
        !matches!(self, ObjectiveKind::PlainCe)
    }

    pub fn is_sequence_objective(self) -> bool {
        matches!(self, ObjectiveKind::DensityMargin | ObjectiveKind::TokenUniformCe)
    }
}

/// A selected objective and its weights.
///
/// `lambda` scales the outlier term. `margin` (nats) is used only by the
/// density hinge; `mle_weight` scales the likelihood term of the sequence
/// objectives; `branch_budget` weights `-log b(x)` on inliers for the
/// confidence branch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub lambda: f64,
    #[serde(default)]
    pub margin: f64,
    #[serde(default = "one")]
    pub mle_weight: f64,
    #[serde(default = "default_budget")]
    pub branch_budget: f64,
}

fn one() -> f64 {
    1.0
}

fn default_budget() -> f64 {
    0.1
}

impl ObjectiveSpec {
    pub fn plain_ce() -> Self {
        Self::with_kind(ObjectiveKind::PlainCe, 0.0)
    }

    pub fn multiclass_oe(lambda: f64) -> Self {
        Self::with_kind(ObjectiveKind::MulticlassOe, lambda)
    }

    pub fn confidence_branch_oe(lambda: f64) -> Self {
        Self::with_kind(ObjectiveKind::ConfidenceBranchOe, lambda)
    }

    pub fn density_margin(lambda: f64, margin: f64) -> Self {
        ObjectiveSpec {
            margin,
            ..Self::with_kind(ObjectiveKind::DensityMargin, lambda)
        }
    }

    pub fn token_uniform_ce(lambda: f64) -> Self {
        Self::with_kind(ObjectiveKind::TokenUniformCe, lambda)
    }

    fn with_kind(kind: ObjectiveKind, lambda: f64) -> Self {
        ObjectiveSpec {
            kind,
            lambda,
            margin: 0.0,
            mle_weight: 1.0,
            branch_budget: default_budget(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::parameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.kind == ObjectiveKind::DensityMargin && !(self.margin > 0.0) {
            return Err(Error::parameter(format!(
                "density margin must be > 0, got {}",
                self.margin
            )));
        }
        if !(self.mle_weight >= 0.0) || !(self.branch_budget >= 0.0) {
            return Err(Error::parameter("objective weights must be nonnegative"));
        }
        Ok(())
    }

    /// Whether an outlier batch must be supplied.
    pub fn needs_outliers(&self) -> bool {
        self.kind.uses_outliers() && self.lambda > 0.0
    }
}

fn check_labels(logits: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.len() != logits.rows() {
        return Err(Error::input(format!(
            "{} labels for {} rows",
            labels.len(),
            logits.rows()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= logits.cols()) {
        return Err(Error::input(format!(
            "label {y} out of range for {} classes",
            logits.cols()
        )));
    }
    Ok(())
}

/// Mean of `-log f_y(x)` over the rows.
pub fn ce_loss(logits: &Matrix, labels: &[usize]) -> Result<f64> {
    check_labels(logits, labels)?;
    let total: f64 = logits
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| nn::logsumexp(row) - row[y])
        .sum();
    Ok(total / logits.rows() as f64)
}

/// `coef * ce_loss` and its logit gradient.
pub fn ce_loss_grad(logits: &Matrix, labels: &[usize], coef: f64) -> Result<(f64, Matrix)> {
    check_labels(logits, labels)?;
    let n = logits.rows() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut total = 0.0;
    for (i, (row, &y)) in logits.iter_rows().zip(labels).enumerate() {
        let lse = nn::logsumexp(row);
        total += lse - row[y];
        let g = grad.row_mut(i);
        for (j, &v) in row.iter().enumerate() {
            g[j] = coef * (v - lse).exp() / n;
        }
        g[y] -= coef / n;
    }
    Ok((coef * total / n, grad))
}

/// `H(U; f(x))` for one row of logits.
#[inline]
pub fn uniform_ce_row(row: &[f64]) -> f64 {
    let lse = nn::logsumexp(row);
    let k = row.len() as f64;
    lse - row.iter().sum::<f64>() / k
}

/// Mean over rows of the cross-entropy from the uniform distribution to the
/// softmax posterior, `-(1/k) Σ_i log f_i(x)`.
pub fn uniform_ce(logits: &Matrix) -> Result<f64> {
    if logits.cols() < 2 {
        return Err(Error::input("uniform cross-entropy needs at least two classes"));
    }
    if logits.rows() == 0 {
        return Err(Error::input("uniform cross-entropy of an empty batch"));
    }
    let total: f64 = logits.iter_rows().map(uniform_ce_row).sum();
    Ok(total / logits.rows() as f64)
}

/// `coef * uniform_ce` and its logit gradient, `coef (softmax - 1/k) / n`.
pub fn uniform_ce_grad(logits: &Matrix, coef: f64) -> Result<(f64, Matrix)> {
    let loss = uniform_ce(logits)?;
    let n = logits.rows() as f64;
    let inv_k = 1.0 / logits.cols() as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    for (i, row) in logits.iter_rows().enumerate() {
        let lse = nn::logsumexp(row);
        for (g, &v) in grad.row_mut(i).iter_mut().zip(row) {
            *g = coef * ((v - lse).exp() - inv_k) / n;
        }
    }
    Ok((coef * loss, grad))
}

/// Cross-entropy on inliers plus `lambda` times the uniform cross-entropy on
/// outliers.
pub fn multiclass_oe_loss(
    in_batch: &Batch,
    oe_batch: Option<&Batch>,
    params: &NetworkParams,
    lambda: f64,
) -> Result<f64> {
    nn::loss(
        params,
        &ObjectiveSpec::multiclass_oe(lambda),
        &nn::Batches::Classifier {
            inliers: in_batch,
            outliers: oe_batch,
        },
    )
}

/// `log b` floored at [`BRANCH_PROB_FLOOR`], from the branch pre-activation.
/// The second value is `d/da` of that quantity.
#[inline]
pub(crate) fn clamped_log_branch(pre: f64) -> (f64, f64) {
    let floor = BRANCH_PROB_FLOOR.ln();
    let lb = nn::log_sigmoid(pre);
    if lb <= floor {
        (floor, 0.0)
    } else {
        (lb, 1.0 - nn::sigmoid(pre))
    }
}

/// `0.5 * mean(log b(x))` over outlier branch probabilities. Minimizing it
/// drives `b` toward 0 on outliers.
pub fn confidence_branch_oe_term(branch_probs: &[f64]) -> Result<f64> {
    if branch_probs.is_empty() {
        return Err(Error::input("confidence branch term of an empty batch"));
    }
    if let Some(b) = branch_probs.iter().find(|b| !(0.0..=1.0).contains(*b)) {
        return Err(Error::input(format!("branch probability {b} outside [0, 1]")));
    }
    let total: f64 = branch_probs.iter().map(|&b| b.max(BRANCH_PROB_FLOOR).ln()).sum();
    Ok(BRANCH_OE_COEFFICIENT * total / branch_probs.len() as f64)
}

/// Confidence-branch loss on labeled inliers: cross-entropy of the
/// interpolated posterior `b p + (1 - b) onehot(y)` plus `budget * -log b`.
///
/// Returns mean loss scaled by `coef`, the logit gradient and the branch
/// pre-activation gradient.
pub(crate) fn branch_inlier_grad(
    logits: &Matrix,
    branch_pre: &[f64],
    labels: &[usize],
    budget: f64,
    coef: f64,
) -> Result<(f64, Matrix, Vec<f64>)> {
    check_labels(logits, labels)?;
    let n = logits.rows() as f64;
    let mut dlogits = Matrix::zeros(logits.rows(), logits.cols());
    let mut dpre = vec![0.0; logits.rows()];
    let mut total = 0.0;
    for (i, (row, &y)) in logits.iter_rows().zip(labels).enumerate() {
        let p = nn::softmax_row(row);
        let b = nn::sigmoid(branch_pre[i]);
        let miss: f64 = p.iter().enumerate().filter(|&(j, _)| j != y).map(|(_, v)| v).sum();
        let interp = 1.0 - b * miss;
        let (lb, dlb) = clamped_log_branch(branch_pre[i]);
        total += -interp.max(BRANCH_PROB_FLOOR).ln() - budget * lb;
        let s = coef / n;
        if interp > BRANCH_PROB_FLOOR {
            // d interp / d z_j = b p_y (δ_jy - p_j)
            let common = -b * p[y] / interp;
            for (j, g) in dlogits.row_mut(i).iter_mut().enumerate() {
                let delta = if j == y { 1.0 } else { 0.0 };
                *g = s * common * (delta - p[j]);
            }
            // d interp / d a = -miss * b (1 - b)
            dpre[i] += s * miss * b * (1.0 - b) / interp;
        }
        dpre[i] -= s * budget * dlb;
    }
    Ok((coef * total / n, dlogits, dpre))
}

/// `coef * mean(log b)` over outliers and its pre-activation gradient.
pub(crate) fn branch_outlier_grad(branch_pre: &[f64], coef: f64) -> (f64, Vec<f64>) {
    let n = branch_pre.len() as f64;
    let mut total = 0.0;
    let grad = branch_pre
        .iter()
        .map(|&a| {
            let (lb, d) = clamped_log_branch(a);
            total += lb;
            coef * d / n
        })
        .collect();
    (coef * total / n, grad)
}

/// Mean over pairs of `max(0, margin + nll_in - nll_out)`, pairing by
/// position.
pub fn density_margin_loss(nll_in: &[f64], nll_out: &[f64], margin: f64) -> Result<f64> {
    if nll_in.len() != nll_out.len() {
        return Err(Error::config(format!(
            "margin loss needs paired inputs, got {} and {}",
            nll_in.len(),
            nll_out.len()
        )));
    }
    if nll_in.is_empty() {
        return Err(Error::config("margin loss of an empty batch"));
    }
    if !(margin > 0.0) {
        return Err(Error::parameter(format!("margin must be > 0, got {margin}")));
    }
    let total: f64 = nll_in
        .iter()
        .zip(nll_out)
        .map(|(&a, &b)| (margin + a - b).max(0.0))
        .sum();
    Ok(total / nll_in.len() as f64)
}

/// Uniform cross-entropy averaged over token positions; rows of
/// `token_logits` are positions, columns the vocabulary.
pub fn token_uniform_ce(token_logits: &Matrix) -> Result<f64> {
    uniform_ce(token_logits)
}
