use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the post-activation value.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Scalar head on the last hidden representation; `b(x) = sigmoid(w·h + c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchHead {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// Dense feed-forward classifier. Hidden layers use `activation`; the final
/// layer is linear and produces logits.
///
/// `weights[i]` has shape `(layer_dims[i + 1], layer_dims[i])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
    pub branch: Option<BranchHead>,
    pub activation: Activation,
}

impl NetworkParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(
        layer_dims: &[usize],
        activation: Activation,
        with_branch: bool,
        rng: &mut R,
    ) -> Result<Self> {
        validate_dims(layer_dims)?;
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out).map(|_| rng.random_range(-s..=s)).collect();
            weights.push(Matrix::from_vec(fan_out, fan_in, data)?);
            biases.push(vec![0.0; fan_out]);
        }
        let branch = with_branch.then(|| {
            let fan_in = layer_dims[layer_dims.len() - 2];
            let s = (6.0 / (fan_in + 1) as f64).sqrt();
            BranchHead {
                weights: (0..fan_in).map(|_| rng.random_range(-s..=s)).collect(),
                bias: 0.0,
            }
        });
        Ok(NetworkParams {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            branch,
            activation,
        })
    }

    /// All-zero parameters with the same shapes as `self`.
    pub fn zeros_like(&self) -> Self {
        NetworkParams {
            layer_dims: self.layer_dims.clone(),
            weights: self.weights.iter().map(|w| Matrix::zeros(w.rows(), w.cols())).collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            branch: self.branch.as_ref().map(|b| BranchHead {
                weights: vec![0.0; b.weights.len()],
                bias: 0.0,
            }),
            activation: self.activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated non-empty")
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn has_branch(&self) -> bool {
        self.branch.is_some()
    }

    pub fn num_params(&self) -> usize {
        self.values().count()
    }

    /// Every parameter in a fixed order: per layer weights then biases, then
    /// the branch head.
    pub fn values(&self) -> impl Iterator<Item = &f64> + '_ {
        let layers = self
            .weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.as_slice().iter().chain(b.iter()));
        let branch = self
            .branch
            .iter()
            .flat_map(|b| b.weights.iter().chain(std::iter::once(&b.bias)));
        layers.chain(branch)
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        let layers = self
            .weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.as_mut_slice().iter_mut().chain(b.iter_mut()));
        let branch = self
            .branch
            .iter_mut()
            .flat_map(|b| b.weights.iter_mut().chain(std::iter::once(&mut b.bias)));
        layers.chain(branch)
    }

    /// Checks that `other` has the shapes of `self`.
    pub fn check_same_shape(&self, other: &NetworkParams) -> Result<()> {
        let same = self.layer_dims == other.layer_dims
            && self.weights.len() == other.weights.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.shape() == b.shape())
            && self.biases.iter().zip(&other.biases).all(|(a, b)| a.len() == b.len())
            && match (&self.branch, &other.branch) {
                (None, None) => true,
                (Some(a), Some(b)) => a.weights.len() == b.weights.len(),
                _ => false,
            };
        if same {
            Ok(())
        } else {
            Err(Error::config("parameter shapes do not match"))
        }
    }

    /// Validates structural invariants and finiteness.
    pub fn validate(&self) -> Result<()> {
        validate_dims(&self.layer_dims)?;
        if self.weights.len() != self.layer_dims.len() - 1 || self.biases.len() != self.weights.len() {
            return Err(Error::config("layer count does not match layer_dims"));
        }
        for (i, w) in self.layer_dims.windows(2).enumerate() {
            if self.weights[i].shape() != (w[1], w[0]) || self.biases[i].len() != w[1] {
                return Err(Error::config(format!("layer {i} has wrong shape")));
            }
        }
        if let Some(b) = &self.branch {
            if b.weights.len() != self.layer_dims[self.layer_dims.len() - 2] {
                return Err(Error::config("branch head does not match last hidden layer"));
            }
        }
        if !self.values().all(|v| v.is_finite()) {
            return Err(Error::config("non-finite parameter"));
        }
        Ok(())
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(Error::config("a network needs at least input and output dims"));
    }
    if dims.contains(&0) {
        return Err(Error::config("layer dims must be positive"));
    }
    Ok(())
}

/// Examples with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Option<Vec<usize>>,
}

impl Batch {
    pub fn new(inputs: Matrix, labels: Option<Vec<usize>>) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::input("batch must contain at least one example"));
        }
        if let Some(l) = &labels {
            if l.len() != inputs.rows() {
                return Err(Error::input(format!(
                    "{} labels for {} examples",
                    l.len(),
                    inputs.rows()
                )));
            }
        }
        Ok(Batch { inputs, labels })
    }

    pub fn unlabeled(inputs: Matrix) -> Result<Self> {
        Batch::new(inputs, None)
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.rows() == 0
    }

    pub(crate) fn labels_checked(&self, classes: usize) -> Result<&[usize]> {
        let labels = self
            .labels
            .as_deref()
            .ok_or_else(|| Error::config("objective needs a labeled batch"))?;
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::input(format!("label {bad} out of range for {classes} classes")));
        }
        Ok(labels)
    }
}

/// Rows grouped into contiguous segments, one per sequence. Row labels are
/// the symbols to predict.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentedBatch {
    pub rows: Batch,
    pub segments: Vec<Range<usize>>,
}

impl SegmentedBatch {
    pub fn num_segments(&self) -> usize {
        self.segments.len()
    }
}

/// Activations retained for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    /// `layers[0]` is the input; `layers[l]` the output of layer `l`; the last
    /// entry holds the logits.
    pub layers: Vec<Matrix>,
    /// Branch pre-activation per example, when the network has a branch.
    pub branch_pre: Option<Vec<f64>>,
}

impl ForwardPass {
    pub fn logits(&self) -> &Matrix {
        self.layers.last().expect("at least input and logits")
    }

    /// `b(x)` for each example.
    pub fn branch_probs(&self) -> Option<Vec<f64>> {
        self.branch_pre
            .as_ref()
            .map(|a| a.iter().map(|&v| sigmoid(v)).collect())
    }

    fn last_hidden(&self) -> &Matrix {
        &self.layers[self.layers.len() - 2]
    }
}

#[inline]
pub fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(a))` without overflow.
#[inline]
pub fn log_sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        -(-a).exp().ln_1p()
    } else {
        a - a.exp().ln_1p()
    }
}

/// Runs the network on `inputs` (one example per row).
pub fn forward(params: &NetworkParams, inputs: &Matrix) -> Result<ForwardPass> {
    forward_with(params, inputs, Execution::default())
}

pub fn forward_with(params: &NetworkParams, inputs: &Matrix, exec: Execution) -> Result<ForwardPass> {
    if inputs.cols() != params.input_dim() {
        return Err(Error::config(format!(
            "input has {} features, network expects {}",
            inputs.cols(),
            params.input_dim()
        )));
    }
    let n = inputs.rows();
    let last = params.num_layers() - 1;
    let mut layers = Vec::with_capacity(params.num_layers() + 1);
    layers.push(inputs.clone());
    for (l, (w, b)) in params.weights.iter().zip(&params.biases).enumerate() {
        let prev = &layers[l];
        let mut out = Matrix::zeros(n, w.rows());
        let act = (l != last).then_some(params.activation);
        exec.for_each_row(out.as_mut_slice(), w.rows(), |i, row| {
            let x = prev.row(i);
            for (j, o) in row.iter_mut().enumerate() {
                let z = b[j] + dot(w.row(j), x);
                *o = match act {
                    Some(a) => a.apply(z),
                    None => z,
                };
            }
        });
        layers.push(out);
    }
    let mut pass = ForwardPass {
        layers,
        branch_pre: None,
    };
    if let Some(head) = &params.branch {
        let hidden = pass.last_hidden();
        pass.branch_pre = Some(exec.map(n, |i| head.bias + dot(&head.weights, hidden.row(i))));
    }
    Ok(pass)
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Gradient of a loss with respect to all parameters, given the gradient
/// with respect to the logits (and, optionally, the branch pre-activation).
pub fn backward(
    params: &NetworkParams,
    pass: &ForwardPass,
    dlogits: &Matrix,
    dbranch: Option<&[f64]>,
) -> Result<NetworkParams> {
    let n = pass.logits().rows();
    if dlogits.shape() != pass.logits().shape() {
        return Err(Error::config("logit gradient shape mismatch"));
    }
    let mut grads = params.zeros_like();
    let mut delta = dlogits.clone();
    for l in (0..params.num_layers()).rev() {
        let input = &pass.layers[l];
        let w = &params.weights[l];
        {
            let gw = &mut grads.weights[l];
            let gb = &mut grads.biases[l];
            for i in 0..n {
                let d = delta.row(i);
                let x = input.row(i);
                for (j, &dj) in d.iter().enumerate() {
                    if dj == 0.0 {
                        continue;
                    }
                    gb[j] += dj;
                    for (g, &xv) in gw.row_mut(j).iter_mut().zip(x) {
                        *g += dj * xv;
                    }
                }
            }
        }
        let is_last = l + 1 == params.num_layers();
        if l == 0 && !(is_last && dbranch.is_some()) {
            break;
        }
        // gradient with respect to this layer's input
        let mut dinput = Matrix::zeros(n, w.cols());
        for i in 0..n {
            let d = delta.row(i);
            let out = dinput.row_mut(i);
            for (j, &dj) in d.iter().enumerate() {
                if dj == 0.0 {
                    continue;
                }
                for (o, &wv) in out.iter_mut().zip(w.row(j)) {
                    *o += dj * wv;
                }
            }
        }
        if is_last {
            if let (Some(head), Some(db)) = (&params.branch, dbranch) {
                if db.len() != n {
                    return Err(Error::config("branch gradient length mismatch"));
                }
                let gh = grads.branch.as_mut().expect("shapes mirror params");
                for (i, &d) in db.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gh.bias += d;
                    let h = input.row(i);
                    for (g, &hv) in gh.weights.iter_mut().zip(h) {
                        *g += d * hv;
                    }
                    for (o, &wv) in dinput.row_mut(i).iter_mut().zip(&head.weights) {
                        *o += d * wv;
                    }
                }
            }
        }
        if l == 0 {
            break;
        }
        let act = params.activation;
        for (dv, &a) in dinput.as_mut_slice().iter_mut().zip(input.as_slice()) {
            *dv *= act.derivative_from_output(a);
        }
        delta = dinput;
    }
    Ok(grads)
}

/// Adds `scale * other` into `acc`. Shapes must already agree.
pub fn accumulate(acc: &mut NetworkParams, other: &NetworkParams, scale: f64) {
    for (a, b) in acc.values_mut().zip(other.values()) {
        *a += scale * b;
    }
}

/// Log-sum-exp of a row, with max subtraction.
#[inline]
pub fn logsumexp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + row.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Log-softmax of a single row at temperature 1.
pub fn log_softmax_row(row: &[f64]) -> Vec<f64> {
    let lse = logsumexp(row);
    row.iter().map(|&v| v - lse).collect()
}

/// Softmax of a single row at temperature 1.
pub fn softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Row-wise softmax of `logits / temperature`.
pub fn softmax(logits: &Matrix, temperature: f64) -> Result<Matrix> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::parameter(format!(
            "temperature must be positive and finite, got {temperature}"
        )));
    }
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for i in 0..logits.rows() {
        let scaled: Vec<f64> = logits.row(i).iter().map(|&v| v / temperature).collect();
        out.row_mut(i).copy_from_slice(&softmax_row(&scaled));
    }
    Ok(out)
}
