//! Dense feedforward classifier with manual backprop.
//!
//! Hidden layers use ReLU; the final layer emits raw logits. All math is `f64`.
//! Gradients are taken of the *mean* per-example cross-entropy over the batch.

use rand::distributions::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::exec::{for_each_chunk_mut, Exec};
use crate::matrix::Matrix;
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layer_sizes: Vec<usize>,
    /// `weights[l]` is `(layer_sizes[l+1], layer_sizes[l])`.
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
}

/// Everything `backward` needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `activations[0]` is the input; `activations[l+1]` is the output of layer `l`.
    /// The last entry holds the logits.
    activations: Vec<Matrix>,
    /// Pre-activation of each layer.
    pre: Vec<Matrix>,
}

impl ForwardTrace {
    pub fn logits(&self) -> &Matrix {
        self.activations.last().expect("trace always holds the input")
    }

    pub fn batch_size(&self) -> usize {
        self.activations[0].rows()
    }

    pub fn depth(&self) -> usize {
        self.pre.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            weights: net
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.as_slice().iter().chain(b.iter()))
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|g| g.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::config(
            "layer_sizes",
            format!("need at least 2 layers, got {}", layer_sizes.len()),
        ));
    }
    if let Some(i) = layer_sizes.iter().position(|&s| s == 0) {
        return Err(Error::config("layer_sizes", format!("layer {i} has size 0")));
    }
    Ok(())
}

impl Network {
    /// Glorot-uniform weights drawn from the init stream of `seed`; zero biases.
    pub fn init(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let mut rng = rng::stream(seed, Stream::Init);
        let mut weights = Vec::with_capacity(layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(layer_sizes.len() - 1);
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit);
            let data = (0..fan_in * fan_out).map(|_| dist.sample(&mut rng)).collect();
            weights.push(Matrix::from_vec(fan_out, fan_in, data)?);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Network {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        validate_sizes(layer_sizes)?;
        let weights = layer_sizes
            .windows(2)
            .map(|p| Matrix::zeros(p[1], p[0]))
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(Network {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn from_parts(weights: Vec<Matrix>, biases: Vec<Vec<f64>>) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(Error::Shape(format!(
                "{} weight matrices vs {} bias vectors",
                weights.len(),
                biases.len()
            )));
        }
        let mut layer_sizes = vec![weights[0].cols()];
        for (l, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.cols() != *layer_sizes.last().unwrap() || w.rows() != b.len() {
                return Err(Error::Shape(format!("layer {l} is not shape-congruent")));
            }
            layer_sizes.push(w.rows());
        }
        validate_sizes(&layer_sizes)?;
        Ok(Network {
            layer_sizes,
            weights,
            biases,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn depth(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.as_slice().iter().chain(b.iter()))
    }

    pub fn forward(&self, inputs: &Matrix) -> Result<ForwardTrace> {
        self.forward_with(inputs, Exec::default())
    }

    pub fn forward_with(&self, inputs: &Matrix, exec: Exec) -> Result<ForwardTrace> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input width {} does not match network input {}",
                inputs.cols(),
                self.input_dim()
            )));
        }
        let depth = self.depth();
        let mut activations = Vec::with_capacity(depth + 1);
        let mut pre = Vec::with_capacity(depth);
        activations.push(inputs.clone());
        for l in 0..depth {
            let z = affine(activations.last().unwrap(), &self.weights[l], &self.biases[l], exec);
            let a = if l + 1 < depth {
                let mut a = z.clone();
                a.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
                a
            } else {
                z.clone()
            };
            pre.push(z);
            activations.push(a);
        }
        Ok(ForwardTrace { activations, pre })
    }

    pub fn backward(&self, trace: &ForwardTrace, labels: &[usize]) -> Result<Gradients> {
        self.backward_with(trace, labels, Exec::default())
    }

    pub fn backward_with(
        &self,
        trace: &ForwardTrace,
        labels: &[usize],
        exec: Exec,
    ) -> Result<Gradients> {
        let depth = self.depth();
        if trace.depth() != depth
            || trace
                .pre
                .iter()
                .zip(&self.weights)
                .any(|(z, w)| z.cols() != w.rows())
        {
            return Err(Error::Internal(
                "forward trace was not produced by this network".into(),
            ));
        }
        let batch = trace.batch_size();
        if labels.len() != batch {
            return Err(Error::Shape(format!(
                "{} labels for a batch of {batch}",
                labels.len()
            )));
        }
        if batch == 0 {
            return Ok(Gradients::zeros_like(self));
        }

        let mut delta = softmax_minus_onehot(trace.logits(), labels)?;
        let scale = 1.0 / batch as f64;
        delta.as_mut_slice().iter_mut().for_each(|d| *d *= scale);

        let mut gw = vec![Matrix::zeros(0, 0); depth];
        let mut gb = vec![Vec::new(); depth];
        for l in (0..depth).rev() {
            let input = &trace.activations[l];
            gw[l] = outer_sum(&delta, input, exec);
            gb[l] = column_sums(&delta);
            if l > 0 {
                let mut upstream = delta_times_weights(&delta, &self.weights[l], exec);
                let z_prev = &trace.pre[l - 1];
                upstream
                    .as_mut_slice()
                    .iter_mut()
                    .zip(z_prev.as_slice())
                    .for_each(|(d, &z)| {
                        if z <= 0.0 {
                            *d = 0.0;
                        }
                    });
                delta = upstream;
            }
        }
        Ok(Gradients {
            weights: gw,
            biases: gb,
        })
    }

    /// `p <- p - lr * g` for every parameter.
    pub fn sgd_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if grads.weights.len() != self.depth()
            || grads
                .weights
                .iter()
                .zip(&self.weights)
                .any(|(g, w)| g.rows() != w.rows() || g.cols() != w.cols())
            || grads
                .biases
                .iter()
                .zip(&self.biases)
                .any(|(g, b)| g.len() != b.len())
        {
            return Err(Error::Shape("gradients do not match network".into()));
        }
        if let Some(pos) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite gradient at flat parameter index {pos}"
            )));
        }
        for (w, g) in self.weights.iter_mut().zip(&grads.weights) {
            for (p, d) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *p -= lr * d;
            }
        }
        for (b, g) in self.biases.iter_mut().zip(&grads.biases) {
            for (p, d) in b.iter_mut().zip(g) {
                *p -= lr * d;
            }
        }
        if let Some(pos) = self.params().position(|p| !p.is_finite()) {
            return Err(Error::Data(format!(
                "parameter {pos} became non-finite after update (lr={lr})"
            )));
        }
        Ok(())
    }
}

/// `out[b,o] = bias[o] + sum_i x[b,i] * w[o,i]`.
fn affine(x: &Matrix, w: &Matrix, bias: &[f64], exec: Exec) -> Matrix {
    let (n_out, n_in) = (w.rows(), w.cols());
    let mut out = Matrix::zeros(x.rows(), n_out);
    let work = x.rows() * n_in * n_out;
    for_each_chunk_mut(exec, work, out.as_mut_slice(), n_out, |b, row| {
        let xr = x.row(b);
        for (o, slot) in row.iter_mut().enumerate() {
            *slot = bias[o] + dot(xr, w.row(o));
        }
    });
    out
}

/// Four interleaved partial sums, combined in a fixed order.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0f64; 4];
    let (a4, b4) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = a4.remainder().iter().zip(b4.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in a4.zip(b4) {
        for k in 0..4 {
            lanes[k] += x[k] * y[k];
        }
    }
    (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]) + tail
}

/// `g[o,i] = sum_b delta[b,o] * x[b,i]`, summed in batch order.
fn outer_sum(delta: &Matrix, x: &Matrix, exec: Exec) -> Matrix {
    let (n_out, n_in, batch) = (delta.cols(), x.cols(), delta.rows());
    let mut g = Matrix::zeros(n_out, n_in);
    for_each_chunk_mut(exec, batch * n_in * n_out, g.as_mut_slice(), n_in, |o, row| {
        for b in 0..batch {
            let d = delta.get(b, o);
            if d == 0.0 {
                continue;
            }
            let xr = x.row(b);
            for (slot, &xv) in row.iter_mut().zip(xr) {
                *slot += d * xv;
            }
        }
    });
    g
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut s = vec![0.0; m.cols()];
    for r in m.iter_rows() {
        for (acc, v) in s.iter_mut().zip(r) {
            *acc += v;
        }
    }
    s
}

/// `out[b,i] = sum_o delta[b,o] * w[o,i]`.
fn delta_times_weights(delta: &Matrix, w: &Matrix, exec: Exec) -> Matrix {
    let (n_out, n_in) = (w.rows(), w.cols());
    let mut out = Matrix::zeros(delta.rows(), n_in);
    let work = delta.rows() * n_in * n_out;
    for_each_chunk_mut(exec, work, out.as_mut_slice(), n_in, |b, row| {
        let dr = delta.row(b);
        for (o, &d) in dr.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (slot, &wv) in row.iter_mut().zip(w.row(o)) {
                *slot += d * wv;
            }
        }
    });
    out
}

fn check_labels(logits: &Matrix, labels: &[usize]) -> Result<()> {
    if labels.len() != logits.rows() {
        return Err(Error::Shape(format!(
            "{} labels for {} rows of logits",
            labels.len(),
            logits.rows()
        )));
    }
    let classes = logits.cols();
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
        return Err(Error::Data(format!(
            "label {y} at row {i} is out of range for {classes} classes"
        )));
    }
    Ok(())
}

fn softmax_minus_onehot(logits: &Matrix, labels: &[usize]) -> Result<Matrix> {
    check_labels(logits, labels)?;
    let mut out = logits.clone();
    for (b, &y) in labels.iter().enumerate() {
        let row = out.row_mut(b);
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
        row[y] -= 1.0;
    }
    Ok(out)
}

/// Per-example `-log softmax(logits)[label]`, max-shifted.
pub fn cross_entropy_losses(logits: &Matrix, labels: &[usize]) -> Result<Vec<f64>> {
    check_labels(logits, labels)?;
    Ok(logits
        .iter_rows()
        .zip(labels)
        .map(|(row, &y)| {
            let (arg, m) = row
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(ai, am), (i, v)| {
                    if v > am {
                        (i, v)
                    } else {
                        (ai, am)
                    }
                });
            let rest: f64 = row
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != arg)
                .map(|(_, &v)| (v - m).exp())
                .sum();
            (m - row[y]) + rest.ln_1p()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrStep {
    pub epoch: usize,
    pub multiplier: f64,
}

/// Step-decay learning rate: at each step epoch the rate is divided by its multiplier.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub initial_lr: f64,
    #[serde(default)]
    pub steps: Vec<LrStep>,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule {
            initial_lr: lr,
            steps: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr.is_finite() && self.initial_lr > 0.0) {
            return Err(Error::config(
                "schedule.initial_lr",
                format!("must be positive, got {}", self.initial_lr),
            ));
        }
        for (i, s) in self.steps.iter().enumerate() {
            if !(s.multiplier.is_finite() && s.multiplier > 0.0) {
                return Err(Error::config(
                    "schedule.steps",
                    format!("step {i} multiplier must be positive, got {}", s.multiplier),
                ));
            }
            if i > 0 && s.epoch <= self.steps[i - 1].epoch {
                return Err(Error::config(
                    "schedule.steps",
                    "step epochs must be strictly increasing",
                ));
            }
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let divisor: f64 = self
            .steps
            .iter()
            .take_while(|s| s.epoch <= epoch)
            .map(|s| s.multiplier)
            .product();
        self.initial_lr / divisor
    }
}
