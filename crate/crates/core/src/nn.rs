//! Dense multilayer perceptrons with hand-written reverse-mode gradients and
//! an Adam optimizer.
//!
//! Every network in the engine (decomposed policy heads, twin critics) is a
//! plain MLP: rectified-linear hidden layers and an identity output layer.
//! Parameters live in one flat `Vec<f64>` so optimizers, soft target updates
//! and checkpoints can treat a network as a single array. Per layer the
//! layout is the weight matrix (row-major, `out × in`) followed by the bias
//! vector.

use rand::Rng;

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// Stacks equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!(
                    "row {i} has {} columns, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact(0) panics, and a zero-width matrix still has rows.
        (0..self.rows).map(move |i| self.row(i))
    }
}

/// Element-wise nonlinearity applied after a dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Feed-forward network: ReLU hidden layers, identity output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    params: Vec<f64>,
}

/// Number of parameters of an MLP with the given layer widths.
pub fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::Shape(
            "an MLP needs at least an input and an output width".into(),
        ));
    }
    if widths.iter().any(|&w| w == 0) {
        return Err(Error::Shape(format!("zero layer width in {widths:?}")));
    }
    Ok(())
}

impl Mlp {
    /// Random network; weights and biases uniform in `±1/√fan_in`.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        check_widths(widths)?;
        let mut params = Vec::with_capacity(param_count(widths));
        for w in widths.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] + 1) * w[1] {
                params.push(rng.gen_range(-bound..bound));
            }
        }
        Ok(Self {
            widths: widths.to_vec(),
            params,
        })
    }

    /// All-zero network.
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        Ok(Self {
            widths: widths.to_vec(),
            params: vec![0.0; param_count(widths)],
        })
    }

    pub fn from_params(widths: &[usize], params: Vec<f64>) -> Result<Self> {
        check_widths(widths)?;
        let expected = param_count(widths);
        if params.len() != expected {
            return Err(Error::Shape(format!(
                "widths {widths:?} need {expected} parameters, got {}",
                params.len()
            )));
        }
        Ok(Self {
            widths: widths.to_vec(),
            params,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("widths validated at construction")
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.num_layers() {
            Activation::Identity
        } else {
            Activation::Relu
        }
    }

    /// `(weights, biases)` of one layer.
    pub fn layer(&self, layer: usize) -> (&[f64], &[f64]) {
        let (start, n_in, n_out) = self.layer_offset(layer);
        let w_end = start + n_in * n_out;
        (&self.params[start..w_end], &self.params[w_end..w_end + n_out])
    }

    fn layer_offset(&self, layer: usize) -> (usize, usize, usize) {
        let start = param_count(&self.widths[..=layer]);
        (start, self.widths[layer], self.widths[layer + 1])
    }

    fn check_batch(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_width() {
            return Err(Error::Shape(format!(
                "batch width {} does not match network input width {}",
                batch.cols(),
                self.input_width()
            )));
        }
        if batch.rows() == 0 {
            return Err(Error::Shape("empty batch".into()));
        }
        Ok(())
    }

    fn layer_forward(&self, layer: usize, input: &Matrix) -> Matrix {
        let (w, b) = self.layer(layer);
        let n_in = self.widths[layer];
        let n_out = self.widths[layer + 1];
        let relu = self.activation(layer) == Activation::Relu;
        let mut out = Matrix::zeros(input.rows(), n_out);
        for r in 0..input.rows() {
            let x = input.row(r);
            let y = out.row_mut(r);
            for (o, yo) in y.iter_mut().enumerate() {
                let z = dot(&w[o * n_in..(o + 1) * n_in], x) + b[o];
                *yo = if relu && z < 0.0 { 0.0 } else { z };
            }
        }
        out
    }

    /// Inference-mode forward pass: `[B×in] → [B×out]`.
    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_batch(batch)?;
        let mut x = self.layer_forward(0, batch);
        for l in 1..self.num_layers() {
            x = self.layer_forward(l, &x);
        }
        Ok(x)
    }

    /// Forward pass that records the intermediates needed by [`Mlp::backward`].
    pub fn forward_train(&self, batch: &Matrix) -> Result<(Matrix, GradTape)> {
        self.check_batch(batch)?;
        let mut inputs = Vec::with_capacity(self.num_layers());
        inputs.push(batch.clone());
        for l in 0..self.num_layers() - 1 {
            let next = self.layer_forward(l, &inputs[l]);
            inputs.push(next);
        }
        let out = self.layer_forward(self.num_layers() - 1, &inputs[self.num_layers() - 1]);
        Ok((
            out,
            GradTape {
                widths: self.widths.clone(),
                layer_inputs: inputs,
                consumed: false,
            },
        ))
    }

    /// Parameter gradient of `Σ out ⊙ out_grad` for the recorded pass.
    ///
    /// Consumes the tape; a second call on the same tape is a state error.
    pub fn backward(&self, tape: &mut GradTape, out_grad: &Matrix) -> Result<Vec<f64>> {
        if tape.consumed {
            return Err(Error::State("gradient tape already consumed".into()));
        }
        if tape.widths != self.widths {
            return Err(Error::Shape(format!(
                "tape recorded for widths {:?}, network has {:?}",
                tape.widths, self.widths
            )));
        }
        let batch = tape.layer_inputs[0].rows();
        if out_grad.rows() != batch || out_grad.cols() != self.output_width() {
            return Err(Error::Shape(format!(
                "output gradient is {}x{}, expected {}x{}",
                out_grad.rows(),
                out_grad.cols(),
                batch,
                self.output_width()
            )));
        }
        tape.consumed = true;

        let mut grads = vec![0.0; self.params.len()];
        let mut delta = out_grad.clone();
        for l in (0..self.num_layers()).rev() {
            let (start, n_in, n_out) = self.layer_offset(l);
            let w_len = n_in * n_out;
            let input = &tape.layer_inputs[l];
            {
                let (gw, gb) = grads[start..start + w_len + n_out].split_at_mut(w_len);
                for r in 0..batch {
                    let x = input.row(r);
                    for (o, &d) in delta.row(r).iter().enumerate() {
                        if d != 0.0 {
                            axpy(d, x, &mut gw[o * n_in..(o + 1) * n_in]);
                            gb[o] += d;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            // Propagate to the previous layer's (post-ReLU) output.
            let w = &self.params[start..start + w_len];
            let mut prev = Matrix::zeros(batch, n_in);
            for r in 0..batch {
                let p = prev.row_mut(r);
                for (o, &d) in delta.row(r).iter().enumerate() {
                    if d != 0.0 {
                        axpy(d, &w[o * n_in..(o + 1) * n_in], p);
                    }
                }
                for (pi, &xi) in p.iter_mut().zip(input.row(r)) {
                    if xi <= 0.0 {
                        *pi = 0.0;
                    }
                }
            }
            delta = prev;
        }
        Ok(grads)
    }

    /// Soft target mixing `θ' ← τθ + (1−τ)θ'`, with `self` as `θ'`.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) -> Result<()> {
        if online.widths != self.widths {
            return Err(Error::Shape(format!(
                "cannot mix widths {:?} into {:?}",
                online.widths, self.widths
            )));
        }
        for (t, &o) in self.params.iter_mut().zip(&online.params) {
            *t = tau * o + (1.0 - tau) * *t;
        }
        Ok(())
    }
}

/// Intermediates of one training-mode forward pass.
#[derive(Debug, Clone)]
pub struct GradTape {
    widths: Vec<usize>,
    /// Input of every layer; entry 0 is the batch itself.
    layer_inputs: Vec<Matrix>,
    consumed: bool,
}

impl GradTape {
    pub fn is_consumed(&self) -> bool {
        self.consumed
    }

    pub fn batch_size(&self) -> usize {
        self.layer_inputs[0].rows()
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl AdamState {
    /// Fresh optimizer for `n` parameters with β1=0.9, β2=0.999, ε=1e-8.
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: vec![0.0; n],
            second: vec![0.0; n],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn len(&self) -> usize {
        self.first.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first.is_empty()
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.first, &self.second)
    }

    /// One descent step on `params` along `grads`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} parameters, got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("gradient coordinate {i}")));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}
