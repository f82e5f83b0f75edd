//! Small feed-forward networks with hand-written reverse-mode gradients,
//! Adam, a diagonal Gaussian policy head and a positive critic head.
//!
//! Parameters of an [`Mlp`] live in one flat vector (per layer: weights
//! row-major `out x in`, then biases) so optimizers and checkpoints work on
//! plain slices.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward_cached`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer (post-activation of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Vec<f64>>,
}

impl Mlp {
    /// Zero-initialised network with ReLU hidden layers and a linear output.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid(format!("bad layer sizes {sizes:?}")));
        }
        let n = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; n],
        })
    }

    /// Orthogonal initialisation: gain `sqrt(2)` on hidden layers and
    /// `output_gain` on the last, zero biases.
    pub fn orthogonal<R: Rng + ?Sized>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let n_layers = net.n_layers();
        for l in 0..n_layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let gain = if l + 1 == n_layers { output_gain } else { 2f64.sqrt() };
            let q = orthogonal_matrix(fan_out, fan_in, rng);
            let (w, _) = net.layer_mut(l);
            for i in 0..fan_out {
                for j in 0..fan_in {
                    w[i * fan_in + j] = gain * q[(i, j)];
                }
            }
        }
        Ok(net)
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        if params.len() != net.params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("non-finite parameter"));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn offset(&self, layer: usize) -> usize {
        self.sizes[..=layer]
            .windows(2)
            .take(layer)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        let start = self.offset(l);
        let (w, rest) = self.params[start..].split_at(fan_in * fan_out);
        (w, &rest[..fan_out])
    }

    fn layer_mut(&mut self, l: usize) -> (&mut [f64], &mut [f64]) {
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        let start = self.offset(l);
        let (w, rest) = self.params[start..].split_at_mut(fan_in * fan_out);
        (w, &mut rest[..fan_out])
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward_cached(input).map(|(out, _)| out)
    }

    pub fn forward_cached(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if input.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input width {} != {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.n_layers()),
            pre: Vec::with_capacity(self.n_layers() - 1),
        };
        let mut x = input.to_vec();
        for l in 0..self.n_layers() {
            let (w, b) = self.layer(l);
            let fan_in = self.sizes[l];
            let mut z: Vec<f64> = b.to_vec();
            for (i, zi) in z.iter_mut().enumerate() {
                let row = &w[i * fan_in..(i + 1) * fan_in];
                *zi += row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
            }
            cache.inputs.push(x);
            if l + 1 < self.n_layers() {
                x = z.iter().map(|v| v.max(0.0)).collect();
                cache.pre.push(z);
            } else {
                x = z;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite network output".into()));
        }
        Ok((x, cache))
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64], grads: &mut [f64]) -> Result<Vec<f64>> {
        if grad_out.len() != self.output_dim() || grads.len() != self.params.len() {
            return Err(Error::invalid("gradient shape mismatch"));
        }
        if cache.inputs.len() != self.n_layers() {
            return Err(Error::invalid("forward cache does not belong to this network"));
        }
        let mut g = grad_out.to_vec();
        for l in (0..self.n_layers()).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let start = self.offset(l);
            let x = &cache.inputs[l];
            let (w, _) = self.layer(l);
            {
                let (gw, rest) = grads[start..].split_at_mut(fan_in * fan_out);
                let gb = &mut rest[..fan_out];
                for i in 0..fan_out {
                    gb[i] += g[i];
                    let row = &mut gw[i * fan_in..(i + 1) * fan_in];
                    for (r, xj) in row.iter_mut().zip(x) {
                        *r += g[i] * xj;
                    }
                }
            }
            let mut gx = vec![0.0; fan_in];
            for i in 0..fan_out {
                let row = &w[i * fan_in..(i + 1) * fan_in];
                for (gxj, wij) in gx.iter_mut().zip(row) {
                    *gxj += g[i] * wij;
                }
            }
            if l > 0 {
                for (gxj, z) in gx.iter_mut().zip(&cache.pre[l - 1]) {
                    if *z <= 0.0 {
                        *gxj = 0.0;
                    }
                }
            }
            g = gx;
        }
        Ok(g)
    }

    /// Mutable access to the last layer's weights and biases.
    pub fn output_layer_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        let l = self.n_layers() - 1;
        self.layer_mut(l)
    }
}

fn orthogonal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let big = rows.max(cols);
    let small = rows.min(cols);
    let a = DMatrix::from_fn(big, small, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let (q, r) = (qr.q(), qr.r());
    // sign fix so the distribution is uniform over orthogonal matrices
    let mut q = q;
    for j in 0..small {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    if rows >= cols {
        q
    } else {
        q.transpose()
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self::with_betas(n_params, lr, (0.9, 0.999), 1e-8)
    }

    pub fn with_betas(n_params: usize, lr: f64, betas: (f64, f64), eps: f64) -> Self {
        Self {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::invalid("optimizer shape mismatch"));
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Rescales gradient slices jointly so their global L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.iter_mut() {
                *x *= scale;
            }
        }
    }
    norm
}

/// Diagonal Gaussian over weight increments with a state-independent
/// `log_std`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPolicyHead {
    pub log_std: Vec<f64>,
    pub log_std_min: f64,
    pub log_std_max: f64,
}

impl GaussianPolicyHead {
    pub fn new(n: usize, init_log_std: f64) -> Self {
        Self {
            log_std: vec![init_log_std; n],
            log_std_min: -5.0,
            log_std_max: 2.0,
        }
    }

    pub fn clamp(&mut self) {
        for s in &mut self.log_std {
            *s = s.clamp(self.log_std_min, self.log_std_max);
        }
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_std.iter().map(|s| s.exp()).collect()
    }

    /// Log density of `action` and its gradients with respect to the mean
    /// and `log_std`.
    pub fn log_prob(&self, mean: &[f64], action: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        let mut lp = 0.0;
        let mut d_mean = Vec::with_capacity(mean.len());
        let mut d_log_std = Vec::with_capacity(mean.len());
        for ((m, a), s) in mean.iter().zip(action).zip(&self.log_std) {
            let sigma = s.exp();
            let z = (a - m) / sigma;
            lp += -0.5 * z * z - s - 0.5 * (2.0 * PI).ln();
            d_mean.push(z / sigma);
            d_log_std.push(z * z - 1.0);
        }
        (lp, d_mean, d_log_std)
    }

    /// Differential entropy; its gradient with respect to each `log_std` is 1.
    pub fn entropy(&self) -> f64 {
        self.log_std
            .iter()
            .map(|s| s + 0.5 * (2.0 * PI * std::f64::consts::E).ln())
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, mean: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        if mean.len() != self.log_std.len() || mean.iter().chain(&self.log_std).any(|x| !x.is_finite()) {
            return Err(Error::Numerical("invalid policy head output".into()));
        }
        let action: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, s)| {
                let eps: f64 = StandardNormal.sample(rng);
                m + s.exp() * eps
            })
            .collect();
        let (lp, _, _) = self.log_prob(mean, &action);
        Ok((action, lp))
    }
}

/// Floor of the positive critic transform.
pub const CRITIC_FLOOR: f64 = 1e-6;

/// `softplus(raw) + CRITIC_FLOOR`, always positive.
pub fn positive_value(raw: f64) -> f64 {
    softplus(raw) + CRITIC_FLOOR
}

/// Derivative of [`positive_value`] with respect to `raw`.
pub fn positive_value_grad(raw: f64) -> f64 {
    sigmoid(raw)
}

/// Inverse of [`positive_value`] for values above the floor.
pub fn positive_value_inverse(value: f64) -> f64 {
    let y = (value - CRITIC_FLOOR).max(1e-300);
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Named tensors in a line-oriented text format:
///
/// ```text
/// ezfolio-checkpoint 1
/// tensor <name> <rows> <cols>
/// <row-major values, space separated>
/// ```
///
/// Values use the shortest round-trip decimal form, so parsing restores the
/// exact bits.
pub type Tensors = BTreeMap<String, (usize, usize, Vec<f64>)>;

pub fn encode_tensors(tensors: &Tensors) -> String {
    let mut out = String::from("ezfolio-checkpoint 1\n");
    for (name, (rows, cols, values)) in tensors {
        let _ = writeln!(out, "tensor {name} {rows} {cols}");
        let line: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn decode_tensors(text: &str) -> Result<Tensors> {
    let bad = |msg: &str| Error::invalid(format!("checkpoint: {msg}"));
    let mut lines = text.lines();
    if lines.next() != Some("ezfolio-checkpoint 1") {
        return Err(bad("missing header"));
    }
    let mut out = Tensors::new();
    while let Some(head) = lines.next() {
        if head.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = head.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "tensor" {
            return Err(bad("malformed tensor header"));
        }
        let rows: usize = parts[2].parse().map_err(|_| bad("bad row count"))?;
        let cols: usize = parts[3].parse().map_err(|_| bad("bad column count"))?;
        let body = lines.next().unwrap_or("");
        let values = body
            .split_whitespace()
            .map(|v| v.parse::<f64>().map_err(|_| bad("bad value")))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != rows * cols {
            return Err(bad("value count does not match shape"));
        }
        out.insert(parts[1].to_string(), (rows, cols, values));
    }
    Ok(out)
}
