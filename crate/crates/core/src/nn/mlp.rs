use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::activation::{lrelu, lrelu_grad, sigmoid, sigplus};
use super::{matmul_ab, matmul_abt, matmul_atb, Matrix};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-9;
/// Weight kept on the old running statistics at each training step.
pub const BN_MOMENTUM: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputActivation {
    SigPlus,
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub output_dim: usize,
    /// Number of affine layers, output layer included.
    pub depth: usize,
    pub hidden_width: usize,
    pub leak: f64,
    pub output_activation: OutputActivation,
    pub batch_norm: bool,
}

/// `ceil(13 M K)` hidden neurons.
pub fn desk_width(m: usize, k: usize) -> usize {
    13 * m * k
}

impl MlpConfig {
    /// Network emitting `{p, lambda, mu}` for an `M x K` system.
    pub fn proposed(m: usize, k: usize, depth: usize, hidden_width: usize) -> Self {
        Self {
            input_dim: 2 * m * k + 2,
            output_dim: 2 * k + m,
            depth,
            hidden_width,
            leak: 0.3,
            output_activation: OutputActivation::SigPlus,
            batch_norm: true,
        }
    }

    /// Network emitting the `2MK` real coordinates of the beamformer directly.
    pub fn dilearn(m: usize, k: usize, depth: usize, hidden_width: usize) -> Self {
        Self { output_dim: 2 * m * k, output_activation: OutputActivation::Identity, ..Self::proposed(m, k, depth, hidden_width) }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.input_dim == 0 || self.output_dim == 0 {
            return Err(Error::Config(format!("degenerate network shape {self:?}")));
        }
        if self.depth > 1 && self.hidden_width == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if !(self.leak > 0.0 && self.leak < 1.0) {
            return Err(Error::Config(format!("leak must lie in (0, 1), got {}", self.leak)));
        }
        Ok(())
    }

    /// `(in, out)` of every affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.depth)
            .map(|l| {
                let fan_in = if l == 0 { self.input_dim } else { self.hidden_width };
                let fan_out = if l + 1 == self.depth { self.output_dim } else { self.hidden_width };
                (fan_in, fan_out)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out x in`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self { gamma: vec![1.0; width], beta: vec![0.0; width], running_mean: vec![0.0; width], running_var: vec![1.0; width] }
    }
}

/// Multilayer perceptron: hidden layers are affine, batch norm, LReLU; the
/// output layer is affine followed by the output activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub(crate) config: MlpConfig,
    pub(crate) layers: Vec<Dense>,
    /// One entry per hidden layer when batch norm is enabled.
    pub(crate) norms: Vec<BatchNorm>,
    /// Bumped on every parameter update; forward caches are tied to it.
    pub(crate) version: u64,
}

#[derive(Debug, Clone)]
struct HiddenCache {
    input: Matrix,
    xhat: Matrix,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    /// Input of the LReLU.
    pre_act: Matrix,
}

/// Intermediate values of one forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    mode: Mode,
    version: u64,
    hidden: Vec<HiddenCache>,
    output_input: Matrix,
    output_pre: Matrix,
}

impl ForwardCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch_size(&self) -> usize {
        self.output_pre.rows
    }
}

/// Gradients of every trainable tensor, in [`Mlp::parameters`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn max_abs(&self) -> f64 {
        self.tensors.iter().flatten().fold(0.0, |a, b| a.max(b.abs()))
    }
}

impl Mlp {
    /// Uniform fan-in initialization: `U(-sqrt(6/fan_in), sqrt(6/fan_in))` on hidden
    /// layers, `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` on the output layer, zero biases.
    pub fn new(config: MlpConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = config.layer_dims();
        let layers = dims
            .iter()
            .enumerate()
            .map(|(l, &(fan_in, fan_out))| {
                let limit =
                    if l + 1 == config.depth { (1.0 / fan_in as f64).sqrt() } else { (6.0 / fan_in as f64).sqrt() };
                let weight = (0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)).collect();
                Dense { in_dim: fan_in, out_dim: fan_out, weight, bias: vec![0.0; fan_out] }
            })
            .collect();
        let norms =
            if config.batch_norm { (1..config.depth).map(|_| BatchNorm::new(config.hidden_width)).collect() } else { vec![] };
        Ok(Self { config, layers, norms, version: 0 })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// Trainable tensors: for each layer `W, b`, then `gamma, beta` if it is batch-normalized.
    pub fn parameters(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            out.push(&layer.weight);
            out.push(&layer.bias);
            if let Some(bn) = self.norms.get(l) {
                out.push(&bn.gamma);
                out.push(&bn.beta);
            }
        }
        out
    }

    /// Mutable view of [`Mlp::parameters`]. Bumps the version, invalidating caches.
    pub fn parameters_mut(&mut self) -> Vec<&mut Vec<f64>> {
        self.version += 1;
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        let mut norms = self.norms.iter_mut();
        for layer in self.layers.iter_mut() {
            out.push(&mut layer.weight);
            out.push(&mut layer.bias);
            if let Some(bn) = norms.next() {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out
    }

    fn has_bn(&self, l: usize) -> bool {
        l < self.norms.len()
    }

    /// Forward pass without touching the running statistics.
    pub fn forward(&self, x: &Matrix, mode: Mode) -> Result<(Matrix, ForwardCache)> {
        if x.cols != self.config.input_dim {
            return Err(Error::Config(format!("input has {} features, network expects {}", x.cols, self.config.input_dim)));
        }
        if x.rows == 0 {
            return Err(Error::Config("empty batch".into()));
        }
        if mode == Mode::Train && self.config.batch_norm && self.config.depth > 1 && x.rows < 2 {
            return Err(Error::Config("train-mode batch norm needs at least two samples".into()));
        }
        let leak = self.config.leak;
        let mut hidden = Vec::with_capacity(self.config.depth - 1);
        let mut act = x.clone();
        for (l, layer) in self.layers[..self.config.depth - 1].iter().enumerate() {
            let mut z = matmul_abt(&act, &layer.weight, layer.out_dim);
            for r in 0..z.rows {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            let width = layer.out_dim;
            let n = z.rows;
            let (xhat, inv_std, batch_mean, batch_var, pre_act) = if self.has_bn(l) {
                let bn = &self.norms[l];
                let (mean, var) = match mode {
                    Mode::Train => column_moments(&z),
                    Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
                };
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                let mut xhat = Matrix::zeros(n, width);
                let mut pre = Matrix::zeros(n, width);
                for r in 0..n {
                    for j in 0..width {
                        let xh = (z.data[r * width + j] - mean[j]) * inv_std[j];
                        xhat.data[r * width + j] = xh;
                        pre.data[r * width + j] = bn.gamma[j] * xh + bn.beta[j];
                    }
                }
                (xhat, inv_std, mean, var, pre)
            } else {
                (Matrix::zeros(0, 0), vec![], vec![], vec![], z)
            };
            let mut next = pre_act.clone();
            next.data.iter_mut().for_each(|v| *v = lrelu(*v, leak));
            hidden.push(HiddenCache { input: act, xhat, inv_std, batch_mean, batch_var, pre_act });
            act = next;
        }
        let out_layer = self.layers.last().unwrap();
        let mut z = matmul_abt(&act, &out_layer.weight, out_layer.out_dim);
        for r in 0..z.rows {
            for (v, b) in z.row_mut(r).iter_mut().zip(&out_layer.bias) {
                *v += b;
            }
        }
        let mut out = z.clone();
        if self.config.output_activation == OutputActivation::SigPlus {
            out.data.iter_mut().for_each(|v| *v = sigplus(*v));
        }
        let cache = ForwardCache { mode, version: self.version, hidden, output_input: act, output_pre: z };
        Ok((out, cache))
    }

    /// Train-mode forward that also folds the batch statistics into the running averages.
    pub fn forward_train(&mut self, x: &Matrix) -> Result<(Matrix, ForwardCache)> {
        let (out, cache) = self.forward(x, Mode::Train)?;
        self.absorb_statistics(&cache, BN_MOMENTUM)?;
        Ok((out, cache))
    }

    /// Eval-mode output without keeping intermediate activations. Matches
    /// `forward(x, Mode::Eval)` bit for bit.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols != self.config.input_dim {
            return Err(Error::Config(format!("input has {} features, network expects {}", x.cols, self.config.input_dim)));
        }
        if x.rows == 0 {
            return Err(Error::Config("empty batch".into()));
        }
        let depth = self.config.depth;
        let leak = self.config.leak;
        let mut act: Option<Matrix> = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = matmul_abt(act.as_ref().unwrap_or(x), &layer.weight, layer.out_dim);
            let width = layer.out_dim;
            if l + 1 < depth {
                let bn = self.norms.get(l);
                let inv_std: Vec<f64> =
                    bn.map_or(Vec::new(), |bn| bn.running_var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect());
                for row in z.data.chunks_exact_mut(width) {
                    for (j, v) in row.iter_mut().enumerate() {
                        let mut y = *v + layer.bias[j];
                        if let Some(bn) = bn {
                            y = bn.gamma[j] * ((y - bn.running_mean[j]) * inv_std[j]) + bn.beta[j];
                        }
                        *v = lrelu(y, leak);
                    }
                }
            } else {
                let sig = self.config.output_activation == OutputActivation::SigPlus;
                for row in z.data.chunks_exact_mut(width) {
                    for (j, v) in row.iter_mut().enumerate() {
                        let y = *v + layer.bias[j];
                        *v = if sig { sigplus(y) } else { y };
                    }
                }
            }
            act = Some(z);
        }
        Ok(act.expect("depth >= 1"))
    }

    /// `running = momentum * running + (1 - momentum) * batch` for every BN layer.
    pub fn absorb_statistics(&mut self, cache: &ForwardCache, momentum: f64) -> Result<()> {
        if cache.mode != Mode::Train {
            return Err(Error::Contract("running statistics need a train-mode cache".into()));
        }
        for (bn, h) in self.norms.iter_mut().zip(&cache.hidden) {
            for j in 0..bn.running_mean.len() {
                bn.running_mean[j] = momentum * bn.running_mean[j] + (1.0 - momentum) * h.batch_mean[j];
                bn.running_var[j] = momentum * bn.running_var[j] + (1.0 - momentum) * h.batch_var[j];
            }
        }
        Ok(())
    }

    /// Replaces the running statistics with the exact statistics of `x` taken as one batch.
    pub fn finalize_statistics(&mut self, x: &Matrix) -> Result<()> {
        if self.norms.is_empty() {
            return Ok(());
        }
        if x.rows < 2 {
            // a single sample has zero spread; keep the means and a zero variance
            let (_, cache) = self.forward(&Matrix { rows: 2, cols: x.cols, data: [x.data.clone(), x.data.clone()].concat() }, Mode::Train)?;
            return self.absorb_statistics(&cache, 0.0);
        }
        let (_, cache) = self.forward(x, Mode::Train)?;
        self.absorb_statistics(&cache, 0.0)
    }

    /// Reverse pass. `d_out` is the gradient of the loss with respect to the
    /// network output (after the output activation).
    pub fn backward(&self, cache: &ForwardCache, d_out: &Matrix) -> Result<Gradients> {
        if cache.mode != Mode::Train {
            return Err(Error::Contract("backward needs a train-mode forward cache".into()));
        }
        if cache.version != self.version {
            return Err(Error::Contract(format!(
                "stale cache: built at parameter version {}, model is at {}",
                cache.version, self.version
            )));
        }
        if d_out.rows != cache.output_pre.rows || d_out.cols != self.config.output_dim {
            return Err(Error::Contract(format!(
                "upstream gradient is {}x{}, expected {}x{}",
                d_out.rows, d_out.cols, cache.output_pre.rows, self.config.output_dim
            )));
        }
        let depth = self.config.depth;
        let leak = self.config.leak;
        let mut per_layer: Vec<Vec<Vec<f64>>> = vec![Vec::new(); depth];

        let mut dz = d_out.clone();
        if self.config.output_activation == OutputActivation::SigPlus {
            for (g, z) in dz.data.iter_mut().zip(&cache.output_pre.data) {
                *g *= sigmoid(*z);
            }
        }
        let out_layer = &self.layers[depth - 1];
        per_layer[depth - 1] = vec![matmul_atb(&dz, &cache.output_input), column_sums(&dz)];
        let mut d_act = matmul_ab(&dz, &out_layer.weight, out_layer.in_dim);

        for l in (0..depth - 1).rev() {
            let h = &cache.hidden[l];
            let layer = &self.layers[l];
            let width = layer.out_dim;
            let n = d_act.rows;
            let mut dy = d_act;
            for (g, y) in dy.data.iter_mut().zip(&h.pre_act.data) {
                *g *= lrelu_grad(*y, leak);
            }
            let mut grads_l = Vec::with_capacity(4);
            let dz = if self.has_bn(l) {
                let bn = &self.norms[l];
                let mut d_gamma = vec![0.0; width];
                let mut d_beta = vec![0.0; width];
                for r in 0..n {
                    for j in 0..width {
                        let g = dy.data[r * width + j];
                        d_gamma[j] += g * h.xhat.data[r * width + j];
                        d_beta[j] += g;
                    }
                }
                // dxhat = dy * gamma; dz = inv_std / n * (n dxhat - sum dxhat - xhat sum(dxhat xhat))
                let mut dz = Matrix::zeros(n, width);
                let nf = n as f64;
                for j in 0..width {
                    let sum_dxhat = d_beta[j] * bn.gamma[j];
                    let sum_dxhat_xhat = d_gamma[j] * bn.gamma[j];
                    for r in 0..n {
                        let dxhat = dy.data[r * width + j] * bn.gamma[j];
                        dz.data[r * width + j] = h.inv_std[j] / nf
                            * (nf * dxhat - sum_dxhat - h.xhat.data[r * width + j] * sum_dxhat_xhat);
                    }
                }
                grads_l.push(matmul_atb(&dz, &h.input));
                grads_l.push(column_sums(&dz));
                grads_l.push(d_gamma);
                grads_l.push(d_beta);
                dz
            } else {
                grads_l.push(matmul_atb(&dy, &h.input));
                grads_l.push(column_sums(&dy));
                dy
            };
            per_layer[l] = grads_l;
            d_act = matmul_ab(&dz, &layer.weight, layer.in_dim);
        }
        Ok(Gradients { tensors: per_layer.into_iter().flatten().collect() })
    }

    pub fn running_statistics(&self) -> Vec<(&[f64], &[f64])> {
        self.norms.iter().map(|bn| (bn.running_mean.as_slice(), bn.running_var.as_slice())).collect()
    }
}

fn column_sums(m: &Matrix) -> Vec<f64> {
    let mut s = vec![0.0; m.cols];
    for r in 0..m.rows {
        for (acc, v) in s.iter_mut().zip(m.row(r)) {
            *acc += v;
        }
    }
    s
}

/// Per-column mean and biased variance.
fn column_moments(m: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.rows as f64;
    let mean: Vec<f64> = column_sums(m).into_iter().map(|s| s / n).collect();
    let mut var = vec![0.0; m.cols];
    for r in 0..m.rows {
        for (j, v) in m.row(r).iter().enumerate() {
            var[j] += (v - mean[j]).powi(2);
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_input(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix { rows, cols, data: (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect() }
    }

    #[test]
    fn zero_network_outputs_ln2() {
        let mut model = Mlp::new(MlpConfig::proposed(2, 2, 3, 8), 1).unwrap();
        for t in model.parameters_mut() {
            t.iter_mut().for_each(|v| *v = 0.0);
        }
        let x = random_input(4, 10, 2);
        for mode in [Mode::Train, Mode::Eval] {
            let (out, _) = model.forward(&x, mode).unwrap();
            assert!(out.data.iter().all(|v| (v - 2f64.ln()).abs() < 1e-15));
        }
    }

    #[test]
    fn eval_is_batch_size_independent() {
        let model = Mlp::new(MlpConfig::proposed(3, 3, 5, 117), 3).unwrap();
        let x = random_input(37, 20, 4);
        let full = model.predict(&x).unwrap();
        for r in [0, 5, 36] {
            let single = model.predict(&x.select_rows(&[r])).unwrap();
            assert_eq!(single.row(0), full.row(r));
        }
        assert_eq!(model.predict(&x).unwrap(), full);
        assert_eq!(model.forward(&x, Mode::Eval).unwrap().0, full);
        let dilearn = Mlp::new(MlpConfig::dilearn(3, 3, 4, 30), 4).unwrap();
        assert_eq!(dilearn.forward(&x, Mode::Eval).unwrap().0, dilearn.predict(&x).unwrap());
    }

    #[test]
    fn batch_norm_normalizes_in_train_mode() {
        let mut model = Mlp::new(MlpConfig::proposed(2, 2, 4, 16), 5).unwrap();
        {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for bn in &mut model.norms {
                bn.gamma.iter_mut().for_each(|g| *g = rng.random_range(0.5..2.0));
                bn.beta.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
            }
        }
        let x = random_input(64, 10, 6);
        let (_, cache) = model.forward(&x, Mode::Train).unwrap();
        for (h, bn) in cache.hidden.iter().zip(&model.norms) {
            let (mean, var) = column_moments(&h.pre_act);
            for j in 0..mean.len() {
                assert!((mean[j] - bn.beta[j]).abs() < 1e-6);
                assert!((var[j] - bn.gamma[j].powi(2)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn train_mode_needs_two_samples() {
        let model = Mlp::new(MlpConfig::proposed(1, 1, 3, 4), 0).unwrap();
        assert!(model.forward(&random_input(1, 4, 0), Mode::Train).is_err());
        assert!(model.forward(&random_input(1, 4, 0), Mode::Eval).is_ok());
        assert!(matches!(model.forward(&random_input(3, 5, 0), Mode::Eval), Err(Error::Config(_))));
    }

    #[test]
    fn backward_rejects_stale_or_eval_cache() {
        let mut model = Mlp::new(MlpConfig::proposed(1, 1, 3, 4), 0).unwrap();
        let x = random_input(3, 4, 1);
        let (_, eval_cache) = model.forward(&x, Mode::Eval).unwrap();
        let d = Matrix::zeros(3, 3);
        assert!(matches!(model.backward(&eval_cache, &d), Err(Error::Contract(_))));
        let (_, cache) = model.forward(&x, Mode::Train).unwrap();
        model.parameters_mut()[0][0] += 1.0;
        assert!(matches!(model.backward(&cache, &d), Err(Error::Contract(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let model = Mlp::new(MlpConfig::proposed(2, 2, 4, 16), 7).unwrap();
        let x = random_input(8, 10, 8);
        let (_, cache) = model.forward(&x, Mode::Train).unwrap();
        let g = model.backward(&cache, &Matrix::zeros(8, 6)).unwrap();
        assert_eq!(g.max_abs(), 0.0);
    }

    #[test]
    fn linear_layer_gradient_is_batch_mean() {
        let config = MlpConfig {
            input_dim: 5,
            output_dim: 3,
            depth: 1,
            hidden_width: 0,
            leak: 0.3,
            output_activation: OutputActivation::Identity,
            batch_norm: false,
        };
        let model = Mlp::new(config, 1).unwrap();
        let n = 10;
        let x = random_input(n, 5, 2);
        let (_, cache) = model.forward(&x, Mode::Train).unwrap();
        // loss = mean over batch and outputs of the output entries
        let d = Matrix { rows: n, cols: 3, data: vec![1.0 / n as f64; n * 3] };
        let g = model.backward(&cache, &d).unwrap();
        let col_mean: Vec<f64> = (0..5).map(|j| (0..n).map(|r| x.data[r * 5 + j]).sum::<f64>() / n as f64).collect();
        for o in 0..3 {
            for j in 0..5 {
                assert!((g.tensors[0][o * 5 + j] - col_mean[j]).abs() < 1e-14);
            }
            assert!((g.tensors[1][o] - 1.0).abs() < 1e-14);
        }
    }

    /// Central differences of `sum(out * weights)` against the analytic backward.
    fn check_network_gradient(config: MlpConfig, seed: u64) {
        let model = Mlp::new(config.clone(), seed).unwrap();
        let n = 6;
        let x = random_input(n, config.input_dim, seed + 100);
        let upstream = random_input(n, config.output_dim, seed + 200);
        let loss = |m: &Mlp| -> f64 {
            let (out, _) = m.forward(&x, Mode::Train).unwrap();
            out.data.iter().zip(&upstream.data).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = model.forward(&x, Mode::Train).unwrap();
        let grads = model.backward(&cache, &upstream).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 300);
        let step = 1e-5;
        for (t, g) in grads.tensors.iter().enumerate() {
            for _ in 0..10 {
                let j = rng.random_range(0..g.len());
                let mut plus = model.clone();
                plus.parameters_mut()[t][j] += step;
                let mut minus = model.clone();
                minus.parameters_mut()[t][j] -= step;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * step);
                let err = (g[j] - numeric).abs() / numeric.abs().max(g[j].abs()).max(1e-3);
                assert!(err < 1e-5, "tensor {t} index {j}: analytic {} numeric {numeric}", g[j]);
            }
        }
    }

    #[test]
    fn network_gradient_matches_finite_differences() {
        check_network_gradient(MlpConfig::proposed(2, 2, 4, 32), 11);
        check_network_gradient(MlpConfig::dilearn(2, 2, 3, 12), 12);
        check_network_gradient(MlpConfig { batch_norm: false, ..MlpConfig::proposed(2, 1, 3, 9) }, 13);
    }

    #[test]
    fn finalized_statistics_make_eval_match_train() {
        let mut model = Mlp::new(MlpConfig::proposed(2, 2, 4, 16), 21).unwrap();
        let x = random_input(200, 10, 22);
        // a long pass of minibatch updates first, then the exact finalization
        for chunk in 0..20 {
            let idx: Vec<usize> = (chunk * 10..chunk * 10 + 10).collect();
            model.forward_train(&x.select_rows(&idx)).unwrap();
        }
        model.finalize_statistics(&x).unwrap();
        let (train_out, _) = model.forward(&x, Mode::Train).unwrap();
        let eval_out = model.predict(&x).unwrap();
        for (a, b) in train_out.data.iter().zip(&eval_out.data) {
            assert!((a - b).abs() <= 1e-2);
        }
    }
}
