//! Fully connected residual network with batch norm and dropout, exact
//! backpropagation, and Adam.
//!
//! Topology: a stem unit maps the input to the hidden width, `num_blocks`
//! residual blocks of two units each follow, and a linear head produces the
//! output. A unit is linear, batch norm (optional), ReLU, dropout. All
//! trainable values live in one flat parameter vector.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::{derive_seed, Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub hidden_dim: usize,
    pub num_blocks: usize,
    pub dropout_rate: f64,
    pub use_batchnorm: bool,
}

impl MlpSpec {
    pub fn new(input_dim: usize, output_dim: usize) -> Self {
        Self { input_dim, output_dim, hidden_dim: 256, num_blocks: 3, dropout_rate: 0.1, use_batchnorm: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config(format!("network dimensions must be positive: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    /// Number of hidden linear layers (stem plus two per block).
    pub fn hidden_layers(&self) -> usize {
        1 + 2 * self.num_blocks
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Dropout stream selector: masks are a pure function of `(seed, layer, step)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DropoutKey {
    pub seed: u64,
    pub step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Dense {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Norm {
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Unit {
    dense: Dense,
    norm: Option<Norm>,
}

/// Network weights, batch-norm statistics and mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
    /// Running mean per hidden unit, one row per batch-norm layer.
    pub running_mean: Vec<Vec<f64>>,
    pub running_var: Vec<Vec<f64>>,
    pub mode: Mode,
    /// Optimisation steps applied so far.
    pub steps: u64,
    units: Vec<Unit>,
    head: Dense,
}

/// Activations of one unit from a forward pass.
#[derive(Debug, Clone)]
pub struct UnitCache {
    pub input: Array2<f64>,
    /// Normalised pre-activation (or the raw linear output without batch norm).
    pub normalized: Array2<f64>,
    pub inv_std: Array1<f64>,
    pub pre_relu: Array2<f64>,
    /// Dropout multipliers (0 or 1/(1-p)).
    pub keep: Option<Array2<f64>>,
    pub batch_mean: Array1<f64>,
    pub batch_var: Array1<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub mode: Mode,
    pub units: Vec<UnitCache>,
    pub head_input: Array2<f64>,
}

fn view<'a>(params: &'a [f64], d: &Dense) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((d.fan_in, d.fan_out), &params[d.w..d.w + d.fan_in * d.fan_out]).expect("layout")
}

fn dropout_uniform(key: DropoutKey, layer: usize, index: usize) -> f64 {
    let stream = derive_seed(key.seed, ((layer as u64) << 48) ^ key.step);
    (derive_seed(stream, index as u64) >> 11) as f64 / (1u64 << 53) as f64
}

impl Mlp {
    /// He-initialised network.
    pub fn new(spec: MlpSpec, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        spec.validate()?;
        let mut offset = 0;
        let mut dense = |fan_in: usize, fan_out: usize| {
            let d = Dense { w: offset, b: offset + fan_in * fan_out, fan_in, fan_out };
            offset += fan_in * fan_out + fan_out;
            d
        };
        let mut layers = Vec::new();
        layers.push(dense(spec.input_dim, spec.hidden_dim));
        for _ in 0..2 * spec.num_blocks {
            layers.push(dense(spec.hidden_dim, spec.hidden_dim));
        }
        let head = dense(spec.hidden_dim, spec.output_dim);
        let mut units = Vec::new();
        for d in layers {
            let norm = spec.use_batchnorm.then(|| {
                let n = Norm { gamma: offset, beta: offset + spec.hidden_dim };
                offset += 2 * spec.hidden_dim;
                n
            });
            units.push(Unit { dense: d, norm });
        }
        let mut params = vec![0.0; offset];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for d in units.iter().map(|u| &u.dense).chain(std::iter::once(&head)) {
            let normal = Normal::new(0.0, (2.0 / d.fan_in as f64).sqrt()).expect("positive std");
            for p in &mut params[d.w..d.w + d.fan_in * d.fan_out] {
                *p = normal.sample(&mut rng);
            }
        }
        for n in units.iter().filter_map(|u| u.norm) {
            params[n.gamma..n.gamma + spec.hidden_dim].fill(1.0);
        }
        let n_norm = units.iter().filter(|u| u.norm.is_some()).count();
        Ok(Self {
            spec,
            params,
            running_mean: vec![vec![0.0; spec.hidden_dim]; n_norm],
            running_var: vec![vec![1.0; spec.hidden_dim]; n_norm],
            mode: Mode::Train,
            steps: 0,
            units,
            head,
        })
    }

    /// Multiply the output layer's weights, e.g. to start near a zero output.
    pub fn scale_head(&mut self, factor: f64) {
        let h = self.head;
        self.params[h.w..h.w + h.fan_in * h.fan_out].iter_mut().for_each(|p| *p *= factor);
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Replace all trainable values (e.g. from a checkpoint).
    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::dims(self.params.len(), params.len()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        self.params = params;
        Ok(())
    }

    pub fn set_running_stats(&mut self, mean: Vec<Vec<f64>>, var: Vec<Vec<f64>>) -> Result<()> {
        let shape_ok =
            |s: &Vec<Vec<f64>>| s.len() == self.running_mean.len() && s.iter().all(|r| r.len() == self.spec.hidden_dim);
        if !shape_ok(&mean) || !shape_ok(&var) {
            return Err(Error::dims("one row per batch-norm layer", "mismatched statistics"));
        }
        if var.iter().flatten().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidParams("running variance must be positive".into()));
        }
        self.running_mean = mean;
        self.running_var = var;
        Ok(())
    }

    /// Forward pass in the current mode. In train mode with batch norm the batch needs
    /// at least two rows; dropout is drawn from `key`.
    pub fn forward(&self, x: ArrayView2<f64>, key: DropoutKey) -> Result<(Array2<f64>, ForwardCache)> {
        let batch = x.nrows();
        if batch == 0 {
            return Err(Error::dims("non-empty batch", 0));
        }
        if x.ncols() != self.spec.input_dim {
            return Err(Error::dims(self.spec.input_dim, x.ncols()));
        }
        let train = self.mode == Mode::Train;
        if train && self.spec.use_batchnorm && batch < 2 {
            return Err(Error::BatchTooSmall(batch));
        }
        let mut caches = Vec::with_capacity(self.units.len());
        let mut h = x.to_owned();
        let mut skip: Option<Array2<f64>> = None;
        let mut norm_index = 0;
        for (li, unit) in self.units.iter().enumerate() {
            let in_block = li > 0;
            let first_of_block = in_block && li % 2 == 1;
            if first_of_block {
                skip = Some(h.clone());
            }
            let d = &unit.dense;
            let mut z = h.dot(&view(&self.params, d));
            z += &ArrayView2::from_shape((1, d.fan_out), &self.params[d.b..d.b + d.fan_out]).expect("bias");
            let width = d.fan_out;
            let (normalized, inv_std, pre_relu, batch_mean, batch_var) = if let Some(n) = unit.norm {
                let (mean, var) = if train {
                    let mean = z.mean_axis(Axis(0)).expect("non-empty");
                    let var = (&z - &mean).mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty");
                    (mean, var)
                } else {
                    (Array1::from(self.running_mean[norm_index].clone()), Array1::from(self.running_var[norm_index].clone()))
                };
                norm_index += 1;
                let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
                let xhat = (&z - &mean) * &inv_std;
                let gamma = Array1::from(self.params[n.gamma..n.gamma + width].to_vec());
                let beta = Array1::from(self.params[n.beta..n.beta + width].to_vec());
                let y = &xhat * &gamma + &beta;
                (xhat, inv_std, y, mean, var)
            } else {
                (z.clone(), Array1::ones(width), z, Array1::zeros(width), Array1::zeros(width))
            };
            let mut a = pre_relu.mapv(|v| v.max(0.0));
            let keep = if train && self.spec.dropout_rate > 0.0 {
                let p = self.spec.dropout_rate;
                let scale = 1.0 / (1.0 - p);
                let mut k = Array2::zeros(a.raw_dim());
                for (i, v) in k.iter_mut().enumerate() {
                    *v = if dropout_uniform(key, li, i) < p { 0.0 } else { scale };
                }
                a *= &k;
                Some(k)
            } else {
                None
            };
            caches.push(UnitCache { input: h, normalized, inv_std, pre_relu, keep, batch_mean, batch_var });
            h = a;
            if in_block && li % 2 == 0 {
                h += skip.as_ref().expect("block start recorded");
            }
        }
        let mut out = h.dot(&view(&self.params, &self.head));
        out += &ArrayView2::from_shape((1, self.head.fan_out), &self.params[self.head.b..self.head.b + self.head.fan_out])
            .expect("bias");
        Ok((out, ForwardCache { mode: self.mode, units: caches, head_input: h }))
    }

    /// Eval-mode convenience forward that ignores the stored mode.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        if self.mode == Mode::Eval {
            return Ok(self.forward(x, DropoutKey::default())?.0);
        }
        let mut frozen = self.clone();
        frozen.mode = Mode::Eval;
        Ok(frozen.forward(x, DropoutKey::default())?.0)
    }

    /// Gradients of `sum(upstream * output)` with respect to the parameters and the input.
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        if cache.mode != Mode::Train {
            return Err(Error::ModeMismatch);
        }
        if upstream.dim() != (cache.head_input.nrows(), self.spec.output_dim) {
            return Err(Error::dims(
                format!("{} x {}", cache.head_input.nrows(), self.spec.output_dim),
                format!("{:?}", upstream.dim()),
            ));
        }
        let batch = upstream.nrows() as f64;
        let mut grads = vec![0.0; self.params.len()];
        let accumulate_dense = |grads: &mut Vec<f64>, d: &Dense, input: &Array2<f64>, g: &ArrayView2<f64>| {
            let gw = input.t().dot(g);
            for (dst, v) in grads[d.w..d.w + d.fan_in * d.fan_out].iter_mut().zip(gw.iter()) {
                *dst += v;
            }
            let gb = g.sum_axis(Axis(0));
            for (dst, v) in grads[d.b..d.b + d.fan_out].iter_mut().zip(gb.iter()) {
                *dst += v;
            }
        };
        accumulate_dense(&mut grads, &self.head, &cache.head_input, &upstream);
        let mut g = upstream.dot(&view(&self.params, &self.head).t());
        let mut skip_grad: Option<Array2<f64>> = None;
        for li in (0..self.units.len()).rev() {
            let unit = &self.units[li];
            let c = &cache.units[li];
            let in_block = li > 0;
            if in_block && li % 2 == 0 {
                skip_grad = Some(g.clone());
            }
            if let Some(k) = &c.keep {
                g *= k;
            }
            g.zip_mut_with(&c.pre_relu, |gv, pv| {
                if *pv <= 0.0 {
                    *gv = 0.0
                }
            });
            if let Some(n) = unit.norm {
                let width = unit.dense.fan_out;
                let gamma = Array1::from(self.params[n.gamma..n.gamma + width].to_vec());
                let dgamma = (&g * &c.normalized).sum_axis(Axis(0));
                let dbeta = g.sum_axis(Axis(0));
                for j in 0..width {
                    grads[n.gamma + j] += dgamma[j];
                    grads[n.beta + j] += dbeta[j];
                }
                let dxhat = &g * &gamma;
                let sum_dxhat = dxhat.sum_axis(Axis(0));
                let sum_dxhat_xhat = (&dxhat * &c.normalized).sum_axis(Axis(0));
                let mut dz = &dxhat * batch - &sum_dxhat - &(&c.normalized * &sum_dxhat_xhat);
                dz *= &(&c.inv_std / batch);
                g = dz;
            }
            accumulate_dense(&mut grads, &unit.dense, &c.input, &g.view());
            g = g.dot(&view(&self.params, &unit.dense).t());
            if in_block && li % 2 == 1 {
                g += skip_grad.as_ref().expect("block end recorded");
            }
        }
        Ok((grads, g))
    }

    /// Blend the batch statistics of a train-mode pass into the running statistics.
    pub fn update_running_stats(&mut self, cache: &ForwardCache) {
        let mut norm_index = 0;
        for (unit, c) in self.units.iter().zip(&cache.units) {
            if unit.norm.is_none() {
                continue;
            }
            let n = c.input.nrows() as f64;
            for j in 0..self.spec.hidden_dim {
                let unbiased = if n > 1.0 { c.batch_var[j] * n / (n - 1.0) } else { c.batch_var[j] };
                let m = &mut self.running_mean[norm_index][j];
                *m = (1.0 - BN_MOMENTUM) * *m + BN_MOMENTUM * c.batch_mean[j];
                let v = &mut self.running_var[norm_index][j];
                *v = ((1.0 - BN_MOMENTUM) * *v + BN_MOMENTUM * unbiased).max(1e-12);
            }
            norm_index += 1;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self { step: 0, m: vec![0.0; num_params], v: vec![0.0; num_params], lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// One bias-corrected Adam update of `params`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::dims(self.m.len(), format!("{} params / {} grads", params.len(), grads.len())));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}
