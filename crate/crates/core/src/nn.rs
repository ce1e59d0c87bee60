//! Minimal differentiable building blocks: dense layers, an MLP with exact
//! reverse-mode gradients, Adam, and the warmup-then-cosine LR schedule.
//!
//! All arithmetic is f64; parameters are narrowed to f32 only at the
//! embedding-export boundary.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    /// Tanh-approximated GELU.
    Gelu,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Gelu => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                0.5 * z * (1.0 + (c * (z + 0.044715 * z * z * z)).tanh())
            }
        }
    }

    fn derivative(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Gelu => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                let u = c * (z + 0.044715 * z * z * z);
                let t = u.tanh();
                let sech2 = 1.0 - t * t;
                0.5 * (1.0 + t) + 0.5 * z * sech2 * c * (1.0 + 3.0 * 0.044715 * z * z)
            }
        }
    }
}

/// One affine layer `y = x W^T + b`, with `w` stored out x in.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl DenseLayer {
    pub fn out_dim(&self) -> usize {
        self.w.nrows()
    }

    pub fn in_dim(&self) -> usize {
        self.w.ncols()
    }
}

/// A stack of dense layers with the activation applied between layers (not
/// after the last one).
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    activation: Activation,
}

/// Per-layer pre- and post-activation values captured by [`Mlp::forward`]
/// for the matching backward pass.
pub struct ForwardCache {
    /// Input to each layer: `layer_inputs[i]` feeds layer `i`.
    layer_inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each hidden layer (all but the last).
    pre_activations: Vec<Array2<f64>>,
    batch: usize,
}

/// Gradients for every parameter of an [`Mlp`], same shapes as the layers.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid_argument("MLP needs at least one layer"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::invalid_argument(format!(
                    "layer shapes do not chain: {} out vs {} in",
                    pair[0].out_dim(),
                    pair[1].in_dim()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.b.len() != l.out_dim() {
                return Err(Error::invalid_argument(format!(
                    "layer {i}: bias length {} vs {} outputs",
                    l.b.len(),
                    l.out_dim()
                )));
            }
            if l.w.iter().any(|v| !v.is_finite()) || l.b.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid_data(format!("layer {i}: non-finite parameter")));
            }
        }
        Ok(Self { layers, activation })
    }

    /// Kaiming-uniform fan-in weights, zero biases, seeded.
    pub fn init(dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::invalid_argument(
                "need at least input and output dims",
            ));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::invalid_argument("zero-width layer"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for win in dims.windows(2) {
            let (fan_in, fan_out) = (win[0], win[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| {
                rng.random_range(-bound..bound)
            });
            layers.push(DenseLayer {
                w,
                b: Array1::zeros(fan_out),
            });
        }
        Self::new(layers, activation)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim()
    }

    /// Layer widths as `[in, hidden..., out]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.in_dim()];
        d.extend(self.layers.iter().map(|l| l.out_dim()));
        d
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
        if x.ncols() != self.in_dim() {
            return Err(Error::invalid_argument(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.in_dim()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid_data("non-finite network input"));
        }
        let n_layers = self.layers.len();
        let mut layer_inputs = Vec::with_capacity(n_layers);
        let mut pre_activations = Vec::with_capacity(n_layers.saturating_sub(1));
        let mut cur = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = cur.dot(&layer.w.t()) + &layer.b;
            layer_inputs.push(cur);
            if i + 1 < n_layers {
                pre_activations.push(z.clone());
                cur = z.mapv(|v| self.activation.apply(v));
            } else {
                cur = z;
            }
        }
        let cache = ForwardCache {
            layer_inputs,
            pre_activations,
            batch: x.nrows(),
        };
        Ok((cur, cache))
    }

    /// Reverse-mode gradients of `<d_y, forward(x)>` with respect to every
    /// parameter and the input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        d_y: ArrayView2<'_, f64>,
    ) -> Result<(MlpGrads, Array2<f64>)> {
        let n_layers = self.layers.len();
        if cache.layer_inputs.len() != n_layers {
            return Err(Error::invalid_argument(
                "forward cache does not match this network",
            ));
        }
        if d_y.nrows() != cache.batch || d_y.ncols() != self.out_dim() {
            return Err(Error::invalid_argument(format!(
                "output gradient is {}x{}, expected {}x{}",
                d_y.nrows(),
                d_y.ncols(),
                cache.batch,
                self.out_dim()
            )));
        }
        let mut grads = vec![
            (Array2::zeros((0, 0)), Array1::zeros(0));
            n_layers
        ];
        let mut delta = d_y.to_owned();
        for i in (0..n_layers).rev() {
            let input = &cache.layer_inputs[i];
            if input.ncols() != self.layers[i].in_dim() {
                return Err(Error::invalid_argument(
                    "forward cache does not match this network",
                ));
            }
            let dw = delta.t().dot(input).as_standard_layout().into_owned();
            let db = delta.sum_axis(Axis(0));
            grads[i] = (dw, db);
            delta = delta.dot(&self.layers[i].w);
            if i > 0 {
                let pre = &cache.pre_activations[i - 1];
                delta.zip_mut_with(pre, |d, &z| *d *= self.activation.derivative(z));
            }
        }
        Ok((MlpGrads { layers: grads }, delta))
    }
}

/// Adam accumulators, shaped like the parameters of one [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<(Array2<f64>, Array1<f64>)>,
    pub v: Vec<(Array2<f64>, Array1<f64>)>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(net: &Mlp) -> Self {
        Self::with_params(net, 0.9, 0.999, 1e-8)
    }

    pub fn with_params(net: &Mlp, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<_> = net
            .layers()
            .iter()
            .map(|l| {
                (
                    Array2::zeros((l.out_dim(), l.in_dim())),
                    Array1::zeros(l.out_dim()),
                )
            })
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One bias-corrected Adam update applied in place.
pub fn adam_step(net: &mut Mlp, grads: &MlpGrads, state: &mut AdamState, lr: f64) -> Result<()> {
    if grads.layers.len() != net.layers().len() {
        return Err(Error::invalid_argument("gradient/parameter layer count mismatch"));
    }
    for (i, ((gw, gb), layer)) in grads.layers.iter().zip(net.layers()).enumerate() {
        if gw.dim() != layer.w.dim() || gb.len() != layer.b.len() {
            return Err(Error::invalid_argument(format!(
                "layer {i}: gradient shape does not match parameters"
            )));
        }
        if let Some(v) = gw.iter().find(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("non-finite gradient {v} at layer{i}.w")));
        }
        if let Some(v) = gb.iter().find(|v| !v.is_finite()) {
            return Err(Error::numerical(format!("non-finite gradient {v} at layer{i}.b")));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    for (i, layer) in net.layers_mut().iter_mut().enumerate() {
        let (gw, gb) = &grads.layers[i];
        let (mw, mb) = &mut state.m[i];
        let (vw, vb) = &mut state.v[i];
        mw.zip_mut_with(gw, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
        mb.zip_mut_with(gb, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
        vw.zip_mut_with(gw, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
        vb.zip_mut_with(gb, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
        ndarray::Zip::from(&mut layer.w)
            .and(&*mw)
            .and(&*vw)
            .for_each(|p, &m, &v| *p -= lr * (m / bc1) / ((v / bc2).sqrt() + eps));
        ndarray::Zip::from(&mut layer.b)
            .and(&*mb)
            .and(&*vb)
            .for_each(|p, &m, &v| *p -= lr * (m / bc1) / ((v / bc2).sqrt() + eps));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleShape {
    WarmupCosine,
}

/// Linear warmup to `base_lr` over the first `warmup_frac` of steps, then
/// cosine decay to zero.
#[derive(Debug, Clone, Copy)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub total_steps: u64,
    pub warmup_frac: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, total_steps: u64, warmup_frac: f64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::invalid_argument("schedule needs at least one step"));
        }
        if !(0.0..1.0).contains(&warmup_frac) {
            return Err(Error::invalid_argument("warmup_frac must be in [0, 1)"));
        }
        if !(base_lr > 0.0) {
            return Err(Error::invalid_argument("base_lr must be positive"));
        }
        Ok(Self {
            base_lr,
            total_steps,
            warmup_frac,
        })
    }

    pub fn lr_at(&self, step: u64) -> Result<f64> {
        if step > self.total_steps {
            return Err(Error::invalid_argument(format!(
                "step {step} beyond total_steps {}",
                self.total_steps
            )));
        }
        Ok(self.at_position(step as f64))
    }

    /// The schedule curve at a fractional position in `[0, total_steps]`.
    /// The trainer samples step `s` at `s + 1/2`, so even the first and last
    /// optimizer steps get a nonzero rate.
    pub fn lr_mid_step(&self, step: u64) -> Result<f64> {
        if step >= self.total_steps {
            return Err(Error::invalid_argument(format!(
                "step {step} beyond total_steps {}",
                self.total_steps
            )));
        }
        Ok(self.at_position(step as f64 + 0.5))
    }

    fn at_position(&self, s: f64) -> f64 {
        let warmup_end = self.warmup_frac * self.total_steps as f64;
        if warmup_end > 0.0 && s <= warmup_end {
            self.base_lr * s / warmup_end
        } else {
            let span = self.total_steps as f64 - warmup_end;
            let phase = std::f64::consts::PI * (s - warmup_end) / span;
            self.base_lr * 0.5 * (1.0 + phase.cos())
        }
    }
}
