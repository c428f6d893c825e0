use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{LayoutEntry, ParamVector};
use super::VelocityModel;
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Gelu,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl Activation {
    #[inline]
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => a.tanh(),
            Activation::Gelu => 0.5 * a * (1.0 + (GELU_C * (a + 0.044715 * a * a * a)).tanh()),
        }
    }

    #[inline]
    fn derivative(self, a: f64, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Gelu => {
                let u = GELU_C * (a + 0.044715 * a * a * a);
                let th = u.tanh();
                let du = GELU_C * (1.0 + 3.0 * 0.044715 * a * a);
                0.5 * (1.0 + th) + 0.5 * a * (1.0 - th * th) * du
            }
        }
    }
}

/// Topology of the conditional velocity network.
///
/// The input is `[x, sin(pi 2^j t) for j < time_features, onehot(class)]`,
/// the output has the same dimension as `x`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub state_dim: usize,
    pub num_classes: usize,
    pub time_features: usize,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            state_dim: 2,
            num_classes: 4,
            time_features: 8,
            hidden_dims: vec![64, 64],
            activation: Activation::Tanh,
        }
    }
}

impl MlpConfig {
    pub fn input_dim(&self) -> usize {
        self.state_dim + self.time_features + self.num_classes
    }

    pub fn output_dim(&self) -> usize {
        self.state_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::Layout("hidden_dims must be non-empty and positive".into()));
        }
        if self.state_dim == 0 || self.num_classes == 0 {
            return Err(Error::Layout("state_dim and num_classes must be positive".into()));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` of every affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim();
        for &h in &self.hidden_dims {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim()));
        dims
    }

    pub fn layout(&self) -> Vec<LayoutEntry> {
        self.layer_dims()
            .into_iter()
            .enumerate()
            .flat_map(|(l, (i, o))| {
                [
                    LayoutEntry::new(format!("layers.{l}.weight"), vec![o, i]),
                    LayoutEntry::new(format!("layers.{l}.bias"), vec![o]),
                ]
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| (i + 1) * o).sum()
    }
}

/// Sinusoidal time features `sin(pi 2^j t)`.
pub fn time_embedding(t: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |j| (PI * f64::from(1u32 << j) * t).sin())
}

struct Trace {
    /// `acts[0]` is the network input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

/// The policy's velocity field `v(x, t, c)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityField {
    config: MlpConfig,
    params: ParamVector,
    init_seed: u64,
}

impl VelocityField {
    /// Fan-in uniform initialization with a zeroed output layer, so the
    /// initial field is identically zero.
    pub fn new(config: MlpConfig, seed: u64) -> Result<Self> {
        let mut field = Self::init(config, seed, false)?;
        field.init_seed = seed;
        Ok(field)
    }

    /// Like [`VelocityField::new`] but the output layer is randomized too.
    pub fn new_random(config: MlpConfig, seed: u64) -> Result<Self> {
        Self::init(config, seed, true)
    }

    fn init(config: MlpConfig, seed: u64, random_output: bool) -> Result<Self> {
        config.validate()?;
        let mut params = ParamVector::zeros(config.layout());
        let dims = config.layer_dims();
        let last = dims.len() - 1;
        let mut rng = seeded(seed, 0x1417);
        let mut off = 0;
        let values = params.values_mut();
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let n = (fan_in + 1) * fan_out;
            if l != last || random_output {
                let bound = 1.0 / (fan_in as f64).sqrt();
                for v in &mut values[off..off + n] {
                    *v = rng.gen_range(-bound..bound) as f32;
                }
            }
            off += n;
        }
        Ok(Self {
            config,
            params,
            init_seed: seed,
        })
    }

    pub fn from_params(config: MlpConfig, params: ParamVector, init_seed: u64) -> Result<Self> {
        config.validate()?;
        if params.layout() != config.layout().as_slice() {
            return Err(Error::Layout("parameter layout does not match config".into()));
        }
        Ok(Self {
            config,
            params,
            init_seed,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    fn check_inputs(&self, x: &[f64], t: f64, class: usize) -> Result<()> {
        if class >= self.config.num_classes {
            return Err(Error::InvalidCondition {
                class,
                num_classes: self.config.num_classes,
            });
        }
        if x.len() != self.config.state_dim {
            return Err(Error::Layout(format!(
                "state of length {} for state_dim {}",
                x.len(),
                self.config.state_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput(format!("state {x:?}")));
        }
        if !t.is_finite() || !(0.0..=1.0).contains(&t) {
            return Err(Error::NonFiniteInput(format!("time {t}")));
        }
        Ok(())
    }

    fn input(&self, x: &[f64], t: f64, class: usize) -> Vec<f64> {
        let cfg = &self.config;
        let mut z = Vec::with_capacity(cfg.input_dim());
        z.extend_from_slice(x);
        z.extend(time_embedding(t, cfg.time_features));
        z.extend((0..cfg.num_classes).map(|k| if k == class { 1.0 } else { 0.0 }));
        z
    }

    fn trace(&self, x: &[f64], t: f64, class: usize) -> Trace {
        let dims = self.config.layer_dims();
        let last = dims.len() - 1;
        let w = self.params.values();
        let mut acts = Vec::with_capacity(dims.len() + 1);
        let mut pre = Vec::with_capacity(dims.len());
        acts.push(self.input(x, t, class));
        let mut off = 0;
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let weights = &w[off..off + fan_in * fan_out];
            let bias = &w[off + fan_in * fan_out..off + (fan_in + 1) * fan_out];
            off += (fan_in + 1) * fan_out;
            let input = &acts[l];
            let a: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &weights[o * fan_in..(o + 1) * fan_in];
                    row.iter()
                        .zip(input)
                        .fold(f64::from(bias[o]), |s, (&wi, &zi)| s + f64::from(wi) * zi)
                })
                .collect();
            let h = if l == last {
                a.clone()
            } else {
                a.iter().map(|&v| self.config.activation.apply(v)).collect()
            };
            pre.push(a);
            acts.push(h);
        }
        Trace { acts, pre }
    }

    /// Evaluates `v(x, t, c)`.
    pub fn forward(&self, x: &[f64], t: f64, class: usize) -> Result<Vec<f64>> {
        self.check_inputs(x, t, class)?;
        let mut tr = self.trace(x, t, class);
        Ok(tr.acts.pop().unwrap_or_default())
    }

    /// Adds `upstream^T dv/dtheta` into `grad` and returns `upstream^T dv/dx`.
    pub fn accumulate_backward(
        &self,
        x: &[f64],
        t: f64,
        class: usize,
        upstream: &[f64],
        grad: &mut [f64],
    ) -> Result<Vec<f64>> {
        self.check_inputs(x, t, class)?;
        if upstream.iter().any(|u| !u.is_finite()) {
            return Err(Error::NonFiniteInput(format!("upstream {upstream:?}")));
        }
        if upstream.len() != self.config.output_dim() || grad.len() != self.params.len() {
            return Err(Error::Layout("backward buffer sizes".into()));
        }
        let tr = self.trace(x, t, class);
        let dims = self.config.layer_dims();
        let w = self.params.values();
        let mut offsets = Vec::with_capacity(dims.len());
        let mut off = 0;
        for &(i, o) in &dims {
            offsets.push(off);
            off += (i + 1) * o;
        }
        let mut delta = upstream.to_vec();
        for l in (0..dims.len()).rev() {
            let (fan_in, fan_out) = dims[l];
            let base = offsets[l];
            let input = &tr.acts[l];
            for o in 0..fan_out {
                let d = delta[o];
                if d != 0.0 {
                    let row = &mut grad[base + o * fan_in..base + (o + 1) * fan_in];
                    for (g, &z) in row.iter_mut().zip(input) {
                        *g += d * z;
                    }
                }
                grad[base + fan_in * fan_out + o] += d;
            }
            let weights = &w[base..base + fan_in * fan_out];
            let mut prev = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d = delta[o];
                if d != 0.0 {
                    for (p, &wi) in prev.iter_mut().zip(&weights[o * fan_in..(o + 1) * fan_in]) {
                        *p += f64::from(wi) * d;
                    }
                }
            }
            if l > 0 {
                for (j, p) in prev.iter_mut().enumerate() {
                    *p *= self
                        .config
                        .activation
                        .derivative(tr.pre[l - 1][j], tr.acts[l][j]);
                }
            }
            delta = prev;
        }
        delta.truncate(self.config.state_dim);
        Ok(delta)
    }

    /// Vector-Jacobian products with respect to parameters and input.
    pub fn backward(
        &self,
        x: &[f64],
        t: f64,
        class: usize,
        upstream: &[f64],
    ) -> Result<(ParamVector, Vec<f64>)> {
        let mut grad = vec![0.0; self.params.len()];
        let gx = self.accumulate_backward(x, t, class, upstream, &mut grad)?;
        Ok((
            ParamVector::from_f64(&grad, self.params.layout().to_vec())?,
            gx,
        ))
    }
}

impl VelocityModel for VelocityField {
    fn state_dim(&self) -> usize {
        self.config.state_dim
    }

    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn num_params(&self) -> usize {
        self.params.len()
    }

    fn velocity(&self, x: &[f64], t: f64, class: usize) -> Result<Vec<f64>> {
        self.forward(x, t, class)
    }

    fn accumulate_vjp(
        &self,
        x: &[f64],
        t: f64,
        class: usize,
        upstream: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        self.accumulate_backward(x, t, class, upstream, grad).map(|_| ())
    }
}
