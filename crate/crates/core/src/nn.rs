//! Dense tanh networks with reverse-mode gradients, Adam and soft target updates.
//!
//! Parameters of an [`Mlp`] live in one flat `Vec<f64>`. Layer `k` stores its
//! weight matrix row-major with shape `(fan_in, fan_out)` followed by its bias
//! vector, so a batch of inputs `X` (rows are samples) maps to `X·W + b`.
//! Hidden layers apply `tanh`; the output layer is linear.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims,
            output_dim,
            activation: Activation::Tanh,
        }
    }

    /// Three hidden layers of 256 units.
    pub fn with_default_hidden(input_dim: usize, output_dim: usize) -> Self {
        Self::new(input_dim, vec![256, 256, 256], output_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::config(format!("network dims must be >= 1, got {self:?}")));
        }
        Ok(())
    }

    fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        dims
    }

    pub fn param_count(&self) -> usize {
        self.dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerLayout {
    fan_in: usize,
    fan_out: usize,
    offset: usize,
}

impl LayerLayout {
    fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.fan_in * self.fan_out
    }

    fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.fan_in * self.fan_out;
        start..start + self.fan_out
    }
}

fn layout_for(spec: &MlpSpec) -> Vec<LayerLayout> {
    let mut offset = 0;
    spec.dims()
        .windows(2)
        .map(|w| {
            let l = LayerLayout {
                fan_in: w[0],
                fan_out: w[1],
                offset,
            };
            offset += w[0] * w[1] + w[1];
            l
        })
        .collect()
}

/// Network parameters plus the shape manifest needed to interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    layout: Vec<LayerLayout>,
    params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward_batch`] for a later backward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// `layer_inputs[k]` is the input matrix fed to layer `k`.
    layer_inputs: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl Tape {
    pub fn input(&self) -> &Array2<f64> {
        &self.layer_inputs[0]
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Array2<f64>,
}

impl Mlp {
    /// Uniform initialization in `±1/sqrt(fan_in)` for weights and biases.
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let layout = layout_for(&spec);
        let mut params = vec![0.0; spec.param_count()];
        for l in &layout {
            let bound = 1.0 / (l.fan_in as f64).sqrt();
            for p in &mut params[l.offset..l.bias_range().end] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(Self { spec, layout, params })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layout = layout_for(&spec);
        let params = vec![0.0; spec.param_count()];
        Ok(Self { spec, layout, params })
    }

    pub fn from_params(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.param_count() {
            return Err(Error::Dimension {
                context: "Mlp::from_params",
                expected: spec.param_count(),
                got: params.len(),
            });
        }
        let layout = layout_for(&spec);
        Ok(Self { spec, layout, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim
    }

    pub fn num_layers(&self) -> usize {
        self.layout.len()
    }

    /// Weight matrix of layer `k`, shape `(fan_in, fan_out)`.
    pub fn weights(&self, k: usize) -> ArrayView2<'_, f64> {
        let l = self.layout[k];
        ArrayView2::from_shape((l.fan_in, l.fan_out), &self.params[l.weight_range()])
            .expect("layout matches parameter vector")
    }

    pub fn bias(&self, k: usize) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[self.layout[k].bias_range()])
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        Ok(self.forward_batch(x)?.output.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, input: ArrayView2<'_, f64>) -> Result<Tape> {
        self.check_input(input.ncols(), "Mlp::forward_batch")?;
        let last = self.layout.len() - 1;
        let mut layer_inputs = Vec::with_capacity(self.layout.len());
        let mut h = input.to_owned();
        for k in 0..self.layout.len() {
            let mut z = h.dot(&self.weights(k));
            z += &self.bias(k);
            if k < last {
                z.mapv_inplace(f64::tanh);
            }
            layer_inputs.push(std::mem::replace(&mut h, z));
        }
        Ok(Tape {
            layer_inputs,
            output: h,
        })
    }

    /// Output only, without keeping intermediate activations.
    pub fn predict_batch(&self, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_input(input.ncols(), "Mlp::predict_batch")?;
        let last = self.layout.len() - 1;
        let mut h = input.dot(&self.weights(0));
        h += &self.bias(0);
        if last > 0 {
            h.mapv_inplace(f64::tanh);
        }
        for k in 1..self.layout.len() {
            let mut z = h.dot(&self.weights(k));
            z += &self.bias(k);
            if k < last {
                z.mapv_inplace(f64::tanh);
            }
            h = z;
        }
        Ok(h)
    }

    /// Reverse pass for a scalar loss whose gradient w.r.t. the batch output is
    /// `output_grad`. Returns gradients for every parameter (summed over the
    /// batch) and for every input coordinate (per sample).
    pub fn backward(&self, tape: &Tape, output_grad: ArrayView2<'_, f64>) -> Result<Gradients> {
        let out = &tape.output;
        if output_grad.dim() != out.dim() {
            return Err(Error::Dimension {
                context: "Mlp::backward",
                expected: out.len(),
                got: output_grad.len(),
            });
        }
        let mut params = vec![0.0; self.params.len()];
        let mut g = output_grad.to_owned();
        for k in (0..self.layout.len()).rev() {
            let l = self.layout[k];
            let h_in = &tape.layer_inputs[k];
            let dw = h_in.t().dot(&g);
            let db = g.sum_axis(Axis(0));
            for (p, &d) in params[l.weight_range()].iter_mut().zip(dw.iter()) {
                *p = d;
            }
            for (p, &d) in params[l.bias_range()].iter_mut().zip(db.iter()) {
                *p = d;
            }
            let mut g_in = g.dot(&self.weights(k).t());
            if k > 0 {
                // h_in = tanh(z) of the previous layer.
                ndarray::Zip::from(&mut g_in)
                    .and(h_in)
                    .for_each(|gi, &a| *gi *= 1.0 - a * a);
            }
            g = g_in;
        }
        Ok(Gradients { params, input: g })
    }

    pub fn backward_params(&self, input: &[f64], output_grad: &[f64]) -> Result<Vec<f64>> {
        Ok(self.backward_single(input, output_grad)?.params)
    }

    pub fn backward_input(&self, input: &[f64], output_grad: &[f64]) -> Result<Vec<f64>> {
        let grads = self.backward_single(input, output_grad)?;
        Ok(grads.input.into_raw_vec_and_offset().0)
    }

    fn backward_single(&self, input: &[f64], output_grad: &[f64]) -> Result<Gradients> {
        self.check_input(input.len(), "Mlp::backward")?;
        if output_grad.len() != self.spec.output_dim {
            return Err(Error::Dimension {
                context: "Mlp::backward output_grad",
                expected: self.spec.output_dim,
                got: output_grad.len(),
            });
        }
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row vector");
        let tape = self.forward_batch(x)?;
        let g = ArrayView2::from_shape((1, output_grad.len()), output_grad).expect("row vector");
        self.backward(&tape, g)
    }

    fn check_input(&self, got: usize, context: &'static str) -> Result<()> {
        if got != self.spec.input_dim {
            return Err(Error::Dimension {
                context,
                expected: self.spec.input_dim,
                got,
            });
        }
        Ok(())
    }

    pub fn save(&self, path_stem: &Path, seed: u64) -> Result<()> {
        let manifest = self.manifest(seed);
        fs::write(path_stem.with_extension("manifest"), manifest)?;
        let mut blob = Vec::with_capacity(self.params.len() * 8);
        for p in &self.params {
            blob.extend_from_slice(&p.to_le_bytes());
        }
        let mut f = fs::File::create(path_stem.with_extension("bin"))?;
        f.write_all(&blob)?;
        Ok(())
    }

    fn manifest(&self, seed: u64) -> String {
        let hidden: Vec<String> = self.spec.hidden_dims.iter().map(|d| d.to_string()).collect();
        let mut s = String::new();
        s.push_str("format = mlp-f64-le-v1\n");
        s.push_str(&format!("input_dim = {}\n", self.spec.input_dim));
        s.push_str(&format!("hidden_dims = {}\n", hidden.join(",")));
        s.push_str(&format!("output_dim = {}\n", self.spec.output_dim));
        s.push_str("activation = tanh\n");
        s.push_str(&format!("seed = {seed}\n"));
        s.push_str(&format!("param_count = {}\n", self.params.len()));
        for (k, l) in self.layout.iter().enumerate() {
            s.push_str(&format!("layer.{k} = {}x{}\n", l.fan_in, l.fan_out));
        }
        s
    }

    /// Loads a checkpoint written by [`Mlp::save`]; returns the network and its seed.
    pub fn load(path_stem: &Path) -> Result<(Self, u64)> {
        let manifest_path = path_stem.with_extension("manifest");
        let text = fs::read_to_string(&manifest_path)?;
        let kv = crate::config::parse_key_values(&text)
            .map_err(|e| Error::checkpoint(&manifest_path, e.to_string()))?;
        let get = |key: &str| -> Result<&str> {
            kv.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.as_str())
                .ok_or_else(|| Error::checkpoint(&manifest_path, format!("missing key `{key}`")))
        };
        let parse_usize = |key: &str| -> Result<usize> {
            get(key)?
                .parse()
                .map_err(|_| Error::checkpoint(&manifest_path, format!("bad value for `{key}`")))
        };
        if get("format")? != "mlp-f64-le-v1" {
            return Err(Error::checkpoint(&manifest_path, "unknown format"));
        }
        let hidden_text = get("hidden_dims")?;
        let hidden_dims = if hidden_text.is_empty() {
            Vec::new()
        } else {
            hidden_text
                .split(',')
                .map(|d| d.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| Error::checkpoint(&manifest_path, "bad hidden_dims"))?
        };
        let spec = MlpSpec::new(parse_usize("input_dim")?, hidden_dims, parse_usize("output_dim")?);
        let seed: u64 = get("seed")?
            .parse()
            .map_err(|_| Error::checkpoint(&manifest_path, "bad seed"))?;
        let count = parse_usize("param_count")?;
        if count != spec.param_count() {
            return Err(Error::checkpoint(&manifest_path, "param_count does not match layer shapes"));
        }
        let blob_path = path_stem.with_extension("bin");
        let blob = fs::read(&blob_path)?;
        if blob.len() != count * 8 {
            return Err(Error::checkpoint(
                &blob_path,
                format!("expected {} bytes, found {}", count * 8, blob.len()),
            ));
        }
        let params = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok((Self::from_params(spec, params)?, seed))
    }
}

/// Adam optimizer state for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected Adam update. A gradient containing a
    /// non-finite entry is rejected and leaves both parameters and state untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Dimension {
                context: "AdamState::step",
                expected: self.m.len(),
                got: grads.len().min(params.len()),
            });
        }
        if let Some((index, &value)) = grads.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index, value });
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// `target ← tau·online + (1 − tau)·target`, elementwise.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if target.spec != online.spec {
        return Err(Error::Dimension {
            context: "soft_update",
            expected: online.params.len(),
            got: target.params.len(),
        });
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::config(format!("soft update rate must lie in [0, 1], got {tau}")));
    }
    if tau == 1.0 {
        target.params.copy_from_slice(&online.params);
        return Ok(());
    }
    for (t, &o) in target.params.iter_mut().zip(&online.params) {
        *t = tau * o + (1.0 - tau) * *t;
    }
    Ok(())
}
