use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{elu, elu_grad, Batch, ParamVector};
use crate::error::{check_len, Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Elu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Elu => elu(x),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed in terms of the pre-activation.
    #[inline]
    pub fn grad(self, x: f64) -> f64 {
        match self {
            Activation::Elu => elu_grad(x),
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Elu => "elu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "elu" => Some(Activation::Elu),
            "tanh" => Some(Activation::Tanh),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }
}

/// Dense network; `activation` applies to hidden layers, the output layer is affine.
///
/// Layout per layer: weights `(out, in)` row-major, then `out` biases.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(
        input_dim: usize,
        hidden_widths: Vec<usize>,
        output_dim: usize,
        activation: Activation,
    ) -> Result<Self> {
        let spec = MlpSpec {
            input_dim,
            hidden_widths,
            output_dim,
            activation,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::Invalid(format!("all MLP widths must be > 0: {self:?}")));
        }
        Ok(())
    }

    /// `(in, out)` for every layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_widths.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_widths {
            dims.push((prev, h));
            prev = h;
        }
        dims.push((prev, self.output_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Scaled Gaussian weights (std 1/sqrt(fan_in)), zero biases. The last
    /// layer's weights are additionally multiplied by `final_scale`.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R, final_scale: f64) -> ParamVector {
        let dims = self.layer_dims();
        let mut values = Vec::with_capacity(self.param_count());
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let mut std = 1.0 / (fan_in as f64).sqrt();
            if l + 1 == dims.len() {
                std *= final_scale;
            }
            for _ in 0..fan_in * fan_out {
                values.push(std * rng::normal(rng));
            }
            values.extend(std::iter::repeat_n(0.0, fan_out));
        }
        ParamVector::from_vec(values)
    }

    pub fn descriptor(&self) -> String {
        let hidden: Vec<String> = self.hidden_widths.iter().map(|h| h.to_string()).collect();
        format!(
            "mlp:{}:[{}]:{}:{}",
            self.input_dim,
            hidden.join(","),
            self.output_dim,
            self.activation.name()
        )
    }

    pub fn from_descriptor(s: &str) -> Result<Self> {
        let bad = || Error::Checkpoint(format!("bad MLP descriptor {s:?}"));
        let rest = s.strip_prefix("mlp:").ok_or_else(bad)?;
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 4 {
            return Err(bad());
        }
        let input_dim = parts[0].parse().map_err(|_| bad())?;
        let inner = parts[1]
            .strip_prefix('[')
            .and_then(|p| p.strip_suffix(']'))
            .ok_or_else(bad)?;
        let hidden_widths = if inner.is_empty() {
            Vec::new()
        } else {
            inner
                .split(',')
                .map(|w| w.parse().map_err(|_| bad()))
                .collect::<Result<Vec<usize>>>()?
        };
        let output_dim = parts[2].parse().map_err(|_| bad())?;
        let activation = Activation::parse(parts[3]).ok_or_else(bad)?;
        MlpSpec::new(input_dim, hidden_widths, output_dim, activation)
    }
}

/// Per-sample activations recorded by the forward pass.
#[derive(Default)]
pub(crate) struct MlpTape {
    /// Input to each layer (post-activation of the previous layer).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
}

pub(crate) fn forward_one(params: &[f64], spec: &MlpSpec, x: &[f64], tape: Option<&mut MlpTape>) -> Vec<f64> {
    let dims = spec.layer_dims();
    let last = dims.len() - 1;
    let mut offset = 0;
    let mut cur = x.to_vec();
    let mut tape = tape;
    for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let w = &params[offset..offset + fan_in * fan_out];
        let b = &params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        offset += fan_in * fan_out + fan_out;
        let z: Vec<f64> = (0..fan_out)
            .map(|o| {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                b[o] + row.iter().zip(&cur).map(|(a, c)| a * c).sum::<f64>()
            })
            .collect();
        let out: Vec<f64> = if l == last {
            z.clone()
        } else {
            z.iter().map(|&v| spec.activation.apply(v)).collect()
        };
        if let Some(t) = tape.as_deref_mut() {
            t.inputs.push(std::mem::take(&mut cur));
            t.pre.push(z);
        }
        cur = out;
    }
    cur
}

/// Accumulates parameter gradients into `grad` and returns the input gradient.
pub(crate) fn backward_one(
    params: &[f64],
    spec: &MlpSpec,
    tape: &MlpTape,
    upstream: &[f64],
    grad: &mut [f64],
) -> Vec<f64> {
    let dims = spec.layer_dims();
    let last = dims.len() - 1;
    let mut offsets = Vec::with_capacity(dims.len());
    let mut offset = 0;
    for &(i, o) in &dims {
        offsets.push(offset);
        offset += i * o + o;
    }
    let mut delta = upstream.to_vec();
    for l in (0..dims.len()).rev() {
        let (fan_in, fan_out) = dims[l];
        if l != last {
            for (d, &z) in delta.iter_mut().zip(&tape.pre[l]) {
                *d *= spec.activation.grad(z);
            }
        }
        let off = offsets[l];
        let x = &tape.inputs[l];
        let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
        for o in 0..fan_out {
            let d = delta[o];
            gb[o] += d;
            if d != 0.0 {
                for (g, &xi) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
        }
        let w = &params[off..off + fan_in * fan_out];
        let mut prev = vec![0.0; fan_in];
        for o in 0..fan_out {
            let d = delta[o];
            if d != 0.0 {
                for (p, &wi) in prev.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                    *p += wi * d;
                }
            }
        }
        delta = prev;
    }
    delta
}

fn check_params(params: &ParamVector, spec: &MlpSpec) -> Result<()> {
    check_len("mlp params", spec.param_count(), params.len())
}

pub fn mlp_forward(params: &ParamVector, spec: &MlpSpec, inputs: &Batch) -> Result<Batch> {
    check_params(params, spec)?;
    check_len("mlp_forward input width", spec.input_dim, inputs.cols())?;
    Ok(super::par_rows(inputs.rows(), spec.output_dim, |i| {
        forward_one(params.as_slice(), spec, inputs.row(i), None)
    }))
}

/// Reverse-mode gradient of `sum_i <upstream_i, f(x_i)>` with respect to the
/// parameters and to every input row.
pub fn mlp_backward(
    params: &ParamVector,
    spec: &MlpSpec,
    inputs: &Batch,
    upstream: &Batch,
) -> Result<(ParamVector, Batch)> {
    check_params(params, spec)?;
    check_len("mlp_backward input width", spec.input_dim, inputs.cols())?;
    check_len("mlp_backward upstream width", spec.output_dim, upstream.cols())?;
    check_len("mlp_backward upstream rows", inputs.rows(), upstream.rows())?;
    let (grad, rows) = super::chunked_sum(inputs.rows(), params.len(), |range, grad| {
        range
            .map(|i| {
                let mut tape = MlpTape::default();
                forward_one(params.as_slice(), spec, inputs.row(i), Some(&mut tape));
                backward_one(params.as_slice(), spec, &tape, upstream.row(i), grad)
            })
            .collect()
    });
    let mut input_grad = Batch::zeros(inputs.rows(), spec.input_dim);
    for (i, g) in rows.iter().enumerate() {
        input_grad.row_mut(i).copy_from_slice(g);
    }
    Ok((ParamVector::from_vec(grad), input_grad))
}
