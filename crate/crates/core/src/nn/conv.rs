use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{elu, elu_grad, Batch, ParamVector};
use crate::error::{check_len, Error, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Small image encoder: unpadded convolutions with ELU, then a linear
/// projection to `feature_dim` followed by tanh.
///
/// Layout per conv layer: kernels `(out, in, k, k)`, then `out` biases; then
/// the projection weights `(feature_dim, flat)` and `feature_dim` biases.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub layers: Vec<ConvLayer>,
    pub feature_dim: usize,
}

#[derive(Clone, Copy, Debug)]
struct Shape {
    c: usize,
    h: usize,
    w: usize,
}

impl Shape {
    fn len(self) -> usize {
        self.c * self.h * self.w
    }
}

impl ConvSpec {
    /// Two stride-2 3x3 layers (8 then 16 channels) and a 32-wide projection.
    pub fn desk_scale(channels: usize, height: usize, width: usize) -> Result<Self> {
        let spec = ConvSpec {
            channels,
            height,
            width,
            layers: vec![
                ConvLayer {
                    out_channels: 8,
                    kernel: 3,
                    stride: 2,
                },
                ConvLayer {
                    out_channels: 16,
                    kernel: 3,
                    stride: 2,
                },
            ],
            feature_dim: 32,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.channels == 0 {
            return Err(Error::Invalid("conv feature_dim and channels must be > 0".into()));
        }
        let mut s = self.input_shape();
        for (i, l) in self.layers.iter().enumerate() {
            if l.kernel == 0 || l.stride == 0 || l.out_channels == 0 {
                return Err(Error::Invalid(format!("conv layer {i} has a zero dimension")));
            }
            if s.h < l.kernel || s.w < l.kernel {
                return Err(Error::Invalid(format!(
                    "conv layer {i}: kernel {} larger than {}x{} input",
                    l.kernel, s.h, s.w
                )));
            }
            s = Shape {
                c: l.out_channels,
                h: (s.h - l.kernel) / l.stride + 1,
                w: (s.w - l.kernel) / l.stride + 1,
            };
        }
        Ok(())
    }

    fn input_shape(&self) -> Shape {
        Shape {
            c: self.channels,
            h: self.height,
            w: self.width,
        }
    }

    fn shapes(&self) -> Vec<Shape> {
        let mut out = vec![self.input_shape()];
        let mut s = self.input_shape();
        for l in &self.layers {
            s = Shape {
                c: l.out_channels,
                h: (s.h - l.kernel) / l.stride + 1,
                w: (s.w - l.kernel) / l.stride + 1,
            };
            out.push(s);
        }
        out
    }

    pub fn input_len(&self) -> usize {
        self.input_shape().len()
    }

    pub fn flat_len(&self) -> usize {
        self.shapes().last().map_or(0, |s| s.len())
    }

    pub fn param_count(&self) -> usize {
        let shapes = self.shapes();
        let conv: usize = self
            .layers
            .iter()
            .zip(&shapes)
            .map(|(l, s)| l.out_channels * s.c * l.kernel * l.kernel + l.out_channels)
            .sum();
        conv + self.flat_len() * self.feature_dim + self.feature_dim
    }

    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamVector {
        let shapes = self.shapes();
        let mut values = Vec::with_capacity(self.param_count());
        for (l, s) in self.layers.iter().zip(&shapes) {
            let fan_in = s.c * l.kernel * l.kernel;
            let std = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..l.out_channels * fan_in {
                values.push(std * rng::normal(rng));
            }
            values.extend(std::iter::repeat_n(0.0, l.out_channels));
        }
        let flat = self.flat_len();
        let std = 1.0 / (flat as f64).sqrt();
        for _ in 0..flat * self.feature_dim {
            values.push(std * rng::normal(rng));
        }
        values.extend(std::iter::repeat_n(0.0, self.feature_dim));
        ParamVector::from_vec(values)
    }

    pub fn descriptor(&self) -> String {
        let layers: Vec<String> = self
            .layers
            .iter()
            .map(|l| format!("{}x{}s{}", l.out_channels, l.kernel, l.stride))
            .collect();
        format!(
            "conv:{}x{}x{}:[{}]:{}",
            self.channels,
            self.height,
            self.width,
            layers.join(","),
            self.feature_dim
        )
    }

    pub fn from_descriptor(s: &str) -> Result<Self> {
        let bad = || Error::Checkpoint(format!("bad conv descriptor {s:?}"));
        let rest = s.strip_prefix("conv:").ok_or_else(bad)?;
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let dims: Vec<usize> = parts[0]
            .split('x')
            .map(|d| d.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        if dims.len() != 3 {
            return Err(bad());
        }
        let inner = parts[1]
            .strip_prefix('[')
            .and_then(|p| p.strip_suffix(']'))
            .ok_or_else(bad)?;
        let mut layers = Vec::new();
        for l in inner.split(',').filter(|l| !l.is_empty()) {
            let (oc, rest) = l.split_once('x').ok_or_else(bad)?;
            let (k, st) = rest.split_once('s').ok_or_else(bad)?;
            layers.push(ConvLayer {
                out_channels: oc.parse().map_err(|_| bad())?,
                kernel: k.parse().map_err(|_| bad())?,
                stride: st.parse().map_err(|_| bad())?,
            });
        }
        let spec = ConvSpec {
            channels: dims[0],
            height: dims[1],
            width: dims[2],
            layers,
            feature_dim: parts[2].parse().map_err(|_| bad())?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

pub(crate) struct ConvTape {
    /// Input of each conv layer (index 0 is the image).
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    proj_pre: Vec<f64>,
}

fn conv_layer_forward(
    w: &[f64],
    b: &[f64],
    layer: &ConvLayer,
    inp: Shape,
    out: Shape,
    x: &[f64],
) -> Vec<f64> {
    let k = layer.kernel;
    let mut z = vec![0.0; out.len()];
    for oc in 0..out.c {
        for oy in 0..out.h {
            for ox in 0..out.w {
                let mut acc = b[oc];
                for ic in 0..inp.c {
                    let wk = &w[((oc * inp.c + ic) * k) * k..((oc * inp.c + ic) * k + k) * k];
                    let base = ic * inp.h * inp.w;
                    for ky in 0..k {
                        let row = base + (oy * layer.stride + ky) * inp.w + ox * layer.stride;
                        let xs = &x[row..row + k];
                        let ws = &wk[ky * k..ky * k + k];
                        acc += xs.iter().zip(ws).map(|(a, c)| a * c).sum::<f64>();
                    }
                }
                z[(oc * out.h + oy) * out.w + ox] = acc;
            }
        }
    }
    z
}

pub(crate) fn forward_one(params: &[f64], spec: &ConvSpec, image: &[f64], tape: Option<&mut ConvTape>) -> Vec<f64> {
    let shapes = spec.shapes();
    let mut offset = 0;
    let mut cur = image.to_vec();
    let mut inputs = Vec::new();
    let mut pres = Vec::new();
    for (i, layer) in spec.layers.iter().enumerate() {
        let (inp, out) = (shapes[i], shapes[i + 1]);
        let nw = layer.out_channels * inp.c * layer.kernel * layer.kernel;
        let w = &params[offset..offset + nw];
        let b = &params[offset + nw..offset + nw + layer.out_channels];
        offset += nw + layer.out_channels;
        let z = conv_layer_forward(w, b, layer, inp, out, &cur);
        let a: Vec<f64> = z.iter().map(|&v| elu(v)).collect();
        inputs.push(std::mem::replace(&mut cur, a));
        pres.push(z);
    }
    let flat = spec.flat_len();
    let w = &params[offset..offset + flat * spec.feature_dim];
    let b = &params[offset + flat * spec.feature_dim..];
    let proj_pre: Vec<f64> = (0..spec.feature_dim)
        .map(|o| b[o] + w[o * flat..(o + 1) * flat].iter().zip(&cur).map(|(a, c)| a * c).sum::<f64>())
        .collect();
    let features = proj_pre.iter().map(|v| v.tanh()).collect();
    if let Some(t) = tape {
        inputs.push(cur);
        t.inputs = inputs;
        t.pre = pres;
        t.proj_pre = proj_pre;
    }
    features
}

pub(crate) fn new_tape() -> ConvTape {
    ConvTape {
        inputs: Vec::new(),
        pre: Vec::new(),
        proj_pre: Vec::new(),
    }
}

pub(crate) fn backward_one(
    params: &[f64],
    spec: &ConvSpec,
    tape: &ConvTape,
    upstream: &[f64],
    grad: &mut [f64],
) -> Vec<f64> {
    let shapes = spec.shapes();
    let mut offsets = Vec::new();
    let mut offset = 0;
    for (i, l) in spec.layers.iter().enumerate() {
        offsets.push(offset);
        offset += l.out_channels * shapes[i].c * l.kernel * l.kernel + l.out_channels;
    }
    let flat = spec.flat_len();
    let fd = spec.feature_dim;

    // projection + tanh
    let d_proj: Vec<f64> = upstream
        .iter()
        .zip(&tape.proj_pre)
        .map(|(g, z)| {
            let t = z.tanh();
            g * (1.0 - t * t)
        })
        .collect();
    let flat_in = &tape.inputs[spec.layers.len()];
    {
        let (gw, gb) = grad[offset..offset + flat * fd + fd].split_at_mut(flat * fd);
        for o in 0..fd {
            gb[o] += d_proj[o];
            for (g, x) in gw[o * flat..(o + 1) * flat].iter_mut().zip(flat_in) {
                *g += d_proj[o] * x;
            }
        }
    }
    let wp = &params[offset..offset + flat * fd];
    let mut delta = vec![0.0; flat];
    for o in 0..fd {
        for (d, w) in delta.iter_mut().zip(&wp[o * flat..(o + 1) * flat]) {
            *d += w * d_proj[o];
        }
    }

    for (i, layer) in spec.layers.iter().enumerate().rev() {
        let (inp, out) = (shapes[i], shapes[i + 1]);
        for (d, &z) in delta.iter_mut().zip(&tape.pre[i]) {
            *d *= elu_grad(z);
        }
        let k = layer.kernel;
        let nw = layer.out_channels * inp.c * k * k;
        let off = offsets[i];
        let x = &tape.inputs[i];
        let w = &params[off..off + nw];
        let mut din = vec![0.0; inp.len()];
        let (gw, gb) = grad[off..off + nw + layer.out_channels].split_at_mut(nw);
        for oc in 0..out.c {
            for oy in 0..out.h {
                for ox in 0..out.w {
                    let d = delta[(oc * out.h + oy) * out.w + ox];
                    gb[oc] += d;
                    for ic in 0..inp.c {
                        let wbase = (oc * inp.c + ic) * k * k;
                        let base = ic * inp.h * inp.w;
                        for ky in 0..k {
                            let row = base + (oy * layer.stride + ky) * inp.w + ox * layer.stride;
                            for kx in 0..k {
                                gw[wbase + ky * k + kx] += d * x[row + kx];
                                din[row + kx] += d * w[wbase + ky * k + kx];
                            }
                        }
                    }
                }
            }
        }
        delta = din;
    }
    delta
}

fn check(params: &ParamVector, spec: &ConvSpec, images: &Batch) -> Result<()> {
    check_len("conv params", spec.param_count(), params.len())?;
    check_len("conv image size", spec.input_len(), images.cols())
}

pub fn conv_forward(params: &ParamVector, spec: &ConvSpec, images: &Batch) -> Result<Batch> {
    check(params, spec, images)?;
    let mut out = Batch::zeros(images.rows(), spec.feature_dim);
    for (i, img) in images.iter_rows().enumerate() {
        let f = forward_one(params.as_slice(), spec, img, None);
        out.row_mut(i).copy_from_slice(&f);
    }
    Ok(out)
}

pub fn conv_backward(
    params: &ParamVector,
    spec: &ConvSpec,
    images: &Batch,
    upstream: &Batch,
) -> Result<(ParamVector, Batch)> {
    check(params, spec, images)?;
    check_len("conv upstream width", spec.feature_dim, upstream.cols())?;
    check_len("conv upstream rows", images.rows(), upstream.rows())?;
    let mut grad = vec![0.0; params.len()];
    let mut input_grad = Batch::zeros(images.rows(), spec.input_len());
    for (i, img) in images.iter_rows().enumerate() {
        let mut tape = new_tape();
        forward_one(params.as_slice(), spec, img, Some(&mut tape));
        let g = backward_one(params.as_slice(), spec, &tape, upstream.row(i), &mut grad);
        input_grad.row_mut(i).copy_from_slice(&g);
    }
    Ok((ParamVector::from_vec(grad), input_grad))
}
