//! Independent checks of the estimator identities and of every analytic
//! gradient. Oracles here use their own arithmetic (central differences,
//! forward-mode tangents, Monte-Carlo sums) rather than the code they test.

use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::envs::Observation;
use crate::error::{Error, Result};
use crate::nn::{
    conv_backward, conv_forward, mlp_backward, Activation, Batch, ConvLayer, ConvSpec, MlpSpec, ParamVector,
    PolicyInput, PolicyNet,
};
use crate::rng::{self, Domain};
use crate::rollout::{td_lambda_row, RolloutConfig, SegmentBuffer, StepEnd};
use crate::sdpg::{actor_exploration_loss, exploration_ascent, mean_ascent, DeltaJ};

/// Central differences, one coordinate at a time.
pub fn finite_diff_grad(f: &mut dyn FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct MonteCarloEstimate {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub samples: usize,
}

/// Monte-Carlo mean of (J(A + δE) - J(A)) / σ · E with a fixed σ.
pub fn mc_smoothed_grad(j: &dyn Fn(&[f64]) -> f64, a: &[f64], delta: f64, sigma: f64, samples: usize, seed: u64) -> MonteCarloEstimate {
    let dim = a.len();
    let base = j(a);
    let mut rng = rng::stream(seed, Domain::Oracle, &[0x7431]);
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    let mut e = vec![0.0; dim];
    let mut u = vec![0.0; dim];
    for _ in 0..samples {
        rng::fill_normal(&mut rng, &mut e);
        for k in 0..dim {
            u[k] = a[k] + delta * e[k];
        }
        let w = (j(&u) - base) / sigma;
        for k in 0..dim {
            let s = w * e[k];
            sum[k] += s;
            sum_sq[k] += s * s;
        }
    }
    let n = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let stderr = sum_sq
        .iter()
        .zip(&mean)
        .map(|(sq, m)| ((sq / n - m * m).max(0.0) * n / (n - 1.0) / n).sqrt())
        .collect();
    MonteCarloEstimate { mean, stderr, samples }
}

/// Std of J(A + δE) - J(A) over an independent pilot batch.
pub fn pilot_sigma(j: &dyn Fn(&[f64]) -> f64, a: &[f64], delta: f64, samples: usize, seed: u64) -> f64 {
    let base = j(a);
    let mut rng = rng::stream(seed, Domain::Oracle, &[0x9170]);
    let mut e = vec![0.0; a.len()];
    let diffs: Vec<f64> = (0..samples)
        .map(|_| {
            rng::fill_normal(&mut rng, &mut e);
            let u: Vec<f64> = a.iter().zip(&e).map(|(x, z)| x + delta * z).collect();
            j(&u) - base
        })
        .collect();
    let m = diffs.iter().sum::<f64>() / samples as f64;
    (diffs.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / samples as f64).sqrt()
}

// forward-mode reference for the MLP

fn act(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Elu => {
            if x > 0.0 {
                x
            } else {
                x.exp() - 1.0
            }
        }
        Activation::Tanh => x.tanh(),
        Activation::Identity => x,
    }
}

fn act_d(a: Activation, x: f64) -> f64 {
    match a {
        Activation::Elu => {
            if x > 0.0 {
                1.0
            } else {
                x.exp()
            }
        }
        Activation::Tanh => 1.0 - x.tanh().powi(2),
        Activation::Identity => 1.0,
    }
}

/// d output / d params for one input, as an (out, P) row-major matrix.
///
/// Each column is a forward tangent seeded at the layer owning that parameter.
pub fn mlp_param_jacobian(spec: &MlpSpec, params: &[f64], x: &[f64]) -> Vec<f64> {
    let dims = spec.layer_dims();
    let last = dims.len() - 1;
    let mut offsets = Vec::new();
    let mut off = 0;
    for &(i, o) in &dims {
        offsets.push(off);
        off += i * o + o;
    }
    let total = off;
    let weight = |l: usize, o: usize, i: usize| params[offsets[l] + o * dims[l].0 + i];
    // plain forward, keeping layer inputs and pre-activations
    let mut inputs = Vec::new();
    let mut pre = Vec::new();
    let mut h = x.to_vec();
    for (l, &(fi, fo)) in dims.iter().enumerate() {
        let z: Vec<f64> = (0..fo)
            .map(|o| params[offsets[l] + fi * fo + o] + (0..fi).map(|i| weight(l, o, i) * h[i]).sum::<f64>())
            .collect();
        inputs.push(h);
        h = if l == last { z.clone() } else { z.iter().map(|&v| act(spec.activation, v)).collect() };
        pre.push(z);
    }
    let out_dim = spec.output_dim;
    let mut jac = vec![0.0; out_dim * total];
    for (l, &(fi, fo)) in dims.iter().enumerate() {
        for p in 0..fi * fo + fo {
            let (o, scale) = if p < fi * fo { (p / fi, inputs[l][p % fi]) } else { (p - fi * fo, 1.0) };
            let mut dz = vec![0.0; fo];
            dz[o] = scale;
            for m in l + 1..dims.len() {
                let dh: Vec<f64> = dz.iter().zip(&pre[m - 1]).map(|(d, z)| d * act_d(spec.activation, *z)).collect();
                let (mi, mo) = dims[m];
                dz = (0..mo).map(|r| (0..mi).map(|c| weight(m, r, c) * dh[c]).sum()).collect();
            }
            for r in 0..out_dim {
                jac[r * total + offsets[l] + p] = dz[r];
            }
        }
    }
    jac
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    let mut v = vec![0.0; n];
    rng::fill_normal(rng, &mut v);
    v.iter_mut().for_each(|x| *x *= scale);
    v
}

/// A random MLP with two hidden layers of width <= 32, params and a batch.
pub fn random_mlp(seed: u64) -> (MlpSpec, ParamVector, Batch) {
    let mut r = rng::stream(seed, Domain::Oracle, &[0x31]);
    let input = r.random_range(1..=8);
    let widths = vec![r.random_range(1..=32), r.random_range(1..=32)];
    let output = r.random_range(1..=4);
    let activation = if r.random_bool(0.5) { Activation::Elu } else { Activation::Tanh };
    let spec = MlpSpec::new(input, widths, output, activation).expect("valid random spec");
    let params = ParamVector::from_vec(normal_vec(&mut r, spec.param_count(), 0.4));
    let rows = r.random_range(1..=8);
    let x = Batch::from_flat(rows, input, normal_vec(&mut r, rows * input, 1.0)).expect("shape");
    (spec, params, x)
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale = a
        .iter()
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
        .max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// (∂A/∂θ)ᵀ v summed over rows, from the forward-mode Jacobian.
fn jacobian_transpose_product(spec: &MlpSpec, params: &ParamVector, x: &Batch, v: &Batch) -> Vec<f64> {
    let total = params.len();
    let mut out = vec![0.0; total];
    for i in 0..x.rows() {
        let jac = mlp_param_jacobian(spec, params.as_slice(), x.row(i));
        for (r, vr) in v.row(i).iter().enumerate() {
            for p in 0..total {
                out[p] += jac[r * total + p] * vr;
            }
        }
    }
    out
}

/// Supervised trick: ∇θ ½‖A - sg(A + d)‖² against -(∂A/∂θ)ᵀ d.
/// Returns (lhs, rhs).
pub fn prop1_sides(seed: u64, direction_scale: f64) -> (Vec<f64>, Vec<f64>) {
    let (spec, params, x) = random_mlp(seed);
    let mut r = rng::stream(seed, Domain::Oracle, &[0x32]);
    let a = crate::nn::mlp_forward(&params, &spec, &x).expect("forward");
    let d = Batch::from_flat(
        x.rows(),
        spec.output_dim,
        normal_vec(&mut r, x.rows() * spec.output_dim, direction_scale),
    )
    .expect("shape");
    // target materialized as plain numbers: the stop-gradient
    let mut residual = Batch::zeros(x.rows(), spec.output_dim);
    for i in 0..x.rows() {
        for k in 0..spec.output_dim {
            let target = a.row(i)[k] + d.row(i)[k];
            residual.row_mut(i)[k] = a.row(i)[k] - target;
        }
    }
    let (lhs, _) = mlp_backward(&params, &spec, &x, &residual).expect("backward");
    let rhs: Vec<f64> = jacobian_transpose_product(&spec, &params, &x, &d).iter().map(|v| -v).collect();
    (lhs.into_vec(), rhs)
}

pub fn check_prop1(seed: u64) -> f64 {
    let (l, r) = prop1_sides(seed, 1.0);
    rel_err(&l, &r)
}

/// ∇θ of (1/2α) Σ ‖π(o) - target‖² by reverse mode.
pub fn bc_gradient(spec: &MlpSpec, params: &ParamVector, x: &Batch, target: &Batch, alpha: f64) -> Vec<f64> {
    let pi = crate::nn::mlp_forward(params, spec, x).expect("forward");
    let mut up = Batch::zeros(x.rows(), spec.output_dim);
    for i in 0..x.rows() {
        for k in 0..spec.output_dim {
            up.row_mut(i)[k] = (pi.row(i)[k] - target.row(i)[k]) / alpha;
        }
    }
    mlp_backward(params, spec, x, &up).expect("backward").0.into_vec()
}

/// BC equivalence with target A + α∇J for a random concave quadratic J.
/// Returns (-∇θ L_BC, (∂A/∂θ)ᵀ ∇J).
pub fn thm2_sides(seed: u64) -> (Vec<f64>, Vec<f64>) {
    let (spec, params, x) = random_mlp(seed);
    let mut r = rng::stream(seed, Domain::Oracle, &[0x33]);
    let alpha = r.random_range(0.01..2.0);
    let a = crate::nn::mlp_forward(&params, &spec, &x).expect("forward");
    let center = normal_vec(&mut r, a.as_slice().len(), 1.0);
    let weights: Vec<f64> = (0..center.len()).map(|_| r.random_range(0.1..3.0)).collect();
    // J(A) = -Σ w (A - c)², ∇J = -2 w (A - c)
    let grad_j: Vec<f64> = a
        .as_slice()
        .iter()
        .zip(&center)
        .zip(&weights)
        .map(|((ai, c), w)| -2.0 * w * (ai - c))
        .collect();
    let grad_j = Batch::from_flat(x.rows(), spec.output_dim, grad_j).expect("shape");
    let mut target = a.clone();
    for (t, g) in target.as_mut_slice().iter_mut().zip(grad_j.as_slice()) {
        *t += alpha * g;
    }
    let lhs: Vec<f64> = bc_gradient(&spec, &params, &x, &target, alpha).iter().map(|v| -v).collect();
    let rhs = jacobian_transpose_product(&spec, &params, &x, &grad_j);
    (lhs, rhs)
}

pub fn check_thm2(seed: u64) -> f64 {
    let (l, r) = thm2_sides(seed);
    rel_err(&l, &r)
}

/// A buffer holding only what the target computations read.
pub fn synthetic_buffer(n: usize, m: usize, h: usize, delta: Vec<f64>, eps: Vec<f64>, actions: Batch) -> SegmentBuffer {
    let rows = n * (m + 1);
    SegmentBuffer {
        config: RolloutConfig {
            n,
            m,
            h,
            gamma: 0.0,
            lambda: 0.0,
        },
        action_dim: delta.len(),
        state_dim: 0,
        delta,
        eps,
        rewards: vec![0.0; rows * h],
        ends: vec![StepEnd::Continue; rows * h],
        next_values: vec![0.0; rows * h],
        states: Vec::new(),
        observations: Vec::<Observation>::new(),
        actions,
    }
}

/// Random return function over a flattened action sequence.
fn wavy_return(u: &[f64], c: &[f64]) -> f64 {
    u.iter()
        .zip(c)
        .enumerate()
        .map(|(k, (x, ck))| (ck * x).sin() - 0.1 * (k as f64 + 1.0) * x * x)
        .sum()
}

/// (SDPG direction with M = 1 and σ replaced by δ, REINFORCE direction).
pub fn reinforce_sides(seed: u64, return_scale: f64, zero_noise: bool) -> (Vec<f64>, Vec<f64>) {
    let mut r = rng::stream(seed, Domain::Oracle, &[0x34]);
    let h = r.random_range(1..=5);
    let d = r.random_range(1..=3);
    let delta_scalar = r.random_range(0.05..1.0);
    let a = normal_vec(&mut r, h * d, 1.0);
    let mut e = normal_vec(&mut r, h * d, 1.0);
    if zero_noise {
        e.iter_mut().for_each(|x| *x = 0.0);
    }
    let c = normal_vec(&mut r, h * d, 2.0);
    let u: Vec<f64> = a.iter().zip(&e).map(|(ai, ei)| ai + delta_scalar * ei).collect();
    let j_u = return_scale * wavy_return(&u, &c);
    let j_a = return_scale * wavy_return(&a, &c);

    // REINFORCE: (J(U) - J(A)) ∇_a log N(u; a, δ²) = (J(U) - J(A)) (u - a) / δ²
    let reinforce: Vec<f64> = u
        .iter()
        .zip(&a)
        .map(|(ui, ai)| (j_u - j_a) * (ui - ai) / (delta_scalar * delta_scalar))
        .collect();

    // SDPG mean ascent over j = 0..=1 with ΔJ / δ, rescaled from 1/(M+1) to 1/M
    let mut eps = vec![0.0; 2 * h * d];
    eps[h * d..].copy_from_slice(&e);
    let actions = Batch::from_flat(h, d, a.clone()).expect("shape");
    let buf = synthetic_buffer(1, 1, h, vec![delta_scalar; d], eps, actions);
    let mut values = vec![0.0; 2 * h];
    values[h..].fill((j_u - j_a) / delta_scalar);
    let dj = DeltaJ {
        n: 1,
        m: 1,
        h,
        values,
        sigma: vec![delta_scalar; h],
    };
    let sdpg: Vec<f64> = mean_ascent(&buf, &dj).as_slice().iter().map(|g| 2.0 * g).collect();
    (sdpg, reinforce)
}

pub fn check_reinforce_special_case(seed: u64) -> f64 {
    let (s, r) = reinforce_sides(seed, 1.0, false);
    s.iter()
        .zip(&r)
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Largest |mean - analytic| / stderr over the components, for J = -‖A‖².
pub fn check_theorem1(seed: u64, samples: usize) -> f64 {
    let dim = 8;
    let delta = 0.1;
    let mut r = rng::stream(seed, Domain::Oracle, &[0x35]);
    let a = normal_vec(&mut r, dim, 1.0);
    let j = |u: &[f64]| -u.iter().map(|x| x * x).sum::<f64>();
    let sigma = pilot_sigma(&j, &a, delta, 10_000, seed ^ 0xABCD);
    let est = mc_smoothed_grad(&j, &a, delta, sigma, samples, seed);
    // ∇J_δ(A) = -2A since J_δ(A) = J(A) - δ² dim
    (0..dim)
        .map(|k| {
            let analytic = delta / sigma * (-2.0 * a[k]);
            (est.mean[k] - analytic).abs() / est.stderr[k]
        })
        .fold(0.0, f64::max)
}

/// Exploration ascent for J = -‖u‖² with oversized δ: every component must be
/// negative and agree with (δ/σ) dE[J]/dδ̃ from common-random-number finite
/// differences. Returns the largest z-score.
pub fn check_exploration_sign(seed: u64, samples: usize) -> Result<f64> {
    let d = 3;
    let mut r = rng::stream(seed, Domain::Oracle, &[0x36]);
    let a = normal_vec(&mut r, d, 0.3);
    let log_delta: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..0.0)).collect();
    let delta: Vec<f64> = log_delta.iter().map(|l| l.exp()).collect();
    let j = |u: &[f64]| -u.iter().map(|x| x * x).sum::<f64>();
    let eps = normal_vec(&mut r, samples * d, 1.0);
    let ja = j(&a);
    let diffs: Vec<f64> = eps
        .chunks(d)
        .map(|e| {
            let u: Vec<f64> = (0..d).map(|k| a[k] + delta[k] * e[k]).collect();
            j(&u) - ja
        })
        .collect();
    let mean = diffs.iter().sum::<f64>() / samples as f64;
    let sigma = (diffs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / samples as f64).sqrt();

    // module under test: one (n, t) cell holding all samples as auxiliaries
    let mut all_eps = vec![0.0; d];
    all_eps.extend_from_slice(&eps);
    let buf = synthetic_buffer(1, samples, 1, delta.clone(), all_eps, Batch::from_flat(1, d, a.clone())?);
    let mut values = vec![0.0];
    values.extend(diffs.iter().map(|x| x / sigma));
    let dj = DeltaJ {
        n: 1,
        m: samples,
        h: 1,
        values,
        sigma: vec![sigma],
    };
    let ascent = exploration_ascent(&buf, &dj);

    // (δ/σ) dE[J]/dδ̃ from per-sample central differences in δ̃ on fresh noise
    let fresh_n = 100_000;
    let fresh = normal_vec(&mut rng::stream(seed, Domain::Oracle, &[0x37]), fresh_n * d, 1.0);
    let scale = samples as f64 / (samples as f64 + 1.0);
    let mut worst: f64 = 0.0;
    for k in 0..d {
        let terms: Vec<f64> = eps
            .chunks(d)
            .zip(&diffs)
            .map(|(e, dj)| dj / sigma * (e[k] * e[k] - 1.0) * delta[k])
            .collect();
        let (_, se) = mean_and_stderr(&terms);
        let step = 1e-4;
        let fd_terms: Vec<f64> = fresh
            .chunks(d)
            .map(|e| {
                let mut probe = log_delta.clone();
                let f = |p: &[f64]| j(&(0..d).map(|q| a[q] + p[q].exp() * e[q]).collect::<Vec<_>>());
                probe[k] += step;
                let up = f(&probe);
                probe[k] -= 2.0 * step;
                (up - f(&probe)) / (2.0 * step)
            })
            .collect();
        let (fd, fd_se) = mean_and_stderr(&fd_terms);
        if ascent[k] >= 0.0 || fd >= 0.0 {
            return Ok(f64::INFINITY);
        }
        let factor = scale * delta[k] / sigma;
        let z = (ascent[k] - factor * fd).abs() / (se * scale).hypot(factor * fd_se);
        worst = worst.max(z);
    }
    Ok(worst)
}

fn mean_and_stderr(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Relative error of mlp_backward (params and inputs) against central differences.
pub fn check_mlp_gradient(seed: u64) -> f64 {
    let (spec, params, x) = random_mlp(seed);
    let mut r = rng::stream(seed, Domain::Oracle, &[0x38]);
    let up = Batch::from_flat(x.rows(), spec.output_dim, normal_vec(&mut r, x.rows() * spec.output_dim, 1.0)).expect("shape");
    let (g, gx) = mlp_backward(&params, &spec, &x, &up).expect("backward");
    let dot = |p: &[f64], inp: &Batch| -> f64 {
        let y = crate::nn::mlp_forward(&ParamVector::from_vec(p.to_vec()), &spec, inp).expect("forward");
        y.as_slice().iter().zip(up.as_slice()).map(|(a, b)| a * b).sum()
    };
    let fd = finite_diff_grad(&mut |p| dot(p, &x), params.as_slice(), 1e-6);
    let fdx = finite_diff_grad(
        &mut |xs| dot(params.as_slice(), &Batch::from_flat(x.rows(), x.cols(), xs.to_vec()).expect("shape")),
        x.as_slice(),
        1e-6,
    );
    rel_err(g.as_slice(), &fd).max(rel_err(gx.as_slice(), &fdx))
}

fn small_conv(r: &mut ChaCha8Rng) -> ConvSpec {
    let side = r.random_range(7..=11);
    ConvSpec {
        channels: r.random_range(1..=2),
        height: side,
        width: side,
        layers: vec![
            ConvLayer {
                out_channels: r.random_range(1..=3),
                kernel: 3,
                stride: 2,
            },
            ConvLayer {
                out_channels: r.random_range(1..=3),
                kernel: 2,
                stride: 1,
            },
        ],
        feature_dim: r.random_range(1..=5),
    }
}

/// Relative error of conv_backward (params and pixels) against central differences.
pub fn check_conv_gradient(seed: u64) -> f64 {
    let mut r = rng::stream(seed, Domain::Oracle, &[0x39]);
    let spec = small_conv(&mut r);
    spec.validate().expect("valid conv");
    let params = ParamVector::from_vec(normal_vec(&mut r, spec.param_count(), 0.3));
    let rows = 2;
    let img = Batch::from_flat(rows, spec.input_len(), (0..rows * spec.input_len()).map(|_| r.random::<f64>()).collect()).expect("shape");
    let up = Batch::from_flat(rows, spec.feature_dim, normal_vec(&mut r, rows * spec.feature_dim, 1.0)).expect("shape");
    let (g, gx) = conv_backward(&params, &spec, &img, &up).expect("backward");
    let dot = |p: &[f64], inp: &Batch| -> f64 {
        let y = conv_forward(&ParamVector::from_vec(p.to_vec()), &spec, inp).expect("forward");
        y.as_slice().iter().zip(up.as_slice()).map(|(a, b)| a * b).sum()
    };
    let fd = finite_diff_grad(&mut |p| dot(p, &img), params.as_slice(), 1e-6);
    let fdx = finite_diff_grad(
        &mut |xs| dot(params.as_slice(), &Batch::from_flat(rows, spec.input_len(), xs.to_vec()).expect("shape")),
        img.as_slice(),
        1e-6,
    );
    rel_err(g.as_slice(), &fd).max(rel_err(gx.as_slice(), &fdx))
}

/// Relative error of the full actor/exploration loss gradient (θ and δ̃) for
/// a pixel policy, against central differences of the loss value.
pub fn check_actor_loss_gradient(seed: u64) -> Result<f64> {
    let mut r = rng::stream(seed, Domain::Oracle, &[0x3A]);
    let enc = small_conv(&mut r);
    let vector_dim = r.random_range(1..=3);
    let d = r.random_range(1..=3);
    let head = MlpSpec::new(enc.feature_dim + vector_dim, vec![r.random_range(2..=12)], d, Activation::Elu)?;
    let policy = PolicyNet::new(Some(enc.clone()), vector_dim, head)?;
    let theta = ParamVector::from_vec(normal_vec(&mut r, policy.param_count(), 0.3));
    let rows = 3;
    let input = PolicyInput {
        images: Some(Batch::from_flat(rows, enc.input_len(), (0..rows * enc.input_len()).map(|_| r.random::<f64>()).collect())?),
        vectors: Batch::from_flat(rows, vector_dim, normal_vec(&mut r, rows * vector_dim, 1.0))?,
    };
    let target = Batch::from_flat(rows, d, normal_vec(&mut r, rows * d, 1.0))?;
    let log_delta = normal_vec(&mut r, d, 0.5);
    let log_delta_target = normal_vec(&mut r, d, 0.5);
    let alpha = r.random_range(0.0..1.0);
    let loss = actor_exploration_loss(&policy, &theta, &log_delta, &input, &target, &log_delta_target, alpha)?;
    let value = |th: &[f64], ld: &[f64]| {
        actor_exploration_loss(&policy, &ParamVector::from_vec(th.to_vec()), ld, &input, &target, &log_delta_target, alpha)
            .map(|l| l.total())
            .unwrap_or(f64::NAN)
    };
    let fd_theta = finite_diff_grad(&mut |th| value(th, &log_delta), theta.as_slice(), 1e-6);
    let fd_delta = finite_diff_grad(&mut |ld| value(theta.as_slice(), ld), &log_delta, 1e-6);
    Ok(rel_err(loss.grad_theta.as_slice(), &fd_theta).max(rel_err(&loss.grad_log_delta, &fd_delta)))
}

/// Backward recursion against the direct weighted sum of k-step returns.
pub fn check_td_lambda_hand_case() -> f64 {
    let (r, v, gamma, lambda) = ([1.0, 2.0, 3.0], [10.0, 20.0, 30.0], 0.9f64, 0.5f64);
    let g = td_lambda_row(&r, &v, &[StepEnd::Continue; 3], gamma, lambda);
    let k_step = |t: usize, k: usize| {
        (0..k).map(|l| gamma.powi(l as i32) * r[t + l]).sum::<f64>() + gamma.powi(k as i32) * v[t + k - 1]
    };
    (0..3)
        .map(|t| {
            let last = 3 - t;
            let mixed: f64 = (1..last)
                .map(|k| (1.0 - lambda) * lambda.powi(k as i32 - 1) * k_step(t, k))
                .sum::<f64>()
                + lambda.powi(last as i32 - 1) * k_step(t, last);
            (mixed - g[t]).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub error: f64,
    pub tolerance: f64,
    pub samples: usize,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, Default)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:<28} {:>6} {:>12} {:>10} {:>8} {:>9}\n",
            "check", "status", "error", "tolerance", "samples", "time_s"
        );
        for c in &self.checks {
            s.push_str(&format!(
                "{:<28} {:>6} {:>12.3e} {:>10.1e} {:>8} {:>9.3}\n",
                c.name,
                if c.passed { "PASS" } else { "FAIL" },
                c.error,
                c.tolerance,
                c.samples,
                c.wall_time_s
            ));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let io = |e: csv::Error| Error::Csv {
            path: path.to_path_buf(),
            reason: e.to_string(),
        };
        w.write_record(["name", "passed", "error", "tolerance", "samples", "wall_time_s"]).map_err(io)?;
        for c in &self.checks {
            w.write_record([
                c.name.clone(),
                c.passed.to_string(),
                format!("{:e}", c.error),
                format!("{:e}", c.tolerance),
                c.samples.to_string(),
                format!("{:.6}", c.wall_time_s),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn timed(name: &str, tolerance: f64, samples: usize, f: impl FnOnce() -> f64) -> CheckResult {
    let start = Instant::now();
    let error = f();
    CheckResult {
        name: name.to_string(),
        passed: error <= tolerance,
        error,
        tolerance,
        samples,
        wall_time_s: start.elapsed().as_secs_f64(),
    }
}

fn max_over(seeds: impl Iterator<Item = u64>, f: impl Fn(u64) -> f64) -> f64 {
    seeds.map(f).fold(0.0, |a: f64, b| if b.is_nan() { f64::NAN } else { a.max(b) })
}

/// Every registered check, once.
pub fn run_verification(seed: u64) -> VerificationReport {
    let s = seed.wrapping_mul(1000);
    let checks = vec![
        timed("theorem1_smoothed_gradient", 3.0, 100_000, || check_theorem1(seed, 100_000)),
        timed("prop1_supervised_trick", 1e-10, 20, || max_over(s..s + 20, check_prop1)),
        timed("thm2_behavior_cloning", 1e-10, 20, || max_over(s..s + 20, check_thm2)),
        timed("reinforce_special_case", 1e-12, 100, || max_over(s..s + 100, check_reinforce_special_case)),
        timed("grad_mlp", 1e-5, 10, || max_over(s..s + 10, check_mlp_gradient)),
        timed("grad_conv_encoder", 1e-5, 5, || max_over(s..s + 5, check_conv_gradient)),
        timed("grad_actor_loss", 1e-5, 5, || {
            max_over(s..s + 5, |k| check_actor_loss_gradient(k).unwrap_or(f64::INFINITY))
        }),
        timed("exploration_ascent_sign", 3.0, 50_000, || {
            check_exploration_sign(seed, 50_000).unwrap_or(f64::INFINITY)
        }),
        timed("td_lambda_hand_case", 1e-12, 1, check_td_lambda_hand_case),
    ];
    VerificationReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_examples() {
        let g = finite_diff_grad(&mut |x| x[0] * x[0] + x[1] * x[1], &[1.0, 2.0], 1e-4);
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        let g = finite_diff_grad(&mut |_| 3.0, &[1.0, 2.0], 1e-4);
        assert_eq!(g, vec![0.0, 0.0]);
    }

    #[test]
    fn constant_return_has_zero_estimate() {
        let est = mc_smoothed_grad(&|_| 5.0, &[0.1, 0.2], 0.3, 1.0, 1000, 1);
        assert!(est.mean.iter().all(|&m| m == 0.0));
        assert!(est.stderr.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn linear_return_estimate() {
        let c = [0.5, -1.0, 2.0];
        let j = |u: &[f64]| u.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>();
        let a = [0.3, 0.1, -0.2];
        let est = mc_smoothed_grad(&j, &a, 0.2, 0.7, 20_000, 4);
        for k in 0..3 {
            let analytic = 0.2 / 0.7 * c[k];
            assert!((est.mean[k] - analytic).abs() < 3.0 * est.stderr[k] + 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let (spec, params, x) = random_mlp(3);
        let jac = mlp_param_jacobian(&spec, params.as_slice(), x.row(0));
        let p = params.len();
        for out in 0..spec.output_dim {
            let fd = finite_diff_grad(
                &mut |q| {
                    crate::nn::mlp_forward(&ParamVector::from_vec(q.to_vec()), &spec, &x.select(&[0])).unwrap().row(0)[out]
                },
                params.as_slice(),
                1e-6,
            );
            assert!(rel_err(&jac[out * p..(out + 1) * p], &fd) < 1e-6);
        }
    }

    #[test]
    fn zero_direction_gives_zero_sides() {
        let (l, r) = prop1_sides(5, 0.0);
        assert!(l.iter().all(|&v| v == 0.0));
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn doubling_alpha_halves_bc_gradient() {
        let (spec, params, x) = random_mlp(8);
        let target = Batch::from_flat(x.rows(), spec.output_dim, vec![0.3; x.rows() * spec.output_dim]).unwrap();
        let g1 = bc_gradient(&spec, &params, &x, &target, 0.7);
        let g2 = bc_gradient(&spec, &params, &x, &target, 1.4);
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(a * 0.5, *b);
        }
    }

    #[test]
    fn reinforce_zero_noise_and_scaling() {
        let (s, r) = reinforce_sides(2, 1.0, true);
        assert!(s.iter().chain(&r).all(|&v| v == 0.0));
        let (s1, r1) = reinforce_sides(2, 1.0, false);
        let (s3, r3) = reinforce_sides(2, 3.0, false);
        for k in 0..s1.len() {
            assert!((s3[k] - 3.0 * s1[k]).abs() <= 1e-12 * s3[k].abs().max(1.0));
            assert!((r3[k] - 3.0 * r1[k]).abs() <= 1e-12 * r3[k].abs().max(1.0));
        }
    }

    #[test]
    fn td_hand_case_exact() {
        assert!(check_td_lambda_hand_case() < 1e-12);
    }
}
