//! The trainable noise predictor and the single-layer adaptor.
//!
//! The predictor is a three-layer convolutional network over the latent grid:
//! 3x3 zero-padded stride-1 convolutions with ReLU activations, hidden width
//! `hidden`, and a sinusoidal timestep embedding projected to a per-channel
//! bias that is added after the first convolution:
//!
//! ```text
//! eps_hat = conv3(relu(conv2(relu(conv1(z_t) + time_bias(t)))))
//! ```
//!
//! Gradients are derived by hand; `backward` returns exact analytic gradients
//! for every weight and bias given the upstream gradient of a scalar loss.
//! Forward and backward are pure functions of (params, inputs) with the
//! activation cache passed explicitly.

use crate::error::{Error, Result};
use crate::latent::LatentTensor;
use crate::rng::{derive, Stream};
use serde::{Deserialize, Serialize};

/// Convolution kernel side; all three layers use 3x3 kernels.
const KERNEL: usize = 3;

/// Architecture hyperparameters for the noise predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetConfig {
    pub hidden: usize,
    pub time_dim: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig { hidden: 32, time_dim: 16 }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if self.time_dim < 2 || self.time_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "time embedding dimension {} must be a positive even number",
                self.time_dim
            )));
        }
        Ok(())
    }
}

/// Weights of the noise predictor.
///
/// Convolution weights are stored row-major `[out][in][ky][kx]`; this is also
/// the serialization order in the model file. `time_w` is `[hidden][time_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub channels: usize,
    pub hidden: usize,
    pub time_dim: usize,
    /// Schedule length the timestep embedding frequencies span.
    pub t_max: usize,
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub conv3_w: Vec<f64>,
    pub conv3_b: Vec<f64>,
    pub time_w: Vec<f64>,
    pub time_b: Vec<f64>,
}

impl DenoiserParams {
    /// Seeded initialization: convolution weights drawn from
    /// N(0, 2 / fan_in), the time projection from N(0, 1 / time_dim), all
    /// biases zero. A fixed seed reproduces the exact same parameters.
    pub fn init(seed: u64, channels: usize, hidden: usize, time_dim: usize, t_max: usize) -> Result<Self> {
        if channels == 0 || hidden == 0 || t_max == 0 {
            return Err(Error::Config("denoiser dimensions must be positive".into()));
        }
        if time_dim < 2 || time_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "time embedding dimension {time_dim} must be a positive even number"
            )));
        }
        let mut stream = Stream::new(derive(seed, 0xD0));
        let conv_std = |fan_in: usize| (2.0 / fan_in as f64).sqrt();
        let mut fill = |n: usize, std: f64| -> Vec<f64> {
            (0..n).map(|_| stream.next_normal() * std).collect()
        };
        let k2 = KERNEL * KERNEL;
        Ok(DenoiserParams {
            channels,
            hidden,
            time_dim,
            t_max,
            conv1_w: fill(hidden * channels * k2, conv_std(channels * k2)),
            conv1_b: vec![0.0; hidden],
            conv2_w: fill(hidden * hidden * k2, conv_std(hidden * k2)),
            conv2_b: vec![0.0; hidden],
            conv3_w: fill(channels * hidden * k2, conv_std(hidden * k2)),
            conv3_b: vec![0.0; channels],
            time_w: fill(hidden * time_dim, (1.0 / time_dim as f64).sqrt()),
            time_b: vec![0.0; hidden],
        })
    }

    pub fn group_names() -> [&'static str; 8] {
        ["conv1_w", "conv1_b", "conv2_w", "conv2_b", "conv3_w", "conv3_b", "time_w", "time_b"]
    }

    pub fn groups(&self) -> [&[f64]; 8] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.conv3_w,
            &self.conv3_b,
            &self.time_w,
            &self.time_b,
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.conv3_w,
            &mut self.conv3_b,
            &mut self.time_w,
            &mut self.time_b,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

/// Gradients for every denoiser parameter group, same shapes as the params.
#[derive(Debug, Clone)]
pub struct DenoiserGrads {
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    pub conv3_w: Vec<f64>,
    pub conv3_b: Vec<f64>,
    pub time_w: Vec<f64>,
    pub time_b: Vec<f64>,
}

impl DenoiserGrads {
    pub fn zeros_like(p: &DenoiserParams) -> Self {
        DenoiserGrads {
            conv1_w: vec![0.0; p.conv1_w.len()],
            conv1_b: vec![0.0; p.conv1_b.len()],
            conv2_w: vec![0.0; p.conv2_w.len()],
            conv2_b: vec![0.0; p.conv2_b.len()],
            conv3_w: vec![0.0; p.conv3_w.len()],
            conv3_b: vec![0.0; p.conv3_b.len()],
            time_w: vec![0.0; p.time_w.len()],
            time_b: vec![0.0; p.time_b.len()],
        }
    }

    pub fn groups(&self) -> [&[f64]; 8] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.conv3_w,
            &self.conv3_b,
            &self.time_w,
            &self.time_b,
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut Vec<f64>; 8] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.conv3_w,
            &mut self.conv3_b,
            &mut self.time_w,
            &mut self.time_b,
        ]
    }

    pub fn accumulate(&mut self, other: &DenoiserGrads) {
        for (mine, theirs) in self.groups_mut().into_iter().zip(other.groups()) {
            for (m, t) in mine.iter_mut().zip(theirs) {
                *m += t;
            }
        }
    }
}

/// Sinusoidal timestep embedding: `time_dim / 2` periods geometrically spaced
/// from 1 to `t_max`; entry 2k is sin(t / omega_k), entry 2k+1 is
/// cos(t / omega_k). The slowest component, cos(t / t_max), is strictly
/// decreasing over 1..=t_max, so distinct timesteps get distinct embeddings.
pub fn timestep_embedding(t: usize, time_dim: usize, t_max: usize) -> Vec<f64> {
    let half = time_dim / 2;
    let mut emb = Vec::with_capacity(time_dim);
    for k in 0..half {
        let exponent = if half == 1 { 1.0 } else { k as f64 / (half - 1) as f64 };
        let omega = (t_max as f64).powf(exponent);
        let phase = t as f64 / omega;
        emb.push(phase.sin());
        emb.push(phase.cos());
    }
    emb
}

/// Cached activations from a forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    h: usize,
    w: usize,
    emb: Vec<f64>,
    input: Vec<f64>,
    a1: Vec<f64>,
    r1: Vec<f64>,
    a2: Vec<f64>,
    r2: Vec<f64>,
}

fn check_input(p: &DenoiserParams, z_t: &LatentTensor, t: usize) -> Result<()> {
    if z_t.channels() != p.channels {
        return Err(Error::Shape(format!(
            "latent has {} channels, denoiser expects {}",
            z_t.channels(),
            p.channels
        )));
    }
    if t == 0 || t > p.t_max {
        return Err(Error::Config(format!("timestep {t} outside 1..={}", p.t_max)));
    }
    Ok(())
}

/// 3x3 zero-padded convolution of an HWC plane.
/// `out[i,j,o] = bias[o] + sum_{ky,kx,ci} w[o,ci,ky,kx] * inp[i+ky-1, j+kx-1, ci]`.
fn conv3x3(
    inp: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    weights: &[f64],
    bias: &[f64],
    out: &mut [f64],
) {
    for i in 0..h {
        for j in 0..w {
            for o in 0..cout {
                let mut acc = bias[o];
                for ky in 0..KERNEL {
                    let y = i + ky;
                    if y < 1 || y > h {
                        continue;
                    }
                    let y = y - 1;
                    for kx in 0..KERNEL {
                        let x = j + kx;
                        if x < 1 || x > w {
                            continue;
                        }
                        let x = x - 1;
                        let in_base = (y * w + x) * cin;
                        let w_base = ((o * cin) * KERNEL + ky) * KERNEL + kx;
                        for ci in 0..cin {
                            acc += weights[w_base + ci * KERNEL * KERNEL] * inp[in_base + ci];
                        }
                    }
                }
                out[(i * w + j) * cout + o] = acc;
            }
        }
    }
}

/// Backward of `conv3x3`: accumulates weight/bias gradients and, when
/// `grad_in` is provided, the gradient with respect to the input plane.
#[allow(clippy::too_many_arguments)]
fn conv3x3_backward(
    inp: &[f64],
    h: usize,
    w: usize,
    cin: usize,
    cout: usize,
    weights: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    mut grad_in: Option<&mut [f64]>,
) {
    for i in 0..h {
        for j in 0..w {
            let out_base = (i * w + j) * cout;
            for o in 0..cout {
                let g = grad_out[out_base + o];
                if g == 0.0 {
                    continue;
                }
                grad_b[o] += g;
                for ky in 0..KERNEL {
                    let y = i + ky;
                    if y < 1 || y > h {
                        continue;
                    }
                    let y = y - 1;
                    for kx in 0..KERNEL {
                        let x = j + kx;
                        if x < 1 || x > w {
                            continue;
                        }
                        let x = x - 1;
                        let in_base = (y * w + x) * cin;
                        let w_base = ((o * cin) * KERNEL + ky) * KERNEL + kx;
                        for ci in 0..cin {
                            grad_w[w_base + ci * KERNEL * KERNEL] += g * inp[in_base + ci];
                        }
                        if let Some(gi) = grad_in.as_deref_mut() {
                            for ci in 0..cin {
                                gi[in_base + ci] += g * weights[w_base + ci * KERNEL * KERNEL];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Forward pass returning the prediction together with the activation cache
/// needed for `backward`.
pub fn forward(p: &DenoiserParams, z_t: &LatentTensor, t: usize) -> Result<(LatentTensor, ForwardCache)> {
    check_input(p, z_t, t)?;
    let (h, w, c) = z_t.shape();
    let cells = h * w;
    let emb = timestep_embedding(t, p.time_dim, p.t_max);

    // Per-channel time bias: time_w . emb + time_b.
    let mut time_bias = vec![0.0; p.hidden];
    for (o, tb) in time_bias.iter_mut().enumerate() {
        let mut acc = p.time_b[o];
        for (d, e) in emb.iter().enumerate() {
            acc += p.time_w[o * p.time_dim + d] * e;
        }
        *tb = acc;
    }

    let mut a1 = vec![0.0; cells * p.hidden];
    conv3x3(z_t.values(), h, w, c, p.hidden, &p.conv1_w, &p.conv1_b, &mut a1);
    for cell in 0..cells {
        for o in 0..p.hidden {
            a1[cell * p.hidden + o] += time_bias[o];
        }
    }
    let r1: Vec<f64> = a1.iter().map(|v| v.max(0.0)).collect();

    let mut a2 = vec![0.0; cells * p.hidden];
    conv3x3(&r1, h, w, p.hidden, p.hidden, &p.conv2_w, &p.conv2_b, &mut a2);
    let r2: Vec<f64> = a2.iter().map(|v| v.max(0.0)).collect();

    let mut a3 = vec![0.0; cells * c];
    conv3x3(&r2, h, w, p.hidden, c, &p.conv3_w, &p.conv3_b, &mut a3);

    let mut eps_hat = LatentTensor::from_vec(h, w, c, a3)?;
    eps_hat.origin = z_t.origin;
    let cache = ForwardCache { h, w, emb, input: z_t.values().to_vec(), a1, r1, a2, r2 };
    Ok((eps_hat, cache))
}

/// Predict the injected noise for a noised latent at timestep `t`.
pub fn predict_noise(p: &DenoiserParams, z_t: &LatentTensor, t: usize) -> Result<LatentTensor> {
    forward(p, z_t, t).map(|(eps_hat, _)| eps_hat)
}

/// Reverse-mode pass. `grad_out` is dLoss/d(eps_hat) with the latent's shape;
/// the returned gradients are exact for the forward pass cached in `cache`.
/// Set `want_input_grad` to also get dLoss/d(z_t), needed when the loss must
/// reach parameters upstream of the predictor.
pub fn backward(
    p: &DenoiserParams,
    cache: &ForwardCache,
    grad_out: &LatentTensor,
    want_input_grad: bool,
) -> Result<(DenoiserGrads, Option<LatentTensor>)> {
    let (h, w) = (cache.h, cache.w);
    let cells = h * w;
    if grad_out.shape() != (h, w, p.channels) {
        return Err(Error::Shape(format!(
            "upstream gradient shape {:?} does not match forward pass {:?}",
            grad_out.shape(),
            (h, w, p.channels)
        )));
    }
    let mut grads = DenoiserGrads::zeros_like(p);

    // conv3
    let mut g_r2 = vec![0.0; cells * p.hidden];
    conv3x3_backward(
        &cache.r2,
        h,
        w,
        p.hidden,
        p.channels,
        &p.conv3_w,
        grad_out.values(),
        &mut grads.conv3_w,
        &mut grads.conv3_b,
        Some(&mut g_r2),
    );

    // ReLU after conv2.
    let g_a2: Vec<f64> = g_r2
        .iter()
        .zip(&cache.a2)
        .map(|(g, a)| if *a > 0.0 { *g } else { 0.0 })
        .collect();

    // conv2
    let mut g_r1 = vec![0.0; cells * p.hidden];
    conv3x3_backward(
        &cache.r1,
        h,
        w,
        p.hidden,
        p.hidden,
        &p.conv2_w,
        &g_a2,
        &mut grads.conv2_w,
        &mut grads.conv2_b,
        Some(&mut g_r1),
    );

    // ReLU after conv1 + time bias.
    let g_a1: Vec<f64> = g_r1
        .iter()
        .zip(&cache.a1)
        .map(|(g, a)| if *a > 0.0 { *g } else { 0.0 })
        .collect();

    // Time projection: the bias reaches every cell, so its gradient is the
    // spatial sum of g_a1 per hidden channel.
    for cell in 0..cells {
        for o in 0..p.hidden {
            let g = g_a1[cell * p.hidden + o];
            if g == 0.0 {
                continue;
            }
            grads.time_b[o] += g;
            for (d, e) in cache.emb.iter().enumerate() {
                grads.time_w[o * p.time_dim + d] += g * e;
            }
        }
    }

    // conv1
    let mut g_input = if want_input_grad { Some(vec![0.0; cells * p.channels]) } else { None };
    conv3x3_backward(
        &cache.input,
        h,
        w,
        p.channels,
        p.hidden,
        &p.conv1_w,
        &g_a1,
        &mut grads.conv1_w,
        &mut grads.conv1_b,
        g_input.as_deref_mut(),
    );

    let input_grad = match g_input {
        Some(v) => Some(LatentTensor::from_vec(h, w, p.channels, v)?),
        None => None,
    };
    Ok((grads, input_grad))
}

/// Weights of the 1x1 convolution adaptor: a per-cell linear map
/// `out = kernel . z + bias` with `kernel` stored row-major `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptorParams {
    pub channels: usize,
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl AdaptorParams {
    /// Identity initialization: the enhanced model starts exactly equal to
    /// the basic model.
    pub fn identity(channels: usize) -> Self {
        let mut kernel = vec![0.0; channels * channels];
        for c in 0..channels {
            kernel[c * channels + c] = 1.0;
        }
        AdaptorParams { channels, kernel, bias: vec![0.0; channels] }
    }

    pub fn group_names() -> [&'static str; 2] {
        ["adaptor_kernel", "adaptor_bias"]
    }

    pub fn groups(&self) -> [&[f64]; 2] {
        [&self.kernel, &self.bias]
    }

    pub fn groups_mut(&mut self) -> [&mut Vec<f64>; 2] {
        [&mut self.kernel, &mut self.bias]
    }

    pub fn is_finite(&self) -> bool {
        self.kernel.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    pub fn is_identity(&self) -> bool {
        let ident = AdaptorParams::identity(self.channels);
        self.kernel == ident.kernel && self.bias == ident.bias
    }
}

#[derive(Debug, Clone)]
pub struct AdaptorGrads {
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

impl AdaptorGrads {
    pub fn zeros_like(a: &AdaptorParams) -> Self {
        AdaptorGrads { kernel: vec![0.0; a.kernel.len()], bias: vec![0.0; a.bias.len()] }
    }

    pub fn groups(&self) -> [&[f64]; 2] {
        [&self.kernel, &self.bias]
    }

    pub fn groups_mut(&mut self) -> [&mut Vec<f64>; 2] {
        [&mut self.kernel, &mut self.bias]
    }

    pub fn accumulate(&mut self, other: &AdaptorGrads) {
        for (m, t) in self.kernel.iter_mut().zip(&other.kernel) {
            *m += t;
        }
        for (m, t) in self.bias.iter_mut().zip(&other.bias) {
            *m += t;
        }
    }
}

/// Apply the adaptor to every latent cell.
pub fn apply_adaptor(a: &AdaptorParams, z: &LatentTensor) -> Result<LatentTensor> {
    if z.channels() != a.channels {
        return Err(Error::Shape(format!(
            "latent has {} channels, adaptor expects {}",
            z.channels(),
            a.channels
        )));
    }
    let (h, w, c) = z.shape();
    let mut out = LatentTensor::zeros(h, w, c);
    out.origin = z.origin;
    for cell in 0..h * w {
        let zin = &z.values()[cell * c..(cell + 1) * c];
        for o in 0..c {
            let mut acc = a.bias[o];
            for (ci, v) in zin.iter().enumerate() {
                acc += a.kernel[o * c + ci] * v;
            }
            out.values_mut()[cell * c + o] = acc;
        }
    }
    Ok(out)
}

/// Gradients of a scalar loss with respect to the adaptor parameters, given
/// the adaptor input and dLoss/d(output).
pub fn adaptor_backward(
    a: &AdaptorParams,
    input: &LatentTensor,
    grad_out: &LatentTensor,
) -> Result<AdaptorGrads> {
    input.ensure_same_shape(grad_out, "adaptor backward")?;
    if input.channels() != a.channels {
        return Err(Error::Shape("adaptor channel mismatch".into()));
    }
    let c = a.channels;
    let mut grads = AdaptorGrads::zeros_like(a);
    let (h, w, _) = input.shape();
    for cell in 0..h * w {
        let zin = &input.values()[cell * c..(cell + 1) * c];
        let g = &grad_out.values()[cell * c..(cell + 1) * c];
        for o in 0..c {
            grads.bias[o] += g[o];
            for ci in 0..c {
                grads.kernel[o * c + ci] += g[o] * zin[ci];
            }
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_latent(seed: u64, h: usize, w: usize, c: usize) -> LatentTensor {
        let mut s = Stream::new(seed);
        let mut z = LatentTensor::zeros(h, w, c);
        for v in z.values_mut() {
            *v = s.next_normal();
        }
        z
    }

    #[test]
    fn zero_network_with_zero_biases_outputs_zero() {
        let mut p = DenoiserParams::init(1, 4, 8, 16, 100).unwrap();
        for g in p.groups_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let z = random_latent(2, 5, 5, 4);
        let out = predict_noise(&p, &z, 10).unwrap();
        assert!(out.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn output_shape_matches_input_shape() {
        let p = DenoiserParams::init(3, 4, 8, 16, 100).unwrap();
        let z = random_latent(4, 16, 16, 4);
        let out = predict_noise(&p, &z, 80).unwrap();
        assert_eq!(out.shape(), z.shape());
    }

    #[test]
    fn rejects_channel_mismatch_and_bad_timestep() {
        let p = DenoiserParams::init(3, 4, 8, 16, 100).unwrap();
        let z3 = random_latent(4, 4, 4, 3);
        assert!(predict_noise(&p, &z3, 10).is_err());
        let z4 = random_latent(4, 4, 4, 4);
        assert!(predict_noise(&p, &z4, 0).is_err());
        assert!(predict_noise(&p, &z4, 101).is_err());
    }

    #[test]
    fn forward_is_deterministic() {
        let p = DenoiserParams::init(7, 4, 16, 16, 100).unwrap();
        let z = random_latent(8, 6, 6, 4);
        let a = predict_noise(&p, &z, 42).unwrap();
        let b = predict_noise(&p, &z, 42).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn timestep_embeddings_are_distinct() {
        for t_max in [100usize, 1000] {
            // The slowest cosine component alone separates all timesteps.
            let mut prev = f64::INFINITY;
            for t in 1..=t_max {
                let emb = timestep_embedding(t, 16, t_max);
                assert_eq!(emb.len(), 16);
                let slow_cos = emb[15];
                assert!(slow_cos < prev);
                prev = slow_cos;
            }
        }
    }

    #[test]
    fn identity_adaptor_is_exact_identity() {
        let a = AdaptorParams::identity(4);
        let z = random_latent(9, 4, 5, 4);
        let out = apply_adaptor(&a, &z).unwrap();
        assert_eq!(out.values(), z.values());
    }

    #[test]
    fn doubling_adaptor_doubles_ones() {
        let mut a = AdaptorParams::identity(4);
        for v in a.kernel.iter_mut() {
            *v *= 2.0;
        }
        let mut z = LatentTensor::zeros(2, 2, 4);
        z.values_mut().iter_mut().for_each(|v| *v = 1.0);
        let out = apply_adaptor(&a, &z).unwrap();
        assert!(out.values().iter().all(|v| (*v - 2.0).abs() < 1e-15));
    }

    #[test]
    fn adaptor_matches_per_cell_matrix_vector_oracle() {
        let mut s = Stream::new(55);
        let mut a = AdaptorParams::identity(4);
        for v in a.kernel.iter_mut().chain(a.bias.iter_mut()) {
            *v = s.next_normal();
        }
        let z = random_latent(56, 2, 2, 4);
        let out = apply_adaptor(&a, &z).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for o in 0..4 {
                    let mut want = a.bias[o];
                    for ci in 0..4 {
                        want += a.kernel[o * 4 + ci] * z.get(i, j, ci);
                    }
                    assert!((out.get(i, j, o) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let p = DenoiserParams::init(11, 4, 8, 16, 100).unwrap();
        let z = random_latent(12, 4, 4, 4);
        let (_, cache) = forward(&p, &z, 5).unwrap();
        let zero = LatentTensor::zeros(4, 4, 4);
        let (grads, gin) = backward(&p, &cache, &zero, true).unwrap();
        for g in grads.groups() {
            assert!(g.iter().all(|v| *v == 0.0));
        }
        assert!(gin.unwrap().values().iter().all(|v| *v == 0.0));
    }

    /// Central finite differences on every parameter group, including the
    /// input gradient, against the analytic backward pass.
    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut p = DenoiserParams::init(21, 3, 6, 8, 50).unwrap();
        let z = random_latent(22, 5, 4, 3);
        let target = random_latent(23, 5, 4, 3);
        let t = 17;
        let n = (5 * 4 * 3) as f64;

        let loss = |p: &DenoiserParams| -> f64 {
            let out = predict_noise(p, &z, t).unwrap();
            out.values()
                .iter()
                .zip(target.values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / n
        };

        let (out, cache) = forward(&p, &z, t).unwrap();
        let mut grad_out = LatentTensor::zeros(5, 4, 3);
        for (g, (a, b)) in grad_out
            .values_mut()
            .iter_mut()
            .zip(out.values().iter().zip(target.values()))
        {
            *g = 2.0 * (a - b) / n;
        }
        let (grads, _) = backward(&p, &cache, &grad_out, false).unwrap();

        let h = 1e-4;
        let mut checked = 0;
        let mut pick = Stream::new(99);
        for gi in 0..8 {
            let len = p.groups()[gi].len();
            for _ in 0..len.min(12) {
                let idx = pick.next_index(len);
                let orig = p.groups()[gi][idx];
                p.groups_mut()[gi][idx] = orig + h;
                let up = loss(&p);
                p.groups_mut()[gi][idx] = orig - h;
                let down = loss(&p);
                p.groups_mut()[gi][idx] = orig;
                let fd = (up - down) / (2.0 * h);
                let analytic = grads.groups()[gi][idx];
                let denom = fd.abs().max(analytic.abs()).max(1e-8);
                assert!(
                    (fd - analytic).abs() / denom < 1e-3,
                    "group {} idx {} fd {} analytic {}",
                    DenoiserParams::group_names()[gi],
                    idx,
                    fd,
                    analytic
                );
                checked += 1;
            }
        }
        assert!(checked >= 60);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let p = DenoiserParams::init(31, 3, 6, 8, 50).unwrap();
        let z = random_latent(32, 4, 4, 3);
        let target = random_latent(33, 4, 4, 3);
        let t = 9;
        let n = (4 * 4 * 3) as f64;

        let loss_of = |z: &LatentTensor| -> f64 {
            let out = predict_noise(&p, z, t).unwrap();
            out.values()
                .iter()
                .zip(target.values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / n
        };

        let (out, cache) = forward(&p, &z, t).unwrap();
        let mut grad_out = LatentTensor::zeros(4, 4, 3);
        for (g, (a, b)) in grad_out
            .values_mut()
            .iter_mut()
            .zip(out.values().iter().zip(target.values()))
        {
            *g = 2.0 * (a - b) / n;
        }
        let (_, gin) = backward(&p, &cache, &grad_out, true).unwrap();
        let gin = gin.unwrap();

        let h = 1e-4;
        let mut pick = Stream::new(44);
        let mut z_pert = z.clone();
        for _ in 0..30 {
            let idx = pick.next_index(z.values().len());
            let orig = z.values()[idx];
            z_pert.values_mut()[idx] = orig + h;
            let up = loss_of(&z_pert);
            z_pert.values_mut()[idx] = orig - h;
            let down = loss_of(&z_pert);
            z_pert.values_mut()[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            let analytic = gin.values()[idx];
            let denom = fd.abs().max(analytic.abs()).max(1e-8);
            assert!((fd - analytic).abs() / denom < 1e-3, "idx {idx} fd {fd} vs {analytic}");
        }
    }

    #[test]
    fn adaptor_gradients_match_finite_differences() {
        let mut s = Stream::new(61);
        let mut a = AdaptorParams::identity(3);
        for v in a.kernel.iter_mut().chain(a.bias.iter_mut()) {
            *v += 0.3 * s.next_normal();
        }
        let z = random_latent(62, 4, 3, 3);
        let target = random_latent(63, 4, 3, 3);
        let n = (4 * 3 * 3) as f64;

        let loss_of = |a: &AdaptorParams| -> f64 {
            let out = apply_adaptor(a, &z).unwrap();
            out.values()
                .iter()
                .zip(target.values())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                / n
        };

        let out = apply_adaptor(&a, &z).unwrap();
        let mut grad_out = LatentTensor::zeros(4, 3, 3);
        for (g, (x, y)) in grad_out
            .values_mut()
            .iter_mut()
            .zip(out.values().iter().zip(target.values()))
        {
            *g = 2.0 * (x - y) / n;
        }
        let grads = adaptor_backward(&a, &z, &grad_out).unwrap();

        let h = 1e-4;
        for gi in 0..2 {
            for idx in 0..a.groups()[gi].len() {
                let orig = a.groups()[gi][idx];
                a.groups_mut()[gi][idx] = orig + h;
                let up = loss_of(&a);
                a.groups_mut()[gi][idx] = orig - h;
                let down = loss_of(&a);
                a.groups_mut()[gi][idx] = orig;
                let fd = (up - down) / (2.0 * h);
                let analytic = grads.groups()[gi][idx];
                let denom = fd.abs().max(analytic.abs()).max(1e-8);
                assert!((fd - analytic).abs() / denom < 1e-3);
            }
        }
    }
}
