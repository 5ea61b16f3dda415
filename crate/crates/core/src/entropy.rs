//! Quantization, the hyperprior transforms and the likelihood models used
//! both for the training-time rate estimate and for building coder tables.

use crate::error::{MtrError, Result};
use crate::numerics::{leaky_relu, upsample_nearest, Conv, Rng, Tensor};

/// Lower clamp on predicted scales.
pub const SIGMA_MIN: f32 = 1e-4;
/// Upper clamp on predicted scales.
pub const SIGMA_MAX: f32 = 1e4;
/// Probability floor applied when a likelihood is turned into a code length.
pub const PROB_FLOOR: f64 = 1.0 / 65536.0;

const HYPER_SLOPE: f32 = 0.2;

/// Integer grid produced by rounding; mirrors the shape of its source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedGrid {
    pub shape: Vec<usize>,
    pub values: Vec<i32>,
}

impl QuantizedGrid {
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(self.shape.clone(), self.values.iter().map(|&v| v as f32).collect())
            .expect("grid shape matches its values")
    }
}

/// Training-time relaxation: `x + u`, `u` i.i.d. uniform on (-1/2, 1/2).
pub fn relax_quantize(x: &Tensor, rng: &mut Rng) -> Tensor {
    let noise = rng.centered_uniform(x.shape());
    add_noise(x, &noise)
}

/// `x + noise` for a pre-drawn noise tensor of the same shape.
pub fn add_noise(x: &Tensor, noise: &Tensor) -> Tensor {
    crate::numerics::add(x, noise).expect("noise drawn with the shape of x")
}

/// Round half away from zero.
pub fn hard_quantize(x: &Tensor) -> QuantizedGrid {
    QuantizedGrid {
        shape: x.shape().to_vec(),
        values: x.data().iter().map(|v| v.round() as i32).collect(),
    }
}

/// Strides of the two analysis layers for a memory of size `h`×`w`.
///
/// Each layer halves the resolution while it stays even, so small memories
/// still get a (coarser) side channel.
pub fn hyper_strides(h: usize, w: usize) -> [usize; 2] {
    let s1 = if h % 2 == 0 && w % 2 == 0 { 2 } else { 1 };
    let s2 = if s1 == 2 && h % 4 == 0 && w % 4 == 0 { 2 } else { 1 };
    [s1, s2]
}

/// Hyper analysis (`enc*`) and synthesis (`dec*`) transforms.
#[derive(Clone, Debug, PartialEq)]
pub struct HyperParams {
    pub enc1: Conv,
    pub enc2: Conv,
    pub dec1: Conv,
    pub dec2: Conv,
    pub strides: [usize; 2],
}

impl HyperParams {
    pub fn zeros(mem_channels: usize, hyper_channels: usize, strides: [usize; 2]) -> Self {
        HyperParams {
            enc1: Conv::zeros(hyper_channels, mem_channels, 3),
            enc2: Conv::zeros(hyper_channels, hyper_channels, 3),
            dec1: Conv::zeros(mem_channels, hyper_channels, 3),
            dec2: Conv::zeros(mem_channels, mem_channels, 3),
            strides,
        }
    }

    pub fn random(mem_channels: usize, hyper_channels: usize, strides: [usize; 2], rng: &mut Rng) -> Self {
        HyperParams {
            enc1: Conv::random(hyper_channels, mem_channels, 3, 1.0, rng),
            enc2: Conv::random(hyper_channels, hyper_channels, 3, 1.0, rng),
            dec1: Conv::random(mem_channels, hyper_channels, 3, 1.0, rng),
            dec2: Conv::random(mem_channels, mem_channels, 3, 0.5, rng),
            strides,
        }
    }
}

/// `z = h_e(M)`.
pub fn hyper_encode(m: &Tensor, p: &HyperParams) -> Result<Tensor> {
    let x = leaky_relu(&p.enc1.forward(m, p.strides[0], 1)?, HYPER_SLOPE);
    p.enc2.forward(&x, p.strides[1], 1)
}

/// Raw log-scale output of `h_d` for a real-valued (possibly noisy) `z`.
pub fn hyper_log_scale(z: &Tensor, p: &HyperParams) -> Result<Tensor> {
    let x = upsample_nearest(z, p.strides[1])?;
    let x = leaky_relu(&p.dec1.same(&x)?, HYPER_SLOPE);
    let x = upsample_nearest(&x, p.strides[0])?;
    p.dec2.same(&x)
}

/// `σ = clamp(exp(h_d(z)), 1e-4, 1e4)` for a real-valued `z`.
pub fn hyper_decode_tensor(z: &Tensor, p: &HyperParams) -> Result<Tensor> {
    let raw = hyper_log_scale(z, p)?;
    Ok(raw.map(|v| libm::expf(v).clamp(SIGMA_MIN, SIGMA_MAX)))
}

/// `σ` for the quantized hyper latent.
pub fn hyper_decode(z_hat: &QuantizedGrid, p: &HyperParams) -> Result<Tensor> {
    hyper_decode_tensor(&z_hat.to_tensor(), p)
}

/// Per-channel logistic prior for the hyper latent.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorizedDensity {
    pub loc: Tensor,
    pub log_scale: Tensor,
}

impl FactorizedDensity {
    pub fn standard(channels: usize) -> Self {
        FactorizedDensity { loc: Tensor::zeros(&[channels]), log_scale: Tensor::zeros(&[channels]) }
    }

    pub fn channels(&self) -> usize {
        self.loc.len()
    }

    pub fn location(&self, channel: usize) -> f64 {
        self.loc.data()[channel] as f64
    }

    pub fn scale(&self, channel: usize) -> f64 {
        libm::exp(self.log_scale.data()[channel] as f64).clamp(SIGMA_MIN as f64, SIGMA_MAX as f64)
    }
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Mass of a zero-mean Gaussian with scale `sigma` convolved with a unit
/// uniform, evaluated at `m`: `Φ((m+½)/σ) − Φ((m−½)/σ)`.
///
/// Tails are evaluated on whichever side avoids cancellation.
pub fn prob_memory(m: f64, sigma: f64) -> f64 {
    let lo = (m - 0.5) / sigma;
    let hi = (m + 0.5) / sigma;
    let r = std::f64::consts::SQRT_2;
    let p = if lo > 0.0 {
        0.5 * (libm::erfc(lo / r) - libm::erfc(hi / r))
    } else if hi < 0.0 {
        0.5 * (libm::erfc(-hi / r) - libm::erfc(-lo / r))
    } else {
        1.0 - 0.5 * (libm::erfc(hi / r) + libm::erfc(-lo / r))
    };
    p.max(0.0)
}

/// Mass of the Gaussian beyond `bound + ½` on both sides.
pub fn memory_tail(bound: i32, sigma: f64) -> f64 {
    libm::erfc((bound as f64 + 0.5) / sigma / std::f64::consts::SQRT_2)
}

fn logistic(t: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-t))
}

/// Logistic mass `L(z+½) − L(z−½)` for location `loc` and scale `scale`.
pub fn prob_logistic(z: f64, loc: f64, scale: f64) -> f64 {
    let lo = (z - 0.5 - loc) / scale;
    let hi = (z + 0.5 - loc) / scale;
    let p = if lo > 0.0 { logistic(-lo) - logistic(-hi) } else { logistic(hi) - logistic(lo) };
    p.max(0.0)
}

/// Logistic mass outside `[loc-side bounds]`: below `-bound - ½` plus above `bound + ½`.
pub fn logistic_tail(bound: i32, loc: f64, scale: f64) -> f64 {
    let b = bound as f64 + 0.5;
    logistic((-b - loc) / scale) + logistic(-(b - loc) / scale)
}

/// Probability of hyper symbol `z` in `channel`.
pub fn prob_hyper(z: f64, d: &FactorizedDensity, channel: usize) -> f64 {
    prob_logistic(z, d.location(channel), d.scale(channel))
}

/// Code length in bits of a probability, floored at [`PROB_FLOOR`].
pub fn code_length(p: f64) -> f64 {
    -libm::log2(p.max(PROB_FLOOR))
}

/// Estimated bits of the memory and hyper streams.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RateEstimate {
    pub memory: f64,
    pub hyper: f64,
}

impl RateEstimate {
    pub fn total(&self) -> f64 {
        self.memory + self.hyper
    }
}

/// Memory-stream bits: `Σ −log₂ p(m_i | σ_i)`.
pub fn memory_bits(m: &Tensor, sigma: &Tensor) -> Result<f64> {
    if m.shape() != sigma.shape() {
        return Err(MtrError::contract(format!(
            "rate: memory {:?} and scales {:?} differ",
            m.shape(),
            sigma.shape()
        )));
    }
    Ok(m.data().iter().zip(sigma.data()).map(|(&v, &s)| code_length(prob_memory(v as f64, s as f64))).sum())
}

/// Hyper-stream bits under the factorized density.
pub fn hyper_bits(z: &Tensor, d: &FactorizedDensity) -> Result<f64> {
    let (c, h, w) = z.chw()?;
    if c != d.channels() {
        return Err(MtrError::contract(format!(
            "rate: hyper latent {:?} has {} channels, density has {}",
            z.shape(),
            c,
            d.channels()
        )));
    }
    let plane = h * w;
    Ok(z.data().iter().enumerate().map(|(i, &v)| code_length(prob_hyper(v as f64, d, i / plane))).sum())
}

/// Rate estimate for memory `m` (noisy or quantized), hyper latent `z`,
/// scales `sigma` and density `d`.
pub fn rate_bits(m: &Tensor, z: &Tensor, sigma: &Tensor, d: &FactorizedDensity) -> Result<RateEstimate> {
    Ok(RateEstimate { memory: memory_bits(m, sigma)?, hyper: hyper_bits(z, d)? })
}
