//! Frame generator, spatial and temporal discriminators, the fixed
//! perceptual feature proxy and every training loss.
//!
//! Losses are minimization objectives. Discriminator probabilities are
//! clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before any logarithm so every
//! loss stays finite.

use crate::error::{MtrError, Result};
use crate::numerics::{concat_channels, leaky_relu, mean_abs_diff, tanh, upsample_nearest, Conv, Rng, Tensor};
use crate::skeleton::NUM_NODES;

pub const PROB_CLAMP: f64 = 1e-7;
const SLOPE: f32 = 0.2;

/// Decoder `g_d`: two ×2 nearest upsamplings, each followed by a 3×3 conv,
/// then a 1-channel conv and `tanh`.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    pub conv1: Conv,
    pub conv2: Conv,
    pub out: Conv,
}

impl GeneratorParams {
    pub fn zeros(in_channels: usize, hidden: (usize, usize)) -> Self {
        GeneratorParams {
            conv1: Conv::zeros(hidden.0, in_channels, 3),
            conv2: Conv::zeros(hidden.1, hidden.0, 3),
            out: Conv::zeros(1, hidden.1, 3),
        }
    }

    pub fn random(in_channels: usize, hidden: (usize, usize), rng: &mut Rng) -> Self {
        GeneratorParams {
            conv1: Conv::random(hidden.0, in_channels, 3, 1.0, rng),
            conv2: Conv::random(hidden.1, hidden.0, 3, 1.0, rng),
            out: Conv::random(1, hidden.1, 3, 0.5, rng),
        }
    }
}

pub fn generate(feature: &Tensor, p: &GeneratorParams) -> Result<Tensor> {
    let (c, _, _) = feature.chw()?;
    if c != p.conv1.in_channels() {
        return Err(MtrError::contract(format!(
            "generate: feature {:?} does not match generator input of {} channels",
            feature.shape(),
            p.conv1.in_channels()
        )));
    }
    let x = upsample_nearest(feature, 2)?;
    let x = leaky_relu(&p.conv1.same(&x)?, SLOPE);
    let x = upsample_nearest(&x, 2)?;
    let x = leaky_relu(&p.conv2.same(&x)?, SLOPE);
    Ok(tanh(&p.out.same(&x)?))
}

/// Three-layer critic: stride-2 conv, stride-2 conv, 1-channel conv, spatial
/// mean, sigmoid. The first layer's activation is exposed for feature matching.
#[derive(Clone, Debug, PartialEq)]
pub struct Critic {
    pub conv1: Conv,
    pub conv2: Conv,
    pub out: Conv,
}

/// Critic output for one input.
#[derive(Clone, Debug)]
pub struct CriticOutput {
    pub prob: f64,
    pub feature: Tensor,
}

impl Critic {
    pub fn zeros(in_channels: usize, hidden: usize) -> Self {
        Critic {
            conv1: Conv::zeros(hidden, in_channels, 3),
            conv2: Conv::zeros(hidden, hidden, 3),
            out: Conv::zeros(1, hidden, 3),
        }
    }

    pub fn random(in_channels: usize, hidden: usize, rng: &mut Rng) -> Self {
        Critic {
            conv1: Conv::random(hidden, in_channels, 3, 1.0, rng),
            conv2: Conv::random(hidden, hidden, 3, 1.0, rng),
            out: Conv::random(1, hidden, 3, 0.5, rng),
        }
    }

    pub fn features(&self, input: &Tensor) -> Result<Tensor> {
        Ok(leaky_relu(&self.conv1.forward(input, 2, 1)?, SLOPE))
    }

    pub fn forward(&self, input: &Tensor) -> Result<CriticOutput> {
        self.head(&self.conv1.forward(input, 2, 1)?)
    }

    /// Everything after the first convolution, given its pre-activation.
    pub fn head(&self, first: &Tensor) -> Result<CriticOutput> {
        let feature = leaky_relu(first, SLOPE);
        let x = leaky_relu(&self.conv2.forward(&feature, 2, 1)?, SLOPE);
        let logits = self.out.same(&x)?;
        let mean = logits.data().iter().map(|&v| v as f64).sum::<f64>() / logits.len() as f64;
        let prob = (1.0 / (1.0 + libm::exp(-mean))).clamp(1e-15, 1.0 - 1e-15);
        Ok(CriticOutput { prob, feature })
    }
}

/// Spatial critic over `[frame, heatmap]` (1 + 18 channels).
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialDiscParams(pub Critic);

/// Temporal critic over `[frame_{t-1}, frame_t, heat_{t-1}, heat_t]` (2 + 36 channels).
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalDiscParams(pub Critic);

pub const SPATIAL_IN: usize = 1 + NUM_NODES;
pub const TEMPORAL_IN: usize = 2 + 2 * NUM_NODES;

impl SpatialDiscParams {
    pub fn random(hidden: usize, rng: &mut Rng) -> Self {
        SpatialDiscParams(Critic::random(SPATIAL_IN, hidden, rng))
    }

    pub fn forward(&self, frame: &Tensor, heat: &Tensor) -> Result<CriticOutput> {
        self.0.forward(&concat_channels(frame, heat)?)
    }

    pub fn features(&self, frame: &Tensor, heat: &Tensor) -> Result<Tensor> {
        self.0.features(&concat_channels(frame, heat)?)
    }
}

impl TemporalDiscParams {
    pub fn random(hidden: usize, rng: &mut Rng) -> Self {
        TemporalDiscParams(Critic::random(TEMPORAL_IN, hidden, rng))
    }

    pub fn forward(&self, prev: &Tensor, cur: &Tensor, heat_prev: &Tensor, heat_cur: &Tensor) -> Result<CriticOutput> {
        let frames = concat_channels(prev, cur)?;
        let heats = concat_channels(heat_prev, heat_cur)?;
        self.0.forward(&concat_channels(&frames, &heats)?)
    }
}

/// Fixed random two-layer feature extractor standing in for a pretrained
/// perceptual network. Never trained.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptualProxyParams {
    pub conv1: Conv,
    pub conv2: Conv,
}

impl PerceptualProxyParams {
    pub fn new(channels: usize, rng: &mut Rng) -> Self {
        PerceptualProxyParams {
            conv1: Conv::random(channels, 1, 3, 1.5, rng),
            conv2: Conv::random(channels, channels, 3, 1.5, rng),
        }
    }

    pub fn features(&self, frame: &Tensor) -> Result<(Tensor, Tensor)> {
        let a = tanh(&self.conv1.same(frame)?);
        let b = tanh(&self.conv2.forward(&a, 2, 1)?);
        Ok((a, b))
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// `−Σ log p(real) − Σ log(1 − p(fake))` over critic outputs.
pub fn critic_loss(real_probs: &[f64], fake_probs: &[f64]) -> f64 {
    -real_probs.iter().map(|&p| clamp_prob(p).ln()).sum::<f64>()
        - fake_probs.iter().map(|&p| (1.0 - clamp_prob(p)).ln()).sum::<f64>()
}

/// Non-saturating generator term `−Σ log p(fake)`.
pub fn generator_loss(fake_probs: &[f64]) -> f64 {
    -fake_probs.iter().map(|&p| clamp_prob(p).ln()).sum::<f64>()
}

fn check_counts(op: &str, real: &[Tensor], fake: &[Tensor], heats: &[Tensor]) -> Result<()> {
    if real.len() != fake.len() || real.len() != heats.len() {
        return Err(MtrError::contract(format!(
            "{op}: {} real frames, {} fake frames, {} heatmaps",
            real.len(),
            fake.len(),
            heats.len()
        )));
    }
    Ok(())
}

pub fn spatial_probs(frames: &[Tensor], heats: &[Tensor], p: &SpatialDiscParams) -> Result<Vec<f64>> {
    frames.iter().zip(heats).map(|(f, h)| Ok(p.forward(f, h)?.prob)).collect()
}

/// Critic outputs for the pairs `(t-1, t)`, `t = 2..=T`.
pub fn temporal_probs(frames: &[Tensor], heats: &[Tensor], p: &TemporalDiscParams) -> Result<Vec<f64>> {
    (1..frames.len())
        .map(|t| Ok(p.forward(&frames[t - 1], &frames[t], &heats[t - 1], &heats[t])?.prob))
        .collect()
}

/// Spatial critic loss; `heats` are frame-resolution heatmaps.
pub fn loss_dis_spatial(real: &[Tensor], fake: &[Tensor], heats: &[Tensor], p: &SpatialDiscParams) -> Result<f64> {
    check_counts("loss_dis_spatial", real, fake, heats)?;
    Ok(critic_loss(&spatial_probs(real, heats, p)?, &spatial_probs(fake, heats, p)?))
}

pub fn loss_dis_temporal(real: &[Tensor], fake: &[Tensor], heats: &[Tensor], p: &TemporalDiscParams) -> Result<f64> {
    check_counts("loss_dis_temporal", real, fake, heats)?;
    if real.len() < 2 {
        return Err(MtrError::contract("loss_dis_temporal: need at least two frames"));
    }
    Ok(critic_loss(&temporal_probs(real, heats, p)?, &temporal_probs(fake, heats, p)?))
}

pub fn loss_dis_total(
    real: &[Tensor],
    fake: &[Tensor],
    heats: &[Tensor],
    spatial: &SpatialDiscParams,
    temporal: &TemporalDiscParams,
) -> Result<f64> {
    Ok(loss_dis_spatial(real, fake, heats, spatial)? + loss_dis_temporal(real, fake, heats, temporal)?)
}

pub fn loss_gen_adv(
    fake: &[Tensor],
    heats: &[Tensor],
    spatial: &SpatialDiscParams,
    temporal: &TemporalDiscParams,
) -> Result<f64> {
    Ok(generator_loss(&spatial_probs(fake, heats, spatial)?) + generator_loss(&temporal_probs(fake, heats, temporal)?))
}

/// Mean absolute difference of the spatial critic's first-layer features,
/// averaged over frames.
pub fn loss_fm(real: &[Tensor], fake: &[Tensor], heats: &[Tensor], spatial: &SpatialDiscParams) -> Result<f64> {
    check_counts("loss_fm", real, fake, heats)?;
    let mut sum = 0.0;
    for ((r, f), h) in real.iter().zip(fake).zip(heats) {
        sum += mean_abs_diff(&spatial.features(r, h)?, &spatial.features(f, h)?)?;
    }
    Ok(sum / real.len().max(1) as f64)
}

/// Feature distance under the fixed proxy: both layers, averaged over frames.
pub fn loss_perceptual(real: &[Tensor], fake: &[Tensor], proxy: &PerceptualProxyParams) -> Result<f64> {
    if real.len() != fake.len() {
        return Err(MtrError::contract(format!("loss_perceptual: {} real vs {} fake frames", real.len(), fake.len())));
    }
    let mut sum = 0.0;
    for (r, f) in real.iter().zip(fake) {
        let (ra, rb) = proxy.features(r)?;
        let (fa, fb) = proxy.features(f)?;
        sum += mean_abs_diff(&ra, &fa)? + mean_abs_diff(&rb, &fb)?;
    }
    Ok(sum / real.len().max(1) as f64)
}

/// Weights of the training objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub rate: f64,
    pub fm: f64,
    pub vgg: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { rate: 1.0, fm: 10.0, vgg: 10.0 }
    }
}

/// `λ_rate·R + L_G + λ_VGG·ℓ_VGG + λ_fm·ℓ_fm`.
pub fn loss_total(rate_bits: f64, adv: f64, fm: f64, perceptual: f64, w: &LossWeights) -> f64 {
    w.rate * rate_bits + adv + w.vgg * perceptual + w.fm * fm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_zero_weights_is_tanh_bias() {
        let mut p = GeneratorParams::zeros(4, (3, 2));
        p.out.bias = Tensor::scalar(0.7);
        let x = generate(&Tensor::zeros(&[4, 2, 3]), &p).unwrap();
        assert_eq!(x.shape(), &[1, 8, 12]);
        assert!(x.data().iter().all(|&v| v == libm::tanhf(0.7)));
    }

    #[test]
    fn generator_output_bounded() {
        let mut rng = Rng::new(3);
        let p = GeneratorParams::random(4, (6, 4), &mut rng);
        for _ in 0..5 {
            let x = generate(&rng.normal_tensor(&[4, 2, 2], 5.0), &p).unwrap();
            assert!(x.max_abs() <= 1.0);
        }
    }

    #[test]
    fn generator_matches_step_by_step_oracle() {
        use crate::numerics::conv2d;
        let mut rng = Rng::new(4);
        let p = GeneratorParams::random(2, (3, 2), &mut rng);
        let f = rng.normal_tensor(&[2, 1, 1], 1.0);
        // 1×1 input upsampled twice is a constant 4×4 map per channel.
        let c1 = conv2d(&upsample_nearest(&f, 2).unwrap(), &p.conv1.weight, Some(&p.conv1.bias), 1, 1).unwrap();
        let c1 = c1.map(|v| if v >= 0.0 { v } else { 0.2 * v });
        let c2 = conv2d(&upsample_nearest(&c1, 2).unwrap(), &p.conv2.weight, Some(&p.conv2.bias), 1, 1).unwrap();
        let c2 = c2.map(|v| if v >= 0.0 { v } else { 0.2 * v });
        let o = conv2d(&c2, &p.out.weight, Some(&p.out.bias), 1, 1).unwrap().map(|v| v.tanh());
        let g = generate(&f, &p).unwrap();
        for (a, b) in g.data().iter().zip(o.data()) {
            assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn uninformative_critic_constants() {
        let t = 10;
        let half = vec![0.5; t];
        let pairs = vec![0.5; t - 1];
        assert!((critic_loss(&half, &half) - 2.0 * t as f64 * 2f64.ln()).abs() < 1e-12);
        assert!((generator_loss(&half) + generator_loss(&pairs) - (2 * t - 1) as f64 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn clamp_limits() {
        let t = 4;
        let ones = vec![1.0; t];
        let zeros = vec![0.0; t];
        assert!(critic_loss(&ones, &zeros) < 1e-5);
        let blind = critic_loss(&zeros, &ones);
        assert!((blind - 2.0 * t as f64 * 1e7f64.ln()).abs() < 1e-5);
        assert!(generator_loss(&vec![1.0 - 1e-7; t]) < 1e-5);
        assert!((generator_loss(&vec![1e-7; t]) - t as f64 * 1e7f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn adversarial_terms_move_oppositely() {
        // Raising the critic's realness score on fakes lowers the generator
        // term and raises the fake half of the critic loss.
        let mut rng = Rng::new(10);
        for _ in 0..20 {
            let p = rng.uniform_range(0.05, 0.9);
            let q = p + rng.uniform_range(0.01, 0.09);
            assert!(generator_loss(&[q]) < generator_loss(&[p]));
            assert!(critic_loss(&[], &[q]) > critic_loss(&[], &[p]));
        }
    }

    #[test]
    fn critic_output_in_open_interval() {
        let mut rng = Rng::new(5);
        let mut d = SpatialDiscParams::random(3, &mut rng);
        d.0.out.bias = Tensor::scalar(500.0);
        let o = d.forward(&Tensor::zeros(&[1, 8, 8]), &Tensor::zeros(&[NUM_NODES, 8, 8])).unwrap();
        assert!(o.prob > 0.0 && o.prob < 1.0);
        assert_eq!(o.feature.shape(), &[3, 4, 4]);
    }

    #[test]
    fn feature_losses_basic_properties() {
        let mut rng = Rng::new(6);
        let d = SpatialDiscParams::random(3, &mut rng);
        let proxy = PerceptualProxyParams::new(3, &mut rng);
        let a: Vec<Tensor> = (0..3).map(|_| rng.normal_tensor(&[1, 8, 8], 0.5)).collect();
        let b: Vec<Tensor> = (0..3).map(|_| rng.normal_tensor(&[1, 8, 8], 0.5)).collect();
        let h: Vec<Tensor> = (0..3).map(|_| rng.normal_tensor(&[NUM_NODES, 8, 8], 0.5)).collect();
        assert_eq!(loss_fm(&a, &a, &h, &d).unwrap(), 0.0);
        assert_eq!(loss_perceptual(&a, &a, &proxy).unwrap(), 0.0);
        assert_eq!(loss_fm(&a, &b, &h, &d).unwrap(), loss_fm(&b, &a, &h, &d).unwrap());
        assert_eq!(loss_perceptual(&a, &b, &proxy).unwrap(), loss_perceptual(&b, &a, &proxy).unwrap());
        assert!(loss_fm(&a, &b, &h, &d).unwrap() > 0.0);
    }

    #[test]
    fn weighted_total() {
        assert_eq!(loss_total(0.0, 0.0, 0.0, 0.0, &LossWeights::default()), 0.0);
        assert!((loss_total(2.0, 1.0, 0.2, 0.1, &LossWeights::default()) - 6.0).abs() < 1e-12);
        let w = LossWeights { rate: 1.0, fm: 0.0, vgg: 0.0 };
        assert_eq!(loss_total(2.0, 1.0, 0.2, 0.1, &w), 3.0);
    }

    #[test]
    fn dis_total_is_sum_of_parts() {
        let mut rng = Rng::new(7);
        let s = SpatialDiscParams::random(2, &mut rng);
        let t = TemporalDiscParams::random(2, &mut rng);
        let real: Vec<Tensor> = (0..4).map(|_| rng.normal_tensor(&[1, 8, 8], 0.5)).collect();
        let fake: Vec<Tensor> = (0..4).map(|_| rng.normal_tensor(&[1, 8, 8], 0.5)).collect();
        let heats: Vec<Tensor> = (0..4).map(|_| rng.normal_tensor(&[NUM_NODES, 8, 8], 0.5)).collect();
        let total = loss_dis_total(&real, &fake, &heats, &s, &t).unwrap();
        let parts = loss_dis_spatial(&real, &fake, &heats, &s).unwrap() + loss_dis_temporal(&real, &fake, &heats, &t).unwrap();
        assert_eq!(total, parts);
        assert!(loss_dis_temporal(&real[..1], &fake[..1], &heats[..1], &t).is_err());
    }
}
