//! Alternating adversarial training with central finite-difference gradients.
//!
//! Each step first updates both critics on the current fakes, then updates
//! every non-critic parameter on the rate plus generator objective. Gradient
//! coordinates are evaluated in parallel and collected in canonical parameter
//! order, so results do not depend on the number of worker threads.

use rayon::prelude::*;

use crate::entropy::{add_noise, hyper_decode_tensor, hyper_encode, rate_bits};
use crate::error::{MtrError, Result};
use crate::genadv::{critic_loss, generate, generator_loss, Critic, LossWeights};
use crate::numerics::{add, concat_channels, conv2d, mean_abs_diff, Rng, Tensor};
use crate::recaller::joint_feature;

use super::codec::{compute_memory, frame_heatmap, grid_heatmap};
use super::model::{ModelConfig, ModelWeights, ParamGroup};
use super::synth::Sequence;

/// Largest trainable parameter count accepted by [`train_toy`].
pub const PARAM_BUDGET: usize = 5000;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub seed: u64,
    pub steps: usize,
    /// Step size for embedder, memory, hyperprior, attention and generator.
    pub lr_gen: f64,
    /// Step size for both critics.
    pub lr_dis: f64,
    /// Finite-difference step is `max(fd_min, fd_rel·|θ|)`.
    pub fd_rel: f64,
    pub fd_min: f64,
    /// Gradient norm cap applied separately to each update; 0 disables it.
    pub clip_norm: f64,
    pub loss: LossWeights,
    /// Sequences averaged into the logged loss.
    pub monitor_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::toy(),
            seed: 0,
            steps: 200,
            lr_gen: 0.02,
            lr_dis: 0.02,
            fd_rel: 1e-4,
            fd_min: 1e-3,
            clip_norm: 1.0,
            loss: LossWeights::default(),
            monitor_size: 4,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.model.gop < 2 {
            return Err(MtrError::config("training needs at least two frames per group"));
        }
        let finite = [self.lr_gen, self.lr_dis, self.fd_rel, self.fd_min, self.clip_norm, self.loss.rate, self.loss.fm, self.loss.vgg];
        if finite.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(MtrError::config("learning rates, finite-difference steps and loss weights must be finite and non-negative"));
        }
        if !(self.fd_min > 0.0) {
            return Err(MtrError::config("fd_min must be positive"));
        }
        Ok(())
    }

    /// Parse flat `key = value` text; unknown keys are errors, `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| MtrError::config(format!("line {}: expected key = value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| MtrError::config(format!("line {}: {key}: {what} {value:?}", lineno + 1));
            let num = || value.parse::<f64>().map_err(|_| bad("not a number"));
            let int = || value.parse::<usize>().map_err(|_| bad("not a non-negative integer"));
            let m = &mut cfg.model;
            match key {
                "height" => m.height = int()?,
                "width" => m.width = int()?,
                "gop" => m.gop = int()?,
                "mem_channels" => m.mem_channels = int()?,
                "hyper_channels" => m.hyper_channels = int()?,
                "attn_dim" => m.attn_dim = int()?,
                "gen_hidden1" => m.gen_hidden.0 = int()?,
                "gen_hidden2" => m.gen_hidden.1 = int()?,
                "disc_hidden" => m.disc_hidden = int()?,
                "proxy_channels" => m.proxy_channels = int()?,
                "variant" => m.variant = value.parse()?,
                "normalize" => m.normalize = value.parse().map_err(|_| bad("not true/false"))?,
                "heat_sigma" => m.heat_sigma = num()?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("not an integer"))?,
                "steps" => cfg.steps = int()?,
                "lr_gen" => cfg.lr_gen = num()?,
                "lr_dis" => cfg.lr_dis = num()?,
                "fd_rel" => cfg.fd_rel = num()?,
                "fd_min" => cfg.fd_min = num()?,
                "clip_norm" => cfg.clip_norm = num()?,
                "lambda_rate" => cfg.loss.rate = num()?,
                "lambda_fm" => cfg.loss.fm = num()?,
                "lambda_vgg" => cfg.loss.vgg = num()?,
                "monitor_size" => cfg.monitor_size = int()?,
                _ => return Err(MtrError::config(format!("line {}: unknown key {key:?}", lineno + 1))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Finite-difference step for a parameter value.
pub fn fd_step(theta: f64, rel: f64, min: f64) -> f64 {
    min.max(rel * theta.abs())
}

/// Central difference of `f` at `x` with the default step rule.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let h = fd_step(x, 1e-4, 1e-3);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Losses logged once per step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    /// Full objective on the fixed monitor batch, before the step's updates.
    pub total: f64,
    /// Rate part of `total`, in bits per group.
    pub rate: f64,
    /// Critic loss on the step's training group, before the critic update.
    pub critic: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub weights: ModelWeights,
    pub trace: Vec<StepRecord>,
}

impl TrainOutcome {
    pub fn totals(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.total).collect()
    }
}

/// One training group with everything that does not depend on trainable
/// generator-side weights precomputed.
struct Group<'a> {
    frames: &'a [Tensor],
    grid_heats: Vec<Tensor>,
    frame_heats: Vec<Tensor>,
    proxy: Vec<(Tensor, Tensor)>,
    mem_noise: Tensor,
    hyper_noise: Tensor,
}

impl<'a> Group<'a> {
    fn new(w: &ModelWeights, seq: &'a Sequence, rng: &mut Rng) -> Result<Self> {
        let t = w.config.gop;
        if seq.frames.len() < t || seq.track.len() < t {
            return Err(MtrError::config(format!("training sequence has {} frames, need {t}", seq.frames.len())));
        }
        let frames = &seq.frames[..t];
        let track = &seq.track[..t];
        let grid_heats = track.iter().map(|s| grid_heatmap(&w.config, s)).collect::<Result<Vec<_>>>()?;
        let frame_heats = track.iter().map(|s| frame_heatmap(&w.config, s)).collect::<Result<Vec<_>>>()?;
        let proxy = frames.iter().map(|f| w.proxy.features(f)).collect::<Result<Vec<_>>>()?;
        let m_shape = w.config.memory_shape();
        let z_shape = hyper_encode(&Tensor::zeros(&m_shape), &w.hyper)?.shape().to_vec();
        Ok(Group {
            frames,
            grid_heats,
            frame_heats,
            proxy,
            mem_noise: rng.centered_uniform(&m_shape),
            hyper_noise: rng.centered_uniform(&z_shape),
        })
    }

    /// Clean memory, noisy memory and noisy hyper latent.
    fn latents(&self, w: &ModelWeights) -> Result<(Tensor, Tensor, Tensor)> {
        let m = compute_memory(w, self.frames)?;
        let z = self.hyper_latent(w, &m)?;
        let noisy = add_noise(&m, &self.mem_noise);
        Ok((m, noisy, z))
    }

    fn hyper_latent(&self, w: &ModelWeights, m: &Tensor) -> Result<Tensor> {
        Ok(add_noise(&hyper_encode(m, &w.hyper)?, &self.hyper_noise))
    }

    fn rate(&self, w: &ModelWeights, m: &Tensor, z: &Tensor) -> Result<f64> {
        let sigma = hyper_decode_tensor(z, &w.hyper)?;
        Ok(rate_bits(m, z, &sigma, &w.density)?.total())
    }

    fn fakes(&self, w: &ModelWeights, m: &Tensor) -> Result<Vec<Tensor>> {
        let kind = w.config.variant.attention();
        self.grid_heats.iter().map(|h| generate(&joint_feature(kind, m, h, &w.attn)?, &w.gen)).collect()
    }

    /// Everything in the objective except the rate, against fixed critics.
    fn synthesis_loss(&self, w: &ModelWeights, fakes: &[Tensor], critics: &FrozenCritics, lw: &LossWeights) -> Result<f64> {
        let mut spatial = Vec::with_capacity(fakes.len());
        let mut fm = 0.0;
        for (t, f) in fakes.iter().enumerate() {
            let first = add(&conv2d(f, &critics.spatial_frame, None, 2, 1)?, &critics.spatial_heat[t])?;
            let out = w.dis_s.0.head(&first)?;
            fm += mean_abs_diff(&critics.real_features[t], &out.feature)?;
            spatial.push(out.prob);
        }
        fm /= fakes.len() as f64;
        let mut temporal = Vec::with_capacity(fakes.len().saturating_sub(1));
        for t in 1..fakes.len() {
            let pair = concat_channels(&fakes[t - 1], &fakes[t])?;
            let first = add(&conv2d(&pair, &critics.temporal_frame, None, 2, 1)?, &critics.temporal_heat[t - 1])?;
            temporal.push(w.dis_t.0.head(&first)?.prob);
        }
        let adv = generator_loss(&spatial) + generator_loss(&temporal);
        let mut perc = 0.0;
        for ((ra, rb), f) in self.proxy.iter().zip(fakes) {
            let (fa, fb) = w.proxy.features(f)?;
            perc += mean_abs_diff(ra, &fa)? + mean_abs_diff(rb, &fb)?;
        }
        perc /= fakes.len() as f64;
        Ok(adv + lw.fm * fm + lw.vgg * perc)
    }

    /// Full objective and its rate part.
    fn objective(&self, w: &ModelWeights, critics: &FrozenCritics, lw: &LossWeights) -> Result<(f64, f64)> {
        let (_, m, z) = self.latents(w)?;
        let rate = self.rate(w, &m, &z)?;
        let fakes = self.fakes(w, &m)?;
        Ok((lw.rate * rate + self.synthesis_loss(w, &fakes, critics, lw)?, rate))
    }
}

/// Split a `Cout×Cin×k×k` kernel into input channels `..at` and `at..`.
fn split_input(weight: &Tensor, at: usize) -> Result<(Tensor, Tensor)> {
    let (cout, cin, k) = match weight.shape() {
        &[a, b, c, _] => (a, b, c),
        s => return Err(MtrError::contract(format!("split_input: not a kernel {s:?}"))),
    };
    let kk = k * k;
    let (mut head, mut tail) = (Vec::new(), Vec::new());
    for co in 0..cout {
        let row = &weight.data()[co * cin * kk..(co + 1) * cin * kk];
        head.extend_from_slice(&row[..at * kk]);
        tail.extend_from_slice(&row[at * kk..]);
    }
    Ok((Tensor::new(vec![cout, at, k, k], head)?, Tensor::new(vec![cout, cin - at, k, k], tail)?))
}

/// Critic first layers split into frame and heatmap parts, with the heatmap
/// part and the real-frame features precomputed. Valid while the critics
/// stay fixed.
struct FrozenCritics {
    spatial_frame: Tensor,
    spatial_heat: Vec<Tensor>,
    temporal_frame: Tensor,
    temporal_heat: Vec<Tensor>,
    real_features: Vec<Tensor>,
}

impl FrozenCritics {
    fn new(w: &ModelWeights, g: &Group<'_>) -> Result<Self> {
        let (s, t) = (&w.dis_s.0, &w.dis_t.0);
        let (spatial_frame, spatial_heat_w) = split_input(&s.conv1.weight, 1)?;
        let (temporal_frame, temporal_heat_w) = split_input(&t.conv1.weight, 2)?;
        let heats = &g.frame_heats;
        let spatial_heat =
            heats.iter().map(|h| conv2d(h, &spatial_heat_w, Some(&s.conv1.bias), 2, 1)).collect::<Result<Vec<_>>>()?;
        let temporal_heat = (1..heats.len())
            .map(|i| conv2d(&concat_channels(&heats[i - 1], &heats[i])?, &temporal_heat_w, Some(&t.conv1.bias), 2, 1))
            .collect::<Result<Vec<_>>>()?;
        let real_features =
            g.frames.iter().zip(heats).map(|(f, h)| w.dis_s.features(f, h)).collect::<Result<Vec<_>>>()?;
        Ok(FrozenCritics { spatial_frame, spatial_heat, temporal_frame, temporal_heat, real_features })
    }
}

/// A single-parameter change to a critic's first convolution.
enum FirstLayerChange {
    None,
    Weight { co: usize, ci: usize, ky: usize, kx: usize, delta: f64 },
    Bias { co: usize, delta: f64 },
}

/// Critic inputs with their first-layer pre-activations at the current
/// parameters. A first-layer perturbation is linear, so it is applied as an
/// update to the cached pre-activation.
struct CriticCache {
    inputs: Vec<Tensor>,
    first: Vec<Tensor>,
    real: usize,
}

impl CriticCache {
    fn new(critic: &Critic, real: Vec<Tensor>, fake: Vec<Tensor>) -> Result<Self> {
        let n = real.len();
        let inputs: Vec<Tensor> = real.into_iter().chain(fake).collect();
        let first = inputs.iter().map(|x| critic.conv1.forward(x, 2, 1)).collect::<Result<Vec<_>>>()?;
        Ok(CriticCache { inputs, first, real: n })
    }

    fn loss(&self, critic: &Critic, change: &FirstLayerChange) -> Result<f64> {
        let mut probs = Vec::with_capacity(self.inputs.len());
        for (x, base) in self.inputs.iter().zip(&self.first) {
            let prob = match *change {
                FirstLayerChange::None => critic.head(base)?.prob,
                FirstLayerChange::Bias { co, delta } => {
                    let mut pre = base.clone();
                    let (_, oh, ow) = pre.chw()?;
                    for v in &mut pre.data_mut()[co * oh * ow..(co + 1) * oh * ow] {
                        *v = (*v as f64 + delta) as f32;
                    }
                    critic.head(&pre)?.prob
                }
                FirstLayerChange::Weight { co, ci, ky, kx, delta } => {
                    let mut pre = base.clone();
                    let (_, h, w) = x.chw()?;
                    let (_, oh, ow) = pre.chw()?;
                    let plane = &x.data()[ci * h * w..(ci + 1) * h * w];
                    let out = &mut pre.data_mut()[co * oh * ow..(co + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (2 * oy + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let ix = (2 * ox + kx) as isize - 1;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let v = &mut out[oy * ow + ox];
                            *v = (*v as f64 + delta * plane[iy as usize * w + ix as usize] as f64) as f32;
                        }
                    }
                    critic.head(&pre)?.prob
                }
            };
            probs.push(prob);
        }
        Ok(critic_loss(&probs[..self.real], &probs[self.real..]))
    }
}

#[derive(Clone, Copy)]
struct Coord {
    tensor: usize,
    index: usize,
    group: ParamGroup,
}

fn coords(w: &ModelWeights, keep: impl Fn(ParamGroup) -> bool) -> Vec<Coord> {
    let mut out = Vec::new();
    for (ti, (name, t)) in w.tensors().into_iter().enumerate() {
        let group = ParamGroup::of(&name);
        if keep(group) {
            out.extend((0..t.len()).map(|index| Coord { tensor: ti, index, group }));
        }
    }
    out
}

fn value_at(w: &ModelWeights, c: Coord) -> f32 {
    w.tensors()[c.tensor].1.data()[c.index]
}

fn set_at(w: &mut ModelWeights, c: Coord, v: f32) {
    w.tensors_mut()[c.tensor].1.data_mut()[c.index] = v;
}

/// Central differences over `coords`; `eval(w, coord)` returns the loss
/// terms that depend on the coordinate.
fn fd_gradient<F>(w: &ModelWeights, coords: &[Coord], cfg: &TrainConfig, eval: F) -> Result<Vec<f64>>
where
    F: Fn(&ModelWeights, Coord) -> Result<f64> + Sync,
{
    coords
        .par_iter()
        .map(|&c| {
            let theta = value_at(w, c);
            let h = fd_step(theta as f64, cfg.fd_rel, cfg.fd_min);
            let (hi, lo) = ((theta as f64 + h) as f32, (theta as f64 - h) as f32);
            let mut probe = w.clone();
            set_at(&mut probe, c, hi);
            let up = eval(&probe, c)?;
            set_at(&mut probe, c, lo);
            let down = eval(&probe, c)?;
            Ok((up - down) / (hi as f64 - lo as f64))
        })
        .collect()
}

fn apply(w: &mut ModelWeights, coords: &[Coord], grad: &[f64], lr: f64, clip: f64) {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let factor = if clip > 0.0 && norm > clip { clip / norm } else { 1.0 };
    if !norm.is_finite() {
        return;
    }
    let mut tensors = w.tensors_mut();
    for (c, g) in coords.iter().zip(grad) {
        let v = &mut tensors[c.tensor].1.data_mut()[c.index];
        *v = (*v as f64 - lr * factor * g) as f32;
    }
}

/// Train from a seeded initialization.
pub fn train_toy(cfg: &TrainConfig, data: &[Sequence]) -> Result<TrainOutcome> {
    cfg.validate()?;
    let weights = ModelWeights::init(&cfg.model, cfg.seed)?;
    train(cfg, weights, data)
}

/// Train starting from `weights`; `cfg.model` is ignored in favor of the
/// weights' own configuration.
pub fn train(cfg: &TrainConfig, mut w: ModelWeights, data: &[Sequence]) -> Result<TrainOutcome> {
    cfg.validate()?;
    if w.config.gop < 2 {
        return Err(MtrError::config("training needs at least two frames per group"));
    }
    let count = w.trainable_count();
    if count > PARAM_BUDGET {
        return Err(MtrError::config(format!(
            "{count} trainable parameters exceed the finite-difference budget of {PARAM_BUDGET}"
        )));
    }
    if data.is_empty() {
        return Err(MtrError::config("no training sequences"));
    }
    let lw = cfg.loss;
    let root = Rng::with_stream(cfg.seed, 1);
    let monitor_seqs = &data[..cfg.monitor_size.clamp(1, data.len())];
    let mut trace = Vec::with_capacity(cfg.steps);

    let names: Vec<String> = w.tensors().into_iter().map(|(n, _)| n).collect();

    for step in 0..cfg.steps {
        let mut monitor_rng = root.split(u64::MAX);
        let (mut total, mut rate) = (0.0, 0.0);
        for seq in monitor_seqs {
            let g = Group::new(&w, seq, &mut monitor_rng)?;
            let (t, r) = g.objective(&w, &FrozenCritics::new(&w, &g)?, &lw)?;
            total += t;
            rate += r;
        }
        let n = monitor_seqs.len() as f64;

        let mut rng = root.split(step as u64);
        let group = Group::new(&w, &data[step % data.len()], &mut rng)?;

        // Critic step on fixed fakes.
        let (clean, m, _) = group.latents(&w)?;
        let fakes = group.fakes(&w, &m)?;
        let heats = &group.frame_heats;
        let spatial_in = |frames: &[Tensor]| -> Result<Vec<Tensor>> {
            frames.iter().zip(heats).map(|(f, h)| concat_channels(f, h)).collect()
        };
        let temporal_in = |frames: &[Tensor]| -> Result<Vec<Tensor>> {
            (1..frames.len())
                .map(|t| concat_channels(&concat_channels(&frames[t - 1], &frames[t])?, &concat_channels(&heats[t - 1], &heats[t])?))
                .collect()
        };
        let spatial = CriticCache::new(&w.dis_s.0, spatial_in(group.frames)?, spatial_in(&fakes)?)?;
        let temporal = CriticCache::new(&w.dis_t.0, temporal_in(group.frames)?, temporal_in(&fakes)?)?;
        let critic = spatial.loss(&w.dis_s.0, &FirstLayerChange::None)? + temporal.loss(&w.dis_t.0, &FirstLayerChange::None)?;
        let critic_coords = coords(&w, ParamGroup::is_critic);
        let base = &w;
        let grad = fd_gradient(&w, &critic_coords, cfg, |p, c| {
            let (critic, cache) = match c.group {
                ParamGroup::SpatialCritic => (&p.dis_s.0, &spatial),
                _ => (&p.dis_t.0, &temporal),
            };
            let name = &names[c.tensor];
            let delta = value_at(p, c) as f64 - value_at(base, c) as f64;
            let change = if name.ends_with("conv1.weight") {
                let shape = critic.conv1.weight.shape();
                let (cin, k) = (shape[1], shape[2]);
                let (co, rest) = (c.index / (cin * k * k), c.index % (cin * k * k));
                FirstLayerChange::Weight { co, ci: rest / (k * k), ky: rest % (k * k) / k, kx: rest % k, delta }
            } else if name.ends_with("conv1.bias") {
                FirstLayerChange::Bias { co: c.index, delta }
            } else {
                FirstLayerChange::None
            };
            cache.loss(critic, &change)
        })?;
        apply(&mut w, &critic_coords, &grad, cfg.lr_dis, cfg.clip_norm);

        // Encoder, hyperprior and generator step against the updated critics.
        let frozen = FrozenCritics::new(&w, &group)?;
        let gen_coords = coords(&w, |g| !g.is_critic() && g != ParamGroup::Frozen);
        let grad = fd_gradient(&w, &gen_coords, cfg, |p, c| match c.group {
            ParamGroup::Hyper => Ok(lw.rate * group.rate(p, &m, &group.hyper_latent(p, &clean)?)?),
            ParamGroup::Synthesis => group.synthesis_loss(p, &group.fakes(p, &m)?, &frozen, &lw),
            _ => Ok(group.objective(p, &frozen, &lw)?.0),
        })?;
        apply(&mut w, &gen_coords, &grad, cfg.lr_gen, cfg.clip_norm);

        trace.push(StepRecord { total: total / n, rate: rate / n, critic });
    }
    Ok(TrainOutcome { weights: w, trace })
}
