use std::collections::BTreeMap;
use std::fmt;
use std::hash::Hasher;
use std::str::FromStr;

use fnv::FnvHasher;

use crate::entropy::{hyper_strides, FactorizedDensity, HyperParams};
use crate::error::{MtrError, Result};
use crate::genadv::{Critic, GeneratorParams, PerceptualProxyParams, SpatialDiscParams, TemporalDiscParams, SPATIAL_IN, TEMPORAL_IN};
use crate::memorizer::{ConvLstmParams, EmbedParams};
use crate::numerics::{Conv, Rng, Tensor};
use crate::recaller::{AttentionKind, AttentionParams};

/// Model architecture variants, matching the ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// ConvLSTM memory, clues attend on memory.
    Full,
    /// The embedded first frame stands in for the memory.
    NoMemorize,
    /// Concatenation instead of attention.
    NoRecall,
    /// Memory attends on clues.
    MonC,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoMemorize, Variant::NoRecall, Variant::MonC];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoMemorize => "no_memorize",
            Variant::NoRecall => "no_recall",
            Variant::MonC => "monc",
        }
    }

    pub fn attention(self) -> AttentionKind {
        match self {
            Variant::Full | Variant::NoMemorize => AttentionKind::CluesOnMemory,
            Variant::NoRecall => AttentionKind::Concat,
            Variant::MonC => AttentionKind::MemoryOnClues,
        }
    }

    fn code(self) -> f32 {
        Variant::ALL.iter().position(|&v| v == self).unwrap() as f32
    }

    fn from_code(code: f32) -> Result<Self> {
        Variant::ALL
            .get(code as usize)
            .copied()
            .filter(|_| code.fract() == 0.0 && code >= 0.0)
            .ok_or_else(|| MtrError::decode(format!("unknown variant code {code}")))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = MtrError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| MtrError::config(format!("unknown variant {s:?} (expected full, no_memorize, no_recall or monc)")))
    }
}

/// Architecture and geometry shared by encoder and decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub height: usize,
    pub width: usize,
    pub gop: usize,
    pub mem_channels: usize,
    pub hyper_channels: usize,
    pub attn_dim: usize,
    pub gen_hidden: (usize, usize),
    pub disc_hidden: usize,
    pub proxy_channels: usize,
    pub variant: Variant,
    pub normalize: bool,
    /// Heatmap bump width in grid cells.
    pub heat_sigma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            height: 32,
            width: 32,
            gop: 10,
            mem_channels: 8,
            hyper_channels: 4,
            attn_dim: 8,
            gen_hidden: (16, 8),
            disc_hidden: 8,
            proxy_channels: 4,
            variant: Variant::Full,
            normalize: false,
            heat_sigma: 1.0,
        }
    }
}

/// Downsampling between frames and memory.
pub const MEMORY_FACTOR: usize = 4;

impl ModelConfig {
    /// Smallest configuration that is still trainable by finite differences:
    /// 8×8 frames, four-frame groups, two memory channels.
    pub fn toy() -> Self {
        ModelConfig {
            height: 8,
            width: 8,
            gop: 4,
            mem_channels: 2,
            hyper_channels: 2,
            attn_dim: 2,
            gen_hidden: (4, 2),
            disc_hidden: 2,
            proxy_channels: 2,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.height % MEMORY_FACTOR != 0 || self.width % MEMORY_FACTOR != 0 {
            return Err(MtrError::config(format!("frame size {}×{} must be non-zero multiples of 4", self.height, self.width)));
        }
        if self.height > u16::MAX as usize || self.width > u16::MAX as usize {
            return Err(MtrError::config("frame dimensions must fit in 16 bits"));
        }
        if self.gop == 0 || self.gop > u8::MAX as usize {
            return Err(MtrError::config(format!("gop size {} outside 1..=255", self.gop)));
        }
        let dims = [
            self.mem_channels,
            self.hyper_channels,
            self.attn_dim,
            self.gen_hidden.0,
            self.gen_hidden.1,
            self.disc_hidden,
            self.proxy_channels,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(MtrError::config("channel counts must be positive"));
        }
        if !(self.heat_sigma > 0.0) {
            return Err(MtrError::config("heat_sigma must be positive"));
        }
        Ok(())
    }

    /// Memory grid `(channels, height, width)`.
    pub fn memory_shape(&self) -> [usize; 3] {
        [self.mem_channels, self.height / MEMORY_FACTOR, self.width / MEMORY_FACTOR]
    }

    fn to_tensor(&self) -> Tensor {
        let v = [
            self.height as f32,
            self.width as f32,
            self.gop as f32,
            self.mem_channels as f32,
            self.hyper_channels as f32,
            self.attn_dim as f32,
            self.gen_hidden.0 as f32,
            self.gen_hidden.1 as f32,
            self.disc_hidden as f32,
            self.proxy_channels as f32,
            self.variant.code(),
            self.normalize as u8 as f32,
            self.heat_sigma as f32,
        ];
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    fn from_tensor(t: &Tensor) -> Result<Self> {
        let v = t.data();
        if v.len() != 13 {
            return Err(MtrError::decode(format!("config record has {} entries, expected 13", v.len())));
        }
        let int = |x: f32| -> Result<usize> {
            if x >= 0.0 && x.fract() == 0.0 {
                Ok(x as usize)
            } else {
                Err(MtrError::decode(format!("config entry {x} is not a count")))
            }
        };
        let cfg = ModelConfig {
            height: int(v[0])?,
            width: int(v[1])?,
            gop: int(v[2])?,
            mem_channels: int(v[3])?,
            hyper_channels: int(v[4])?,
            attn_dim: int(v[5])?,
            gen_hidden: (int(v[6])?, int(v[7])?),
            disc_hidden: int(v[8])?,
            proxy_channels: int(v[9])?,
            variant: Variant::from_code(v[10])?,
            normalize: v[11] != 0.0,
            heat_sigma: v[12] as f64,
        };
        cfg.validate().map_err(|e| MtrError::decode(format!("weights file carries an invalid config: {e}")))?;
        Ok(cfg)
    }
}

/// Coarse parameter groups; training perturbs them in different stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    /// Embedder and ConvLSTM.
    Memory,
    /// Hyper transforms and factorized density.
    Hyper,
    /// Attention projections and generator.
    Synthesis,
    SpatialCritic,
    TemporalCritic,
    /// Perceptual proxy, never trained.
    Frozen,
}

impl ParamGroup {
    pub fn of(name: &str) -> ParamGroup {
        match name.split('.').next().unwrap_or("") {
            "embed" | "lstm" => ParamGroup::Memory,
            "hyper" | "density" => ParamGroup::Hyper,
            "attn" | "gen" => ParamGroup::Synthesis,
            "dis_s" => ParamGroup::SpatialCritic,
            "dis_t" => ParamGroup::TemporalCritic,
            _ => ParamGroup::Frozen,
        }
    }

    pub fn is_critic(self) -> bool {
        matches!(self, ParamGroup::SpatialCritic | ParamGroup::TemporalCritic)
    }
}

/// Every parameter of the codec plus its configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub embed: EmbedParams,
    pub lstm: ConvLstmParams,
    pub hyper: HyperParams,
    pub density: FactorizedDensity,
    pub attn: AttentionParams,
    pub gen: GeneratorParams,
    pub dis_s: SpatialDiscParams,
    pub dis_t: TemporalDiscParams,
    pub proxy: PerceptualProxyParams,
}

fn push_conv<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, c: &'a Conv) {
    out.push((format!("{prefix}.weight"), &c.weight));
    out.push((format!("{prefix}.bias"), &c.bias));
}

fn push_conv_mut<'a>(out: &mut Vec<(String, &'a mut Tensor)>, prefix: &str, c: &'a mut Conv) {
    out.push((format!("{prefix}.weight"), &mut c.weight));
    out.push((format!("{prefix}.bias"), &mut c.bias));
}

const WEIGHTS_MAGIC: &[u8; 4] = b"MTRW";
const WEIGHTS_VERSION: u8 = 1;
const CONFIG_TENSOR: &str = "config";

impl ModelWeights {
    /// All-zero parameters (perceptual proxy included).
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let [cm, mh, mw] = config.memory_shape();
        let d = config.attn_dim;
        Ok(ModelWeights {
            config: config.clone(),
            embed: EmbedParams::zeros(cm),
            lstm: ConvLstmParams::zeros(cm, mh, mw),
            hyper: HyperParams::zeros(cm, config.hyper_channels, hyper_strides(mh, mw)),
            density: FactorizedDensity::standard(config.hyper_channels),
            attn: AttentionParams { normalize: config.normalize, ..AttentionParams::zeros(config.variant.attention(), cm, d) },
            gen: GeneratorParams::zeros(2 * d, config.gen_hidden),
            dis_s: SpatialDiscParams(Critic::zeros(SPATIAL_IN, config.disc_hidden)),
            dis_t: TemporalDiscParams(Critic::zeros(TEMPORAL_IN, config.disc_hidden)),
            proxy: PerceptualProxyParams {
                conv1: Conv::zeros(config.proxy_channels, 1, 3),
                conv2: Conv::zeros(config.proxy_channels, config.proxy_channels, 3),
            },
        })
    }

    /// Random initialization; each component draws from its own sub-stream.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let [cm, mh, mw] = config.memory_shape();
        let d = config.attn_dim;
        let root = Rng::new(seed);
        let mut attn = AttentionParams::random(config.variant.attention(), cm, d, &mut root.split(4));
        attn.normalize = config.normalize;
        // Keep initial attention logits small.
        attn.query.weight = attn.query.weight.map(|v| v * 0.5);
        attn.key.weight = attn.key.weight.map(|v| v * 0.5);
        Ok(ModelWeights {
            config: config.clone(),
            embed: EmbedParams::random(cm, &mut root.split(0)),
            lstm: ConvLstmParams::random(cm, mh, mw, &mut root.split(1)),
            hyper: HyperParams::random(cm, config.hyper_channels, hyper_strides(mh, mw), &mut root.split(2)),
            density: FactorizedDensity::standard(config.hyper_channels),
            attn,
            gen: GeneratorParams::random(2 * d, config.gen_hidden, &mut root.split(5)),
            dis_s: SpatialDiscParams::random(config.disc_hidden, &mut root.split(6)),
            dis_t: TemporalDiscParams::random(config.disc_hidden, &mut root.split(7)),
            proxy: PerceptualProxyParams::new(config.proxy_channels, &mut root.split(8)),
        })
    }

    /// Parameter tensors sorted by name.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        push_conv(&mut out, "embed.conv1", &self.embed.conv1);
        push_conv(&mut out, "embed.conv2", &self.embed.conv2);
        for (n, t) in self.lstm.tensors() {
            out.push((format!("lstm.{n}"), t));
        }
        push_conv(&mut out, "hyper.enc1", &self.hyper.enc1);
        push_conv(&mut out, "hyper.enc2", &self.hyper.enc2);
        push_conv(&mut out, "hyper.dec1", &self.hyper.dec1);
        push_conv(&mut out, "hyper.dec2", &self.hyper.dec2);
        out.push(("density.loc".into(), &self.density.loc));
        out.push(("density.log_scale".into(), &self.density.log_scale));
        push_conv(&mut out, "attn.query", &self.attn.query);
        push_conv(&mut out, "attn.key", &self.attn.key);
        push_conv(&mut out, "attn.value", &self.attn.value);
        push_conv(&mut out, "gen.conv1", &self.gen.conv1);
        push_conv(&mut out, "gen.conv2", &self.gen.conv2);
        push_conv(&mut out, "gen.out", &self.gen.out);
        for (p, c) in [("dis_s", &self.dis_s.0), ("dis_t", &self.dis_t.0)] {
            push_conv(&mut out, &format!("{p}.conv1"), &c.conv1);
            push_conv(&mut out, &format!("{p}.conv2"), &c.conv2);
            push_conv(&mut out, &format!("{p}.out"), &c.out);
        }
        push_conv(&mut out, "proxy.conv1", &self.proxy.conv1);
        push_conv(&mut out, "proxy.conv2", &self.proxy.conv2);
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Mutable view in the same order as [`ModelWeights::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        push_conv_mut(&mut out, "embed.conv1", &mut self.embed.conv1);
        push_conv_mut(&mut out, "embed.conv2", &mut self.embed.conv2);
        for (n, t) in self.lstm.tensors_mut() {
            out.push((format!("lstm.{n}"), t));
        }
        push_conv_mut(&mut out, "hyper.enc1", &mut self.hyper.enc1);
        push_conv_mut(&mut out, "hyper.enc2", &mut self.hyper.enc2);
        push_conv_mut(&mut out, "hyper.dec1", &mut self.hyper.dec1);
        push_conv_mut(&mut out, "hyper.dec2", &mut self.hyper.dec2);
        out.push(("density.loc".into(), &mut self.density.loc));
        out.push(("density.log_scale".into(), &mut self.density.log_scale));
        push_conv_mut(&mut out, "attn.query", &mut self.attn.query);
        push_conv_mut(&mut out, "attn.key", &mut self.attn.key);
        push_conv_mut(&mut out, "attn.value", &mut self.attn.value);
        push_conv_mut(&mut out, "gen.conv1", &mut self.gen.conv1);
        push_conv_mut(&mut out, "gen.conv2", &mut self.gen.conv2);
        push_conv_mut(&mut out, "gen.out", &mut self.gen.out);
        for (p, c) in [("dis_s", &mut self.dis_s.0), ("dis_t", &mut self.dis_t.0)] {
            push_conv_mut(&mut out, &format!("{p}.conv1"), &mut c.conv1);
            push_conv_mut(&mut out, &format!("{p}.conv2"), &mut c.conv2);
            push_conv_mut(&mut out, &format!("{p}.out"), &mut c.out);
        }
        push_conv_mut(&mut out, "proxy.conv1", &mut self.proxy.conv1);
        push_conv_mut(&mut out, "proxy.conv2", &mut self.proxy.conv2);
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Number of parameters outside the frozen proxy.
    pub fn trainable_count(&self) -> usize {
        self.tensors().iter().filter(|(n, _)| ParamGroup::of(n) != ParamGroup::Frozen).map(|(_, t)| t.len()).sum()
    }

    /// Serialize to the `MTRW` weights format.
    ///
    /// Layout: magic, version byte, tensor count (u32), then per tensor in
    /// name order: name length (u16), name bytes, rank (u8), dims (u32 each),
    /// values (f32 each). All integers and floats little-endian. The model
    /// configuration travels as a rank-1 tensor named `config`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let config = self.config.to_tensor();
        let mut entries: Vec<(String, &Tensor)> = self.tensors();
        entries.push((CONFIG_TENSOR.to_string(), &config));
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.push(WEIGHTS_VERSION);
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (name, t) in entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape().len() as u8);
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != WEIGHTS_MAGIC {
            return Err(MtrError::decode("not a weights file (bad magic)"));
        }
        let version = r.take(1)?[0];
        if version != WEIGHTS_VERSION {
            return Err(MtrError::decode(format!("unsupported weights version {version}")));
        }
        let count = r.u32()? as usize;
        let mut map = BTreeMap::new();
        for _ in 0..count {
            let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| MtrError::decode("tensor name is not UTF-8"))?;
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| MtrError::decode("tensor too large"))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let t = Tensor::new(shape, data).map_err(|e| MtrError::decode(format!("tensor {name}: {e}")))?;
            if map.insert(name.clone(), t).is_some() {
                return Err(MtrError::decode(format!("duplicate tensor {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(MtrError::decode("trailing bytes after last tensor"));
        }
        let config = ModelConfig::from_tensor(
            &map.remove(CONFIG_TENSOR).ok_or_else(|| MtrError::decode("weights file has no config record"))?,
        )?;
        let mut w = ModelWeights::zeros(&config).map_err(|e| MtrError::decode(e.to_string()))?;
        for (name, slot) in w.tensors_mut() {
            let t = map.remove(&name).ok_or_else(|| MtrError::decode(format!("weights file is missing {name}")))?;
            if t.shape() != slot.shape() {
                return Err(MtrError::decode(format!("{name}: shape {:?}, expected {:?}", t.shape(), slot.shape())));
            }
            *slot = t;
        }
        if let Some(extra) = map.keys().next() {
            return Err(MtrError::decode(format!("unexpected tensor {extra}")));
        }
        if !w.tensors().iter().all(|(_, t)| t.is_finite()) {
            return Err(MtrError::decode("weights contain non-finite values"));
        }
        Ok(w)
    }

    /// FNV-1a 64 of the serialized weights.
    pub fn content_hash(&self) -> u64 {
        weights_hash(&self.to_bytes())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// FNV-1a 64 over a byte string.
pub fn weights_hash(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| MtrError::decode("weights file is truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(weights_hash(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(weights_hash(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn weights_round_trip_bit_exact() {
        for variant in Variant::ALL {
            let cfg = ModelConfig { variant, ..ModelConfig::toy() };
            let w = ModelWeights::init(&cfg, 5).unwrap();
            let bytes = w.to_bytes();
            let back = ModelWeights::from_bytes(&bytes).unwrap();
            assert_eq!(back, w);
            assert_eq!(back.to_bytes(), bytes);
            assert_eq!(back.content_hash(), w.content_hash());
        }
    }

    #[test]
    fn tensors_are_sorted_and_unique() {
        let w = ModelWeights::init(&ModelConfig::toy(), 1).unwrap();
        let names: Vec<String> = w.tensors().into_iter().map(|(n, _)| n).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(names, sorted);
        let mut w2 = w.clone();
        let mut_names: Vec<String> = w2.tensors_mut().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, mut_names);
    }

    #[test]
    fn hash_changes_with_any_parameter() {
        let w = ModelWeights::init(&ModelConfig::toy(), 1).unwrap();
        let mut w2 = w.clone();
        w2.gen.out.bias.data_mut()[0] += 1e-3;
        assert_ne!(w.content_hash(), w2.content_hash());
    }

    #[test]
    fn corrupt_weights_rejected() {
        let bytes = ModelWeights::init(&ModelConfig::toy(), 1).unwrap().to_bytes();
        assert!(ModelWeights::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ModelWeights::from_bytes(&bad).is_err());
    }

    #[test]
    fn toy_fits_the_training_budget() {
        let w = ModelWeights::init(&ModelConfig::toy(), 1).unwrap();
        assert!(w.trainable_count() <= 2000, "{}", w.trainable_count());
    }

    #[test]
    fn variant_names_parse() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("bogus".parse::<Variant>().is_err());
    }
}
