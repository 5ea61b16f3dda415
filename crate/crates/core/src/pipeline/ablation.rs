use std::fmt;

use crate::coder::BitstreamContainer;
use crate::error::{MtrError, Result};

use super::codec::{decode_gop, encode_gop};
use super::metrics::{bitrate_kbps, psnr_sequence};
use super::model::{ModelWeights, Variant};
use super::synth::Sequence;
use super::train::{train_toy, TrainConfig};

/// Held-out metrics for one architecture variant.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationReport {
    pub variant: Variant,
    pub groups: usize,
    pub frames: usize,
    pub bits: u64,
    pub memory_bits: u64,
    pub kbps: f64,
    pub psnr: f64,
    /// Last logged training objective, if any training ran.
    pub final_loss: Option<f64>,
}

impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "variant={}", self.variant)?;
        writeln!(f, "groups={}", self.groups)?;
        writeln!(f, "frames={}", self.frames)?;
        writeln!(f, "bits={}", self.bits)?;
        writeln!(f, "memory_bits={}", self.memory_bits)?;
        writeln!(f, "kbps={:.4}", self.kbps)?;
        write!(f, "psnr_db={:.4}", self.psnr)?;
        if let Some(l) = self.final_loss {
            write!(f, "\nfinal_loss={l:.6}")?;
        }
        Ok(())
    }
}

/// Encode and decode the first group of every sequence and score it.
pub fn evaluate(w: &ModelWeights, data: &[Sequence]) -> Result<AblationReport> {
    if data.is_empty() {
        return Err(MtrError::config("no evaluation sequences"));
    }
    let t = w.config.gop;
    let (mut bits, mut memory_bits, mut psnr_sum) = (0u64, 0u64, 0.0);
    for seq in data {
        if seq.frames.len() < t {
            return Err(MtrError::config(format!("evaluation sequence has {} frames, need {t}", seq.frames.len())));
        }
        let enc = encode_gop(&seq.frames[..t], &seq.track[..t], w)?;
        let bytes = enc.container.pack()?;
        let dec = decode_gop(&BitstreamContainer::unpack(&bytes)?, w)?;
        bits += 8 * bytes.len() as u64;
        memory_bits += 8 * enc.container.memory.len() as u64;
        psnr_sum += psnr_sequence(&seq.frames[..t], &dec.frames)?;
    }
    let frames = data.len() * t;
    Ok(AblationReport {
        variant: w.config.variant,
        groups: data.len(),
        frames,
        bits,
        memory_bits,
        kbps: bitrate_kbps(bits, frames),
        psnr: psnr_sum / data.len() as f64,
        final_loss: None,
    })
}

/// Train `variant` with `cfg` (no training when `cfg.steps` is 0) and score it
/// on held-out sequences.
pub fn run_ablation(variant: Variant, cfg: &TrainConfig, train_data: &[Sequence], eval_data: &[Sequence]) -> Result<AblationReport> {
    let mut cfg = cfg.clone();
    cfg.model.variant = variant;
    let (weights, final_loss) = if cfg.steps == 0 {
        (ModelWeights::init(&cfg.model, cfg.seed)?, None)
    } else {
        let out = train_toy(&cfg, train_data)?;
        let last = out.trace.last().map(|r| r.total);
        (out.weights, last)
    };
    let mut report = evaluate(&weights, eval_data)?;
    report.final_loss = final_loss;
    Ok(report)
}
