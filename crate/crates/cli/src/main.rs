use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mtr_core::coder::BitstreamContainer;
use mtr_core::pipeline::{
    bitrate_kbps, decode_gop, encode_gop, psnr_sequence, read_dataset, read_frames, run_ablation, synth_dataset,
    train_toy, write_dataset, write_frames, ModelWeights, MotionParams, TrainConfig, Variant, SKELETON_FILE,
};
use mtr_core::skeleton::{format_track, parse_track};
use mtr_core::{MtrError, Result};

/// Memorize-then-recall surveillance video codec.
#[derive(Parser)]
#[command(name = "mtr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic walking-figure sequences.
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Frame size as HxW, e.g. 32x32.
        #[arg(long, default_value = "32x32", value_parser = parse_size)]
        size: (usize, usize),
        #[arg(long, default_value_t = 10)]
        frames: usize,
        /// Largest joint displacement per frame, in pixels.
        #[arg(long, default_value_t = 7)]
        max_step: u16,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write randomly initialized weights for a configuration.
    Init {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train weights by finite differences.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Optional per-step loss log.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Compress one group of frames.
    Encode {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        skeletons: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct frames from a stream.
    Decode {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report PSNR and bitrate of a reconstruction.
    Eval {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        rec: PathBuf,
        #[arg(long)]
        bits: PathBuf,
    },
    /// Train and score one architecture variant on held-out data.
    Ablate {
        #[arg(long)]
        variant: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Held-out sequences; defaults to the training data.
        #[arg(long)]
        eval: Option<PathBuf>,
        /// Also write the report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
    let w = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
    Ok((h, w))
}

fn load_config(path: &Path) -> Result<TrainConfig> {
    TrainConfig::parse(&fs::read_to_string(path)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { seed, count, size: (h, w), frames, max_step, out } => {
            let motion = MotionParams { max_step, ..MotionParams::default() };
            let data = synth_dataset(seed, count, h, w, frames, &motion)?;
            write_dataset(&out, &data)?;
            println!("wrote {count} sequences of {frames} {h}x{w} frames to {}", out.display());
        }
        Command::Init { config, seed, out } => {
            let mut cfg = match config {
                Some(p) => load_config(&p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let w = ModelWeights::init(&cfg.model, cfg.seed)?;
            w.save(&out)?;
            println!("hash={:016x}", w.content_hash());
        }
        Command::Train { config, data, out, trace } => {
            let cfg = load_config(&config)?;
            let data = read_dataset(&data)?;
            let result = train_toy(&cfg, &data)?;
            result.weights.save(&out)?;
            if let Some(path) = trace {
                let mut text = String::from("step total rate critic\n");
                for (i, r) in result.trace.iter().enumerate() {
                    text.push_str(&format!("{i} {:.6} {:.6} {:.6}\n", r.total, r.rate, r.critic));
                }
                fs::write(path, text)?;
            }
            if let (Some(first), Some(last)) = (result.trace.first(), result.trace.last()) {
                println!("loss {:.4} -> {:.4} over {} steps", first.total, last.total, result.trace.len());
            }
            println!("hash={:016x}", result.weights.content_hash());
        }
        Command::Encode { weights, frames, skeletons, out } => {
            let w = ModelWeights::load(&weights)?;
            let frames = read_frames(&frames)?;
            let track = parse_track(&fs::read_to_string(&skeletons)?)?;
            let enc = encode_gop(&frames, &track, &w)?;
            let bytes = enc.container.pack()?;
            fs::write(&out, &bytes)?;
            println!("bits={}", 8 * bytes.len());
            println!("memory_bits={}", 8 * enc.container.memory.len());
            println!("estimated_bits={:.1}", enc.estimate.total());
        }
        Command::Decode { weights, input, out } => {
            let w = ModelWeights::load(&weights)?;
            let container = BitstreamContainer::unpack(&fs::read(&input)?)?;
            let dec = decode_gop(&container, &w)?;
            write_frames(&out, &dec.frames)?;
            fs::write(out.join(SKELETON_FILE), format_track(&dec.track))?;
            println!("decoded {} frames to {}", dec.frames.len(), out.display());
        }
        Command::Eval { reference, rec, bits } => {
            let reconstructed = read_frames(&rec)?;
            let reference = read_frames(&reference)?;
            if reconstructed.is_empty() || reference.len() < reconstructed.len() {
                return Err(MtrError::Config(format!(
                    "{} reference frames cannot cover {} reconstructed frames",
                    reference.len(),
                    reconstructed.len()
                )));
            }
            let psnr = psnr_sequence(&reference[..reconstructed.len()], &reconstructed)?;
            let total = 8 * fs::metadata(&bits)?.len();
            println!("psnr_db={psnr:.4}");
            println!("kbps={:.4}", bitrate_kbps(total, reconstructed.len()));
        }
        Command::Ablate { variant, config, data, eval, out } => {
            let variant: Variant = variant.parse()?;
            let cfg = load_config(&config)?;
            let train = read_dataset(&data)?;
            let held = match eval {
                Some(p) => read_dataset(&p)?,
                None => train.clone(),
            };
            let report = run_ablation(variant, &cfg, &train, &held)?;
            println!("{report}");
            if let Some(p) = out {
                fs::write(p, format!("{report}\n"))?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mtr: {e}");
            ExitCode::from(match e {
                MtrError::Decode(_) => 3,
                MtrError::Config(_) | MtrError::Io(_) => 2,
                MtrError::Contract(_) => 1,
            })
        }
    }
}
