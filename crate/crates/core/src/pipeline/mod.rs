//! End-to-end group-of-pictures codec, synthetic data, metrics, file I/O,
//! finite-difference training and the ablation runner.

mod ablation;
mod codec;
mod io;
mod metrics;
mod model;
mod synth;
mod train;

pub use ablation::{evaluate, run_ablation, AblationReport};
pub use codec::{compute_memory, decode_gop, encode_gop, frame_heatmap, grid_heatmap, synthesize_frame, DecodedGop, EncodedGop};
pub use io::{
    decode_pgm, encode_pgm, frame_name, read_dataset, read_frames, read_sequence, sequence_name, write_dataset,
    write_frames, write_sequence, SKELETON_FILE,
};
pub use metrics::{bitrate_kbps, from_u8, psnr, psnr_sequence, to_u8, FRAMES_PER_SECOND, PSNR_CAP};
pub use model::{weights_hash, ModelConfig, ModelWeights, ParamGroup, Variant, MEMORY_FACTOR};
pub use synth::{synth_dataset, MotionParams, Sequence};
pub use train::{central_difference, fd_step, train, train_toy, StepRecord, TrainConfig, TrainOutcome, PARAM_BUDGET};
