//! Memorize-then-recall video codec for static-camera surveillance footage.
//!
//! A group of frames is summarized into a single quantized memory tensor by a
//! convolutional LSTM and coded under a hyperprior entropy model. Per-frame
//! skeletons travel losslessly alongside it, and the decoder recalls each
//! frame by attending from the skeleton heatmap into the memory.

pub mod coder;
pub mod entropy;
mod error;
pub mod genadv;
pub mod memorizer;
pub mod numerics;
pub mod pipeline;
pub mod recaller;
pub mod skeleton;

pub use error::{MtrError, Result};
