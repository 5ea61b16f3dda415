//! Range coding of integer symbol streams and the bitstream container.
//!
//! The coder is a 32-bit range coder with byte-wise renormalization and
//! carry propagation. Static tables carry 16-bit precision; adaptive models
//! keep their total below 2^14.

mod container;
mod model;
mod range;
mod stream;

pub use container::{BitstreamContainer, ContainerHeader, CONTAINER_HEADER_LEN, CONTAINER_MAGIC, CONTAINER_VERSION};
pub use model::{
    build_logistic_cdf, build_memory_cdf, AdaptiveModel, CdfTable, ALPHABET_BOUND, CDF_PRECISION_BITS,
    CDF_TOTAL,
};
pub use range::{RangeDecoder, RangeEncoder};
pub use stream::{decode_symbols, encode_symbols, SymbolDecoder, SymbolEncoder, SymbolTables, ESCAPE_MAGNITUDE_BITS};
