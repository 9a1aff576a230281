//! gFormer: one configurable block that reproduces Transformer, MetaFormer,
//! CAT, Squeeze-and-Excite, MLP-Mixer and FNet, plus the TAFF detection
//! neck, a reverse-mode tape for gradient checks, and complexity analysis.

pub mod analysis;
pub mod blocks;
pub mod cli;
pub mod equivalence;
pub mod error;
pub mod gformer;
pub mod gradcheck;
pub mod mixers;
pub mod params;
pub mod taff;
pub mod tensor;

pub use error::{Error, Result};
pub use gformer::{assemble, preset, Block, GFormerConfig, PresetDims, PresetName, SpatialShape};
pub use params::BlockParams;
pub use tensor::Tensor;
