//! Streaming speaker diarization built on chunk-wise EEND-EDA inference and
//! GRU-based online neural clustering for inter-chunk stitching.
//!
//! The crate is organised bottom-up:
//!
//! - [`features`]: log-mel frontend, splicing and subsampling.
//! - [`eend_eda`]: latency-masked transformer encoder, encoder-decoder attractors
//!   and speaker posteriors.
//! - [`refine`]: attractor and centroid refinement decoders.
//! - [`cluster`]: assignment probabilities, matching and GRU centroid updates.
//! - [`stream`]: FIFO-buffered online sessions.
//! - [`losses`]: loss evaluators (no gradients).
//! - [`eval`]: DER with collar and clustering accuracy.
//! - [`io`]: RTTM, WAV, weight bundles and the synthetic conversation generator.
//!
//! Matrices representing sequences of vectors (frames, attractors, centroids)
//! are stored one vector per row.

pub mod cluster;
pub mod eend_eda;
pub mod error;
pub mod eval;
pub mod features;
pub mod io;
pub mod losses;
pub mod lsap;
pub mod model;
pub mod nn;
pub mod refine;
pub mod stream;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig};
pub use tensor::Matrix;
