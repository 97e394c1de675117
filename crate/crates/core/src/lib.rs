//! Coarse-to-fine axial attention for video person re-identification, with
//! the surrounding tooling: tracklet re-detection and linking, mask-aware
//! aggregation and losses, an analytic FLOP model, and CMC/mAP evaluation
//! under the original and the revised protocols.

pub mod aggregation;
pub mod attention;
pub mod detect_link;
pub mod error;
pub mod eval;
pub mod flops;
pub mod gradcheck;
pub mod io;
pub mod losses;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod toy;

pub use error::{Error, Result};
pub use params::Parameters;
pub use rng::SeededRng;
pub use tensor::Tensor;
