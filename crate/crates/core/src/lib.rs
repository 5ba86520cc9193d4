//! Image pyramid guided detection backbone.
//!
//! The crate contains a small `f64` reverse-mode autodiff engine
//! ([`tensor`]), the network pieces built on it ([`pyramid`],
//! [`ipg_transform`], [`fusion`], [`backbone`], [`model`]), a single-stage
//! anchor detector ([`detector`]), a synthetic small-object dataset
//! ([`data_synth`]) and the training/evaluation harness ([`harness`]).

pub mod backbone;
pub mod data_synth;
pub mod detector;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod harness;
pub mod ipg_transform;
pub mod model;
pub mod nn;
pub mod params;
pub mod pyramid;
pub mod seed;
pub mod tensor;

pub use backbone::NetworkConfig;
pub use error::{Error, Result};
pub use fusion::FusionKind;
pub use model::IpgNet;
pub use params::ParamStore;
pub use pyramid::{build_pyramid, PyramidSet};
pub use tensor::{Mode, Tape, Tensor, Var};
