//! Distributed simulation and inference with ℓ-bit players in the
//! simultaneous message-passing model.
//!
//! Players each observe one sample from an unknown pmf over `[k]` and send a
//! single ℓ-bit message to a referee. The crate provides the execution fabric
//! ([`smp`]), exact distributed simulation of samples ([`simulate`]),
//! private-coin simulate-and-infer pipelines ([`infer`]), public-coin
//! uniformity testing ([`public_uniformity`]), the reduction from identity to
//! uniformity testing ([`identity`]), brute-force checks of the supporting
//! formulas ([`verify`]), and a seeded experiment harness ([`harness`]).

pub mod constants;
pub mod dist;
pub mod error;
pub mod harness;
pub mod identity;
pub mod infer;
pub mod public_uniformity;
pub mod seed;
pub mod simulate;
pub mod smp;
pub mod testers;
pub mod verify;

pub use constants::Constants;
pub use error::{Error, Result};
