//! Semantic prototype-guided action anticipation.
//!
//! The crate bundles a small reverse-mode differentiation substrate
//! ([`diff`]), dataset and binary file handling ([`dataio`]), the model
//! blocks ([`encoder`], [`tca`], [`pa`], [`decoder`]), the prototype space and
//! losses ([`semantic`]), optimization ([`trainer`]) and evaluation
//! ([`eval`]). The `sgear` binary exposes the same functionality on the
//! command line.

pub mod dataio;
pub mod decoder;
pub mod diff;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod layers;
pub mod model;
pub mod pa;
pub mod semantic;
pub mod tca;
pub mod trainer;

pub use error::{Error, Result};
