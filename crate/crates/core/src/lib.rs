//! Sequential density estimation with nonlinear continuous weighted finite
//! automata (RNADE-NCWFA).

pub mod error;
pub mod experiment;
pub mod ghmm;
pub mod ncwfa;
pub mod prob;
pub mod spectral;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};

/// A sequence of observation vectors.
pub type Sequence = Vec<Vec<f64>>;
