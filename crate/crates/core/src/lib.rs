pub mod augment;
pub mod error;
pub mod experiment;
pub mod fcls;
pub mod io;
pub mod mesma;
pub mod metrics;
pub mod rng;
pub mod spectral;
pub mod synth;
pub mod vae;

pub use error::{Error, ErrorCategory, Result};
