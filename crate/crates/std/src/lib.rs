//! Files, transports and the command-line pipeline around `fedboost-core`.

pub mod error;
pub mod io;
pub mod persist;
pub mod pipeline;
pub mod synth;
pub mod transport;

pub use error::{Error, Result};
