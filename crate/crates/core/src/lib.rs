pub mod capacity;
pub mod error;
pub mod flow;
pub mod leray;
pub mod poly;
pub mod symplectic;
pub mod waveform;

pub use error::{Error, Result};
