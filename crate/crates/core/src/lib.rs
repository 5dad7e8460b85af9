pub mod a2a;
pub mod bottleneck;
pub mod combine;
pub mod error;
pub mod eval;
pub mod features;
pub mod formats;
pub mod numcore;
pub mod pipeline;
pub mod ssl;

pub use error::{Error, Result};
