pub mod analysis;
pub mod error;
pub mod lab;
pub mod levy;
pub mod model;
pub mod oracle;
pub mod quad;
pub mod renewal;
pub mod rng;
pub mod sampler;
pub mod transfer;
pub mod walk;

pub use error::{Error, Result};
