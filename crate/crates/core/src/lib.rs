pub mod depthfusion;
pub mod error;
pub mod fixtures;
pub mod geometry;
pub mod image;
pub mod io;
pub mod ldi;
pub mod metrics;
pub mod oracle;
pub mod pipeline;
pub mod plmap;
pub mod sampler;
pub mod seed;

pub use error::{Error, Result};
