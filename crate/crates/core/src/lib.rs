pub mod anchors;
pub mod boxcodec;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod losses;
pub mod model;
pub mod pipeline;
pub mod pooling;
pub mod stem;
pub mod synth;
pub mod tracking;

pub use error::{Error, Result};
