mod error;
pub mod experiments;
pub mod losses;
pub mod pairing;
pub mod raster;
pub mod training;
pub mod vts;
pub mod xbd;

pub use error::{Error, Result};
