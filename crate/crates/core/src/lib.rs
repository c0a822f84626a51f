pub mod codec;
pub mod cover;
pub mod distort;
pub mod error;
pub mod gradcheck;
pub mod io;
pub mod keyring;
pub mod metrics;
pub mod nn;
pub mod samples;
pub mod sps;

pub use error::{Error, Result, Stage};
