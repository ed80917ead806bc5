pub mod acceptance;
pub mod airy1kernel;
pub mod covariance;
pub mod error;
pub mod logspace;
pub mod lpp;
pub mod quad;
pub mod specfun;

pub use error::{Error, Result};
pub use logspace::SignedLog;
