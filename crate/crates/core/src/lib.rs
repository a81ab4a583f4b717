pub mod error;
pub mod estimator;
pub mod kernel;
pub mod lp;
pub mod modulus;
pub mod population;
pub mod risk_lab;
pub mod witness;

pub use error::{Error, Result};
