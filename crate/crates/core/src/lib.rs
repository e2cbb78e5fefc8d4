//! Large-deviation formulas for the O'Connell-Yor semi-discrete directed
//! polymer, with Monte Carlo machinery to check them at small sizes.
pub mod convex;
pub mod error;
pub mod mc;
pub mod optim;
pub mod quad;
pub mod rates;
pub mod report;
pub mod sim;
pub mod specfun;

pub use error::{Error, Result};
