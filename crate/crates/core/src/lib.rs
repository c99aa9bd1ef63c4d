pub mod analysis;
pub mod cli;
pub mod error;
pub mod exact;
pub mod groundstate;
pub mod krylov;
pub mod model;
pub mod perturb;
pub mod symtensor;
pub mod tdvp;
pub mod ttn;

pub use error::{Error, Result};
