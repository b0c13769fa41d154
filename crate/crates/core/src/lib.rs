pub mod adequacy;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod fock;
pub mod info;
pub mod linalg;
pub mod optimize;
pub mod protocol;
pub mod sampler;
pub mod serde_complex;
pub mod stats;

pub use error::{Error, Result};
pub use linalg::C64;
