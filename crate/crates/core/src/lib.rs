pub mod cli;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod hsfunc;
pub mod moyal;
pub mod quad;
pub mod schrodinger;
pub mod symbolfam;
pub mod weylquant;

pub use error::{Error, Result};
