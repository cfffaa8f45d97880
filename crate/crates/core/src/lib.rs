pub mod cli;
pub mod error;
pub mod eval;
pub mod nn;
pub mod oracle;
pub mod par;
pub mod synth;
pub mod training;
pub mod transition;
pub mod treebank;

pub use error::{Error, Result};
