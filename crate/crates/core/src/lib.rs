pub mod bundle;
pub mod corpus;
pub mod dialogue;
pub mod emotion;
pub mod error;
pub mod eval;
pub mod hash;
pub mod index;
pub mod metrics;
pub mod nn;
pub mod ranker;
pub mod safety;
pub mod semantic;
pub mod synth;
pub mod text;

pub use error::{Error, Result};
