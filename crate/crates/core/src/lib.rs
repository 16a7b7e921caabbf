pub mod attribution;
pub mod config;
pub mod counterfactual;
pub mod error;
pub mod explain;
pub mod nn;
pub mod record;
pub mod synth;
pub mod tcav;
pub mod viz;
pub mod wrapper;

pub use error::{Error, Result};
pub use explain::Explainer;
