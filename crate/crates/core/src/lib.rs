//! Panel-of-experts dialogue response scoring.
//!
//! A shared transformer encoder is combined with one adapter stack and one
//! sigmoid classifier per training domain. In-domain inputs are scored by
//! their own expert; out-of-domain inputs by averaging all experts, either
//! over scores (late fusion) or over parameters (early fusion).
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`, which is what training, checkpoints and
//! the command-line tool use.

pub mod forge;
pub mod fusion;
pub mod meta_eval;
pub mod numkit;
pub mod panel;
pub mod scalar;
pub mod trainer;

pub use scalar::Scalar;

pub type Tensor = numkit::Tensor<f64>;
pub type NamedTensors = numkit::NamedTensors<f64>;
pub type Graph = numkit::Graph<f64>;
pub type OptimizerState = numkit::OptimizerState<f64>;
pub type AdamWConfig = numkit::AdamWConfig<f64>;
pub type PanelParameters = panel::PanelParameters<f64>;
pub type ScoreTrace = fusion::ScoreTrace<f64>;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
