//! Self-attention bottleneck agent: patch voting, top-K patch selection, a
//! small LSTM controller, the flat genome codec and the CMA-ES optimizer
//! that trains it.
//!
//! The attention and controller math is generic over [`Scalar`] (`f32` or
//! `f64`); the genome and optimizer always work in `f64`.

pub mod agent;
pub mod attention;
pub mod cmaes;
pub mod config;
pub mod controller;
pub mod error;
pub mod genome;
pub mod image;
pub mod linalg;
pub mod scalar;

pub use agent::AttentionAgent;
pub use attention::{
    attention_matrix, importance_vector, patch_centers, patch_importance, patchify, select_top_k,
    weighted_output, AttentionOutcome, AttentionParams, Glimpse, PatchGrid, SelfAttention,
};
pub use cmaes::{CmaConfig, CmaEs, Incumbent, StrategyParams, TellReport};
pub use config::AgentConfig;
pub use controller::{step_controller, Action, ActionSpec, ControllerState, LstmParams};
pub use error::{Error, Result};
pub use genome::{count_params, decode, encode, read_genome, write_genome, Genome, GenomeLayout, ParamCounts, Segment};
pub use image::{Frame, RgbImage};
pub use linalg::Matrix;
pub use scalar::Scalar;

pub type Agent32 = AttentionAgent<f32>;
pub type Agent64 = AttentionAgent<f64>;
pub type AttentionParams32 = AttentionParams<f32>;
pub type AttentionParams64 = AttentionParams<f64>;
pub type LstmParams32 = LstmParams<f32>;
pub type LstmParams64 = LstmParams<f64>;
pub type Frame32 = Frame<f32>;
pub type Frame64 = Frame<f64>;
pub type Matrix32 = Matrix<f32>;
pub type Matrix64 = Matrix<f64>;
