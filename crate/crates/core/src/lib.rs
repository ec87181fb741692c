//! Hybrid recommender built from a user-oriented VAE whose item embeddings
//! are mutually regularized by an item-content VAE.

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod item_vae;
pub mod model;
pub mod nn;
pub mod predictor;
pub mod trainer;
pub mod user_vae;

pub use error::{Error, Result};
pub use model::Model;
