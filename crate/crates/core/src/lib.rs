//! Graph variational autoencoder for completing a sparse student × course
//! grade matrix, with classical recommender baselines, gradient×input
//! attribution and a cluster-structured synthetic data generator.
//!
//! Pipeline: [`bigraph`] turns grade records into ten per-level adjacency
//! matrices; [`model`] encodes nodes with level-specific graph
//! convolutions, samples latent codes and decodes a ten-way level
//! distribution for each student–course pair; [`train`] fits it with Adam
//! on hand-written gradients; [`baselines`] and [`explain`] provide the
//! comparison and analysis tools.

pub mod baselines;
pub mod bigraph;
pub mod config;
pub mod error;
pub mod explain;
pub mod io;
pub mod model;
pub mod numerics;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
