//! Core of the multimodal VAE toolkit: diagonal Gaussians and their
//! fusion rules, scalar reconstruction objectives, and the synthetic
//! vision–language–trajectory tabletop data factory.

pub mod blob;
pub mod dataset;
pub mod distributions;
pub mod error;
pub mod fusion;
pub mod recon;
pub mod scene;
pub mod seed;

pub use distributions::{DiagonalGaussian, LogVarRange};
pub use error::{Error, Result};
pub use fusion::{ExpertSet, FusionKind, JointPosterior};
