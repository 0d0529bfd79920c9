//! EEG-speech (NES) models.
//!
//! Three models map imagined-speech EEG to speech features:
//!
//! - **NES-I**: joint-context linear features feed a Gaussian-Bernoulli RBM whose
//!   hidden layer is projected onto the speech envelope (or a softmax over phonemes).
//! - **NES-B**: as NES-I, with spoken-speech EEG added as a learned bias on the
//!   RBM input.
//! - **NES-G**: the RBM is replaced by a factored three-way RBM in which spoken EEG
//!   gates the interaction between imagined EEG and the hidden units.
//!
//! Training alternates contrastive divergence on the RBM core with supervised
//! backpropagation through the whole stack, batch by batch.
//!
//! The crate is organised bottom-up:
//!
//! | module | contents |
//! |---|---|
//! | [`preprocess`] | filtering, normalisation, segmentation, windowed power, envelopes |
//! | [`layers`] | context transform, spoken-EEG bias map, speech projection |
//! | [`gaussian_rbm`] | Gaussian-Bernoulli RBM and CD-k |
//! | [`factored_rbm`] | factored gated RBM, energy gradients, barrier-regularised CD-k |
//! | [`model`] | model assembly, joint training, envelope recovery, classification |
//! | [`model_io`] | versioned binary model files |
//! | [`eval`] | binary tasks, confusion matrices, correlations, spectral features |
//! | [`data`] | manifest datasets, synthetic data, evaluation split |
//! | [`gradcheck`] | finite-difference checks for every analytic gradient |
//! | [`cli`] | the `nes` batch front end |

pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod factored_rbm;
pub mod filter;
pub mod gaussian_rbm;
pub mod gradcheck;
pub mod layers;
pub mod math;
pub mod model;
pub mod model_io;
pub mod preprocess;

pub use error::{NesError, Result};
pub use model::{NesModel, Objective, TrainConfig, Variant};
