//! Valence-histogram conditioned constrained graph VAE for molecules.
//!
//! The crate is organised bottom-up:
//!
//! * [`chemgraph`], [`smiles`] and [`histogram`] hold the chemistry: graphs
//!   with implicit hydrogens, SMILES I/O, and valence histograms with their
//!   training-set distribution.
//! * [`autodiff`] is a small tape-based reverse-mode engine with the layers
//!   the networks are assembled from.
//! * [`encoder`], [`decoder`] and [`model`] are the VAE itself.
//! * [`training`] and [`metrics`] drive optimisation and evaluation.

pub mod autodiff;
pub mod chemgraph;
pub mod config;
pub mod dataset;
pub mod decoder;
pub mod encoder;
pub mod histogram;
pub mod metrics;
pub mod model;
pub mod smiles;
pub mod training;
pub mod util;

pub use chemgraph::{AtomType, AtomVocabulary, BondOrder, MolecularGraph};
pub use histogram::{HistogramDistribution, ValenceHistogram};
pub use smiles::{parse_smiles, write_smiles};
