//! Bi-trajectory quantum mechanics for finite-dimensional systems.
//!
//! A quantum system here is a Hilbert space dimension with a Hamiltonian;
//! sequential measurements of its observables are described by complex
//! bi-probability distributions over pairs of outcome sequences. The crate
//! computes those distributions and their Gudder metrics, verifies their
//! defining properties and the phenomenology they encode (consistency
//! violation, Zeno effect, coarse-graining placement), and builds the
//! composite-system machinery on top: surrogate-field path sums, dynamical
//! maps with CPTP verification, and the coordinate (master-object) layer.
//!
//! The `bitraj` binary drives config-defined experiments and the invariant
//! suite; see the crate README for the CLI and file formats.

pub mod biprob;
pub mod composite;
pub mod config;
pub mod error;
pub mod master;
pub mod numeric;
pub mod phenomenology;
pub mod rng;
pub mod runner;
pub mod system;

pub use error::{Error, Result};
