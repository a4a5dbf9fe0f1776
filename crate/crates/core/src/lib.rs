//! Object-goal navigation on a semantic gridworld.
//!
//! The crate covers the whole pipeline: procedural scenes with typed rooms and
//! placed objects ([`world`]), the six-action episode simulator ([`sim`]),
//! episode sampling and generalization splits ([`episodes`]), a frontier-seeking
//! scripted demonstrator ([`demo`]), hierarchical chain-of-thought annotation
//! with per-step confidence scores ([`hcot`]), a softmax policy trained with
//! plain or confidence-weighted cross-entropy ([`policy`]), and SR / SPL /
//! SoftSPL evaluation ([`eval`]). [`serve`] hosts the teleoperation service used
//! to record human demonstrations.

pub mod artifact;
pub mod demo;
pub mod episodes;
pub mod error;
pub mod eval;
pub mod geom;
pub mod hcot;
pub mod manifest;
pub mod nav;
pub mod pipeline;
pub mod policy;
pub mod serve;
pub mod sim;
pub mod world;

pub use error::{Error, Result};
