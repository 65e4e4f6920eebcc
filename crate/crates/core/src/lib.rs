//! Gait recognition from binary silhouette sequences.
//!
//! The crate carries its own small tensor and reverse-mode autodiff
//! substrate ([`tensor`], [`ops`], [`graph`]), the motion excitation module
//! ([`mem`]), fine feature extraction and MGE blocks ([`ffe`]), the full
//! network ([`backbone`]), training ([`training`]), data ingestion
//! ([`data`]) and the cross-view evaluation protocol ([`evalproto`]).

pub mod backbone;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod evalproto;
pub mod ffe;
pub mod gradcheck;
pub mod graph;
pub mod mem;
pub mod ops;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::{Real, Tensor};
