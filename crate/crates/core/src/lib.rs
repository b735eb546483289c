//! Surrogate modeling and inverse design of on-chip RF transformers.
//!
//! The pipeline: sample layouts ([`geometry`]), label them with the lumped
//! electromagnetic stand-in ([`oracle`]), fit MLP surrogates per frequency
//! sub-band with forward/backward self-transfer ([`surrogate`],
//! [`transfer`]), score them ([`metrics`]), and drive CMA-ES impedance
//! matching over the trained surrogate ([`inverse`]).

pub mod geometry;
pub mod oracle;
pub mod metrics;
pub mod surrogate;
pub mod transfer;
pub mod rfnet;
pub mod inverse;
pub mod plot;

pub use geometry::{ParamSpace, XfmrGeometry, XfmrTemplate};
pub use rfnet::{FrequencyGrid, SParamTensor};
