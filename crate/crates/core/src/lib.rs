//! Metric-learning re-identification for nose-print style verification.
//!
//! The crate covers the whole pipeline: seeded augmentation ([`imgproc`]),
//! a synthetic identity dataset ([`synthdata`]), a small trainable
//! feature extractor with pooling and heads ([`nn`]), the joint
//! classification and metric objective ([`losses`]), PK-sampled Adam
//! training ([`trainer`]) and retrieval, query expansion, fusion and
//! ROC-AUC evaluation ([`retrieval`]).

pub mod cli;
pub mod error;
pub mod imgproc;
pub mod losses;
pub mod manifest;
pub mod nn;
pub mod retrieval;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
