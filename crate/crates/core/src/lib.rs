//! Relational churn learning on call graphs.
//!
//! The crate is `no_std` (with `alloc`) so the numeric core can be embedded
//! anywhere; file formats, configuration and the experiment driver live in the
//! `callnet` companion crate.
//!
//! Module map:
//!
//! * [`cdr`]: call-detail records, the six-month timeline and churn labels.
//! * [`graph`]: call graphs under every direction / weight / decay /
//!   segmentation / reciprocity architecture.
//! * [`features`]: degree, triangle, link-based and RFM features.
//! * [`relational`]: relational classifiers and collective inference.
//! * [`classify`]: logistic regression, oversampling and the classifier trait.
//! * [`metrics`]: lift, AUC, maximum profit and expected maximum profit.
//! * [`stats`]: Friedman, Nemenyi and Kruskal-Wallis tests.
//! * [`synth`]: seeded synthetic CDR generator.
#![cfg_attr(all(not(feature = "std"), not(test)), no_std)]

extern crate alloc;

pub mod cdr;
pub mod classify;
mod error;
pub mod features;
pub mod graph;
pub mod metrics;
pub mod relational;
pub mod special;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
