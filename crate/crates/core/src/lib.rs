//! Tolerance-driven compression of small dense networks.

// `!(x > 0.0)` is used on purpose so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod complexity;
pub mod dataset;
pub mod driver;
pub mod encoder;
pub mod error;
pub mod nn;
pub mod qbc;
pub mod solver;
pub mod synth;
pub mod train;

pub use complexity::{ComplexityKind, ComplexityModel, DescentInfo};
pub use dataset::Dataset;
pub use error::{Error, ErrorClass, Result};
pub use nn::{Activation, Layer, LossReport, Model};
pub use solver::{ToleranceProblem, ToleranceResult};
pub use encoder::{Codebook, EncodedModel, GroupPolicy, PolicyKind};
