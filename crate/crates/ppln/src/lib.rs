//! Parametric piecewise-linear temporal nodes.
//!
//! A node maps a feature vector and a normalized timestamp to a scalar by
//! predicting the coefficients of a piecewise-linear function of time and
//! evaluating it at the timestamp. The crate provides:
//!
//! - [`plf`]: the coefficient representation ([`SegmentSet`]), boundary
//!   smoothing with a temperature parameter, closed-form integrals, and
//!   integral normalization that pins the temporal mean to a target.
//! - [`grad`]: hand-derived backward passes for every evaluation path and a
//!   reverse-accumulation chain driver.
//! - [`heads`]: dense and 2D-convolutional coefficient-prediction heads.
//! - [`fit`]: direct curve fitting of a segment set to noisy samples with a
//!   temperature-annealing schedule and step-size guard.
//! - [`net`]: small trainable stacks of node layers with SGD/Adam/RMSProp.
//! - [`synth`]: seeded generators for ground-truth segment sets, noisy
//!   samples, and regression tasks.
//! - [`oracle`]: independent brute-force references (finite differences,
//!   midpoint quadrature, naive convolution) used to verify everything else.

pub mod error;
pub mod fit;
pub mod grad;
pub mod heads;
pub mod net;
pub mod oracle;
pub mod plf;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use plf::{endpoints_from_sizes, SegmentSet, SmoothingWeights, MIN_ENDPOINT_GAP};
