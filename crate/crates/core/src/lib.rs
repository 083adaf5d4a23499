//! Global deep curve estimation (GDCE) for acquisition-shift harmonization.
//!
//! The crate is `no_std` and only needs `alloc`. It carries everything that
//! is pure computation:
//!
//! - [`image`]: raw and unit-range rasters plus the three normalization baselines
//! - [`curve`]: the iterative quadratic tone curve and its analytic gradients
//! - [`nn`]: a small reverse-mode kernel set (conv, pooling, dense, activations), Adam
//! - [`models`]: the enhancer, the frozen task discriminator and the perceptual extractor
//! - [`train`]: the composite loss, training loops, cross-validation and the ablation grid
//! - [`synth`]: a label-separable synthetic dataset and parameterized acquisition shifts
//! - [`gradcheck`]: finite-difference checks of every differentiable op
//! - [`metrics`]: confusion matrices, ROC-AUC, precision/recall and worst-group accuracy
//!
//! File formats, checkpoints and the command-line tool live in the `gdce` crate.

#![no_std]
#![warn(clippy::cast_lossless, clippy::redundant_closure_for_method_calls)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod curve;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod train;

#[doc(inline)]
pub use self::{
    curve::CurveCoefficients,
    error::{Error, Result},
    image::{Plane, RawImage, UnitImage, Window},
    metrics::MetricsReport,
    models::{Discriminator, Gdce, GdceConfig, PerceptualExtractor},
    nn::{Network, Scalar, Tensor},
};
