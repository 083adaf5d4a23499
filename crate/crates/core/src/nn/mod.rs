//! Minimal reverse-mode kernels: 3x3 convolution, average pooling, dense
//! layers, leaky rectifier and tanh activations, softmax cross-entropy and Adam.
//!
//! Everything is generic over [`Scalar`] so the same code runs in f32 for
//! training and in f64 for finite-difference gradient checks.

mod adam;
mod layers;
mod loss;
mod network;
mod scalar;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use layers::{Conv3x3, Dense, Layer, LayerKind, LEAKY_SLOPE};
pub use loss::{softmax, softmax_cross_entropy, softmax_cross_entropy_batch};
pub use network::{Gradients, Network, Trace};
pub use scalar::Scalar;
pub use tensor::Tensor;

use alloc::vec::Vec;
use rand::Rng;

/// Fan-in scaled uniform initialization, bound `sqrt(6 / fan_in)`.
pub fn fan_in_uniform<T: Scalar, R: Rng>(rng: &mut R, fan_in: usize, count: usize) -> Vec<T> {
    let bound = libm::sqrt(6.0 / fan_in as f64);
    (0..count).map(|_| T::of(rng.gen_range(-bound..bound))).collect()
}
