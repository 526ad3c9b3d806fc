//! Curvature-aware training primitives.
//!
//! The crate measures the top eigenvalue of the training-loss Hessian
//! (sharpness, λ₁) with matrix-free Lanczos, relates it to the learning-rate
//! stability bound `c/η`, and provides the models, optimizers and exact
//! quadratic dynamics needed to study how the two interact during training.

pub mod numerics;
pub mod model;
pub mod optim;
pub mod spectral;
pub mod monitor;
pub mod quadlab;
