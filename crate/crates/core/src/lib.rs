#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Parabolic Dirac operator calculus in the Clifford–Witt algebra: fundamental
//! solutions, lattice-periodized Eisenstein kernels, discrete Teodorescu and
//! Cauchy transforms, Bergman projection and a fixed-point MHD solver.

pub mod algebra;
pub mod cli;
pub mod eisenstein;
pub mod geometry;
pub mod kernels;
pub mod mhd;
pub mod operators;
pub mod quadrature;

pub use algebra::{Multivector, Quaternion, Rotor};
