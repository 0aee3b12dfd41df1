//! Spectral-Galerkin simulation and numerical verification of a degenerate
//! stochastic Hamiltonian system with multiplicative noise on L²(0,1).
//!
//! State is a pair `(u, v)` of fields in the Dirichlet sine basis, truncated
//! to `n` modes. The crate provides the Gaussian reference measures, the
//! superposition potentials, the diffusion coefficients, the Kolmogorov
//! operator on cylinder functions, a Galerkin SDE integrator, hypocoercivity
//! constants and an experiment harness driven by TOML configs.

// `!(x > 0.0)` is used deliberately so that NaN is rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coefficients;
pub mod galerkin_sde;
pub mod harness;
pub mod hypocoercivity;
pub mod kolmogorov;
pub mod mc;
pub mod potential;
pub mod spectral_gaussian;
