//! Continuous-time DC kernel toolkit.
//!
//! Closed-form stable kernels and their spline mother kernels, Mercer
//! eigen-systems under non-Lebesgue measures, explicit RKHS norms,
//! maximum-entropy Gaussian processes with their Markov recursion, the
//! tridiagonal inverse of DC kernel matrices, and the regularized
//! least-squares impulse-response estimator built on top of them.

pub mod error;
pub mod estimator;
pub mod grid;
pub mod kernelmat;
pub mod kernels;
pub mod maxent;
pub mod mercer;
pub mod quadrature;
pub mod rkhs;

pub use error::{Error, Result};
pub use estimator::{Dataset, EstimateResult, Input};
pub use grid::{GridDomain, TimeGrid};
pub use kernelmat::{KernelMatrix, Tridiagonal};
pub use kernels::{eval_kernel, verify_stable_spline_identity, KernelKind, KernelSpec};
pub use maxent::{GaussianSample, MarkovFactors};
pub use mercer::{EigenSystem, Measure};
pub use quadrature::QuadratureConfig;
pub use rkhs::{FunctionHandle, MembershipVerdict};
