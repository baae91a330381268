//! Integral operators on unbounded domains.
//!
//! The crate applies and solves Fredholm, Hammerstein, Urysohn and Volterra
//! integral equations on `[0, inf)`, `R` and `R^n` (n <= 3), with values in
//! `R^d`. Integrals over the unbounded domain are truncated at a radius
//! chosen from declared kernel tail bounds, and kernel hypotheses (uniform
//! integral bounds, radial tail conditions, asymptotic independence of the
//! Urysohn kernel from its function argument) are checked numerically.
//! Families of sampled functions can be certified against the extension
//! condition that makes a bounded equicontinuous family relatively compact
//! in the sup norm over an unbounded domain.

pub mod compactness;
pub mod domain;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod operators;
pub mod quadrature;
pub mod sampled;
pub mod solvers;

pub use domain::{Domain, DomainKind, Grid, VectorValue};
pub use error::{Error, Result};
pub use kernels::{LinearKernel, NonlinearityF, UrysohnKernel};
pub use quadrature::{find_truncation_radius, refine_until, QuadraturePlan};
pub use sampled::{Field, FnField, SampledFunction};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
