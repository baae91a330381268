//! Nyström solves, invariant-ball radii and damped Picard iteration.

mod nystrom;
mod picard;
mod radius;

pub use nystrom::{
    default_probe_grid, solve_fredholm_2nd_kind, BoundInterpolant, NystromInterpolant,
    NystromReport, NystromSolution, NystromSystem, CONDITION_LIMIT,
};
pub use picard::{
    picard_solve, BallViolation, FixedPointReport, PicardOutcome, DEFAULT_ALPHA,
    INCREASES_BEFORE_HALVING, MIN_ALPHA,
};
pub use radius::{
    hammerstein_radius, urysohn_radius, HammersteinRadius, RatioPoint, UrysohnRadius, ZERO_MAP_NOTE,
};
