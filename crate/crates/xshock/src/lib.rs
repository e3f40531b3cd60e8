//! Implicit XDG shock tracking.
//!
//! Discretizes 2D (and space-time 1D) conservation laws on a fixed Cartesian
//! background grid. Solution discontinuities are represented by the zero
//! iso-contour of a spline level set that cuts background cells into
//! sub-domain cut-cells. The level-set coefficients are treated as additional
//! unknowns and a constrained least-squares problem
//!
//! ```text
//!     min ½‖R(u, phi)‖²   subject to   r(u, phi) = 0
//! ```
//!
//! is solved with an SQP method, where `r` is the DG residual tested with
//! degree-P functions (the constraint) and `R` the enriched residual tested
//! with degree P+1 functions (the objective). At solutions the interface is
//! aligned with the discontinuity and the discrete conservation law holds.
//!
//! The `examples/` directory contains one runnable example per capability;
//! the `xshock` binary drives full cases (`run`) and the built-in property
//! suites (`verify`).

pub mod cases;
pub mod cli;
pub mod cutcell;
pub mod gauss;
pub mod levelset;
pub mod mesh;
pub mod physics;
pub mod residual;
pub mod sqp;
pub mod xdgspace;
