//! Zeroing control barrier functions and min-norm safety controllers.
//!
//! The crate is organised bottom-up:
//!
//! * [`barrier`] holds the certificate types (barrier, Lyapunov, class-K
//!   gains), control-affine systems and their Lie derivatives.
//! * [`qp`] solves the pointwise min-norm programs: the barrier-only program
//!   in closed form, the barrier + Lyapunov program through the two-constraint
//!   Gram-matrix formulas, and a weighted active-set solver used as an oracle.
//! * [`sim`] integrates closed loops with sample-and-hold RK4 and checks
//!   forward invariance, level-set decrease, and empirical Lipschitz bounds.
//! * [`acc`] is the adaptive cruise control model with its tradeoff sweep.

pub mod acc;
pub mod barrier;
mod error;
pub mod qp;
pub mod sim;

pub use error::{Error, Result};
