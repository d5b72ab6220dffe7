//! Occlusion-aware target tracking on the 2D plane.
//!
//! The library plans robot trajectories that keep a moving target in view:
//! candidate polynomial trajectories are sampled from a base distribution (or
//! a small trained decoder), projected onto a parameterized feasible set by a
//! differentiable alternating-minimization optimizer, ranked by smoothness
//! and line-of-sight occlusion cost, and executed in a receding-horizon
//! simulation loop with benchmark metrics.
//!
//! Module map:
//!
//! - [`basis`] — polynomial trajectory bases and evaluation
//! - [`constraints`] — boundary conditions, polar norm-bound reformulation,
//!   violation reports
//! - [`projection`] — the alternating-minimization projection with a
//!   prefactorized KKT solve
//! - [`unroll`] — reverse-mode gradients through the unrolled projection
//! - [`policy`] — samplers, occlusion cost, rank-and-select planning
//! - [`learner`] — demonstration generation and decoder training
//! - [`sim`] — 2D world, synthetic LiDAR, episodes and metrics
//! - [`scenario`] — scenario/log/weights file formats
//! - [`cli`] — the command-line entry points

pub mod basis;
pub mod cli;
pub mod constraints;
pub mod error;
pub mod geom;
pub mod learner;
pub mod policy;
pub mod projection;
pub mod scenario;
pub mod sim;
pub mod synth;
pub mod unroll;

pub use error::{Error, Result};

// The guide's code blocks compile and run with the test suite so the book
// can never drift from the library.
#[cfg(doctest)]
mod book {
    macro_rules! page {
        ($name:ident, $path:literal) => {
            #[doc = include_str!($path)]
            mod $name {}
        };
    }
    page!(introduction, "../../../book/src/introduction.md");
    page!(trajectories, "../../../book/src/trajectories.md");
    page!(feasible_set, "../../../book/src/feasible-set.md");
    page!(projection, "../../../book/src/projection.md");
    page!(gradients, "../../../book/src/gradients.md");
    page!(planning, "../../../book/src/planning.md");
    page!(simulation, "../../../book/src/simulation.md");
    page!(training, "../../../book/src/training.md");
    page!(cli, "../../../book/src/cli.md");
}
