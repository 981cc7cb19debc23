//! Treatment-effect estimation on networks of interfering units.
//!
//! Units sit on an undirected interference network. Each unit carries a
//! confounder, a binary treatment, and an outcome; treatments and confounders
//! of nearby units spill over into a unit's own treatment choice and outcome
//! through user-declared feature maps. The crate provides:
//!
//! * random-graph generators and edge-list I/O ([`graph`]),
//! * spillover feature maps with explicit footprints, and the dependency
//!   graph they induce ([`spillover`]),
//! * a structural simulator with per-stage seeded randomness ([`simulate`]),
//! * an in-crate random-forest regression learner ([`learn`]),
//! * the dependency-aware cross-fitted doubly robust estimator with a
//!   network-adjusted variance and repetition aggregation ([`estimate`]),
//! * global treatment-effect estimation under a chosen intervention
//!   ([`gate`]), naive baselines ([`baselines`]), and a simulation benchmark
//!   harness ([`bench`]).

pub mod baselines;
pub mod bench;
pub mod error;
pub mod estimate;
pub mod gate;
pub mod graph;
pub mod learn;
pub mod seeds;
pub mod simulate;
pub mod spillover;
pub mod stats;

pub use error::{Error, Result};
