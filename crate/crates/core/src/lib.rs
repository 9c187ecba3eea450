//! Learning-from-demonstration stack for 2D social navigation.
//!
//! A social-force controller generates demonstrations ([`sim`], [`dataset`]),
//! conditional neural processes learn global paths and local velocity fields
//! from them ([`cnp`], [`planners`]), and [`eval`] compares them with a plain
//! feed-forward baseline in closed loop.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cnp;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod geom;
pub mod nn;
pub mod planners;
pub mod sim;

pub use cnp::{CnpModel, GaussianPrediction, TrainConfig};
pub use dataset::{ContextPoint, Dataset, DemoState, Demonstration, Layout, NormStats, SimConfig};
pub use error::{Error, Result};
pub use eval::{Metrics, Report};
pub use geom::{Bounds, Vec2};
pub use planners::{BaselineConfig, FfnnModel, GlobalPlan};
pub use sim::{Obstacle, RobotState, SamplingConfig, Scenario, SfmParams};
