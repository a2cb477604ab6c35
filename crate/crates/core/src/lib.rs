//! Optimal consumption under recursive utility with Hindy–Huang–Kreps local
//! substitution: utility evaluation along consumption plans, utility
//! gradients, Kuhn–Tucker audits, closed-form Epstein–Zin plans, a general
//! multiplier-shooting constructor, value iteration and brute-force oracles.
//!
//! All numerical code is generic over a [`Real`] scalar; the `f64`
//! aliases below are what most callers want.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod constructor;
pub mod dp;
pub mod error;
pub mod ez;
pub mod kkt;
pub mod market;
pub mod numerics;
pub mod oracle;
pub mod paths;
pub mod preferences;
pub mod scalar;

pub use constructor::{solve as construct, TripleSolution};
pub use dp::{iterate_to_convergence, DpOptions, DpSolution};
pub use error::{Error, Result};
pub use ez::{solve_ez, EzCase, EzSolution};
pub use kkt::{verify_kkt, KktReport, KktTolerances};
pub use market::{ConsumptionPlan, MarketParams, PathSample};
pub use paths::{evaluate, satisfaction, solve_utility, utility0, utility_gradient, Evaluation, GradientPath, UtilityPath};
pub use preferences::{
    ez_felicity, l_operator, power_felicity, time_additive_felicity, Aggregator, EzParams, FelicityChoice,
    FelicitySpec,
};
pub use scalar::Real;

pub type Market = MarketParams<f64>;
pub type Plan = ConsumptionPlan<f64>;
pub type Sample = PathSample<f64>;
pub type Felicity = FelicitySpec<f64>;
pub type Ez = EzParams<f64>;
