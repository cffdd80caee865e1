//! Metapopulation epidemic simulation driven by mobility models learned from
//! call records, with operator-side mitigation strategies.
//!
//! The pipeline has five stages:
//!
//! * [`trace`]: call-record traces, filtering and train/test splits;
//! * [`mobility`]: home inference and smoothed mobility models;
//! * [`communities`]: the mobility graph and its Louvain communities;
//! * [`epidemic`] and [`strategies`]: the stochastic SIR engine and the
//!   measures that act on it;
//! * [`metrics`]: outbreak metrics over single runs and ensembles.
//!
//! [`scenario`] ties them together behind a declarative configuration file.

pub mod categorical;
pub mod communities;
pub mod epidemic;
mod error;
pub mod metrics;
pub mod mobility;
pub mod scenario;
pub mod seed;
pub mod strategies;
pub mod synth;
pub mod time;
pub mod trace;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/traces.md")]
    mod traces {}
    #[doc = include_str!("../../../book/src/mobility.md")]
    mod mobility {}
    #[doc = include_str!("../../../book/src/communities.md")]
    mod communities {}
    #[doc = include_str!("../../../book/src/epidemic.md")]
    mod epidemic {}
    #[doc = include_str!("../../../book/src/strategies.md")]
    mod strategies {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
}
