//! Scheduling, dispatch, and realization engine for an islanded
//! community microgrid that restores load across neighboring feeder
//! sections during extended outages.
//!
//! The pipeline runs on three timescales: an hourly stochastic
//! extended-duration schedule over the remaining outage (resource
//! rationing and dynamic boundary decisions), a 15-minute deterministic
//! network-constrained update with demand response, and a 5-minute
//! dispatch stage, closed by a quasi-static three-phase power-flow
//! simulator standing in for field measurements. A delayed-recourse
//! term measured off the grid-forming storage unit feeds back into the
//! 15-minute stage to compensate accumulated forecast-error impact.

pub mod fixtures;
pub mod forecast;
pub mod grid;
pub mod harness;
pub mod metrics;
pub mod params;
pub mod recourse;
pub mod sim;
pub mod stages;
