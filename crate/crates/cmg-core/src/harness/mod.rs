//! Pipeline orchestration, run ledger, experiment sweeps.

pub mod config;
pub mod ledger;
pub mod runner;
pub mod sweep;
pub mod theorems;
