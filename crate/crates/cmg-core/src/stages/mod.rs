//! The three scheduling stages on their coupled timescales.

pub mod eds;
pub mod nrt;
pub mod rt;

#[cfg(test)]
pub(crate) mod testutil;
