//! Bundled feeder descriptions used by tests, examples, and the docs.

use crate::grid::{load_network, NetworkModel};

/// Desk-scale 13-node feeder: 3 node groups, 2 diesel units, 3 storage
/// units (one grid-forming), 2 controllable PV plants, rooftop PV in the
/// 3-15 kW range.
pub const DESK13_TOML: &str = include_str!("../fixtures/desk13.toml");

/// Minimal valid feeder: two nodes, one line, one load, one grid-forming
/// storage unit.
pub const TWO_NODE_TOML: &str = include_str!("../fixtures/two_node.toml");

/// Small three-group feeder for connectivity tests.
pub const THREE_NG_TOML: &str = include_str!("../fixtures/three_ng.toml");

pub fn desk13() -> NetworkModel {
    load_network(DESK13_TOML).expect("bundled desk13 fixture is valid")
}

pub fn two_node() -> NetworkModel {
    load_network(TWO_NODE_TOML).expect("bundled two_node fixture is valid")
}

pub fn three_ng() -> NetworkModel {
    load_network(THREE_NG_TOML).expect("bundled three_ng fixture is valid")
}
