//! Shared builders for stage tests.

use std::collections::BTreeMap;
use std::time::Duration;

use cmg_opt::SolStatus;

use crate::grid::NetworkModel;
use crate::stages::eds::EdsPlan;

/// Hand-built referral plan: everything connected, zero diesel
/// references, initial SOC references, a flat expected allocation.
pub(crate) fn synthetic_eds_plan(model: &NetworkModel, hours: usize, expected_kw: f64) -> EdsPlan {
    let theta = model
        .ngs
        .iter()
        .map(|g| (g.id, vec![true; hours]))
        .collect();
    let mut dg_p = BTreeMap::new();
    let mut dg_q = BTreeMap::new();
    let mut exp_soc = BTreeMap::new();
    for g in &model.gens {
        if g.dg.is_some() {
            dg_p.insert(g.id, vec![0.0; hours]);
            dg_q.insert(g.id, vec![0.0; hours]);
        }
        if let Some(es) = &g.es {
            exp_soc.insert(g.id, vec![es.soc_init; hours]);
        }
    }
    EdsPlan {
        start_hour: 0,
        horizon: hours,
        theta,
        dg_p_kw: dg_p,
        dg_q_kvar: dg_q,
        expected_soc: exp_soc,
        expected_load_kw: vec![expected_kw; hours],
        expected_load_by_node: BTreeMap::new(),
        scenario_load_kw: vec![vec![expected_kw; hours]],
        scenario_es_kw: BTreeMap::new(),
        scenario_soc: BTreeMap::new(),
        phi: BTreeMap::new(),
        objective: 0.0,
        status: SolStatus::Optimal,
        solve_time: Duration::from_secs(0),
        relaxed_cl_must_supply: false,
        relaxed_dg_minimum: false,
    }
}
