//! Ground-truth realization engine: a quasi-static three-phase
//! backward/forward sweep power flow run every five minutes with
//! realized load and PV, the grid-forming storage unit as slack, SOC
//! and fuel ledgers, and microgrid shutdown/restart handling.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;

use crate::forecast::Profile;
use crate::grid::{GenId, GenKind, LoadClass, NetworkModel, NgId, NodeId, Phase, ZoneId};
use crate::params::StageParams;
use crate::stages::nrt::clpu_multiplier;
use crate::stages::rt::{RtDispatch, DK_HOURS};

const SWEEP_TOL: f64 = 1e-8;
const SWEEP_MAX_ITERS: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("power flow diverged after {0} iterations (voltage collapse)")]
    Diverged(usize),
    #[error("slack node {0} is not energized")]
    SlackNotEnergized(NodeId),
}

/// Result of one converged sweep.
#[derive(Debug, Clone)]
pub struct SweepResult {
    /// Complex per-unit voltages on energized node-phases.
    pub voltages: BTreeMap<(NodeId, Phase), Complex64>,
    /// Slack (grid-forming) injection per phase, kW and kvar.
    pub slack_p_kw: [f64; 3],
    pub slack_q_kvar: [f64; 3],
    /// Series losses summed over edges (kW), computed edge-wise.
    pub losses_kw: f64,
    pub iterations: usize,
}

/// Backward/forward sweep on the energized radial subgraph. Injections
/// are per node-phase in kW/kvar, generation positive, excluding the
/// slack unit whose output is returned.
pub fn sweep_power_flow(
    model: &NetworkModel,
    energized: &BTreeSet<NgId>,
    injections: &BTreeMap<(NodeId, Phase), (f64, f64)>,
    slack_node: NodeId,
    slack_v_pu: f64,
) -> Result<SweepResult, SimError> {
    if !energized.contains(&model.ng_of(slack_node)) {
        return Err(SimError::SlackNotEnergized(slack_node));
    }
    let s1ph = model.base.s_base_1ph_kw();

    // tree structure rooted at the slack
    let edges: Vec<&crate::grid::Edge> = model.energized_closed_edges(energized).collect();
    let mut adj: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
    for (i, e) in edges.iter().enumerate() {
        adj.entry(e.from).or_default().push(i);
        adj.entry(e.to).or_default().push(i);
    }
    let mut order: Vec<NodeId> = vec![slack_node];
    let mut parent_edge: BTreeMap<NodeId, (usize, NodeId)> = BTreeMap::new();
    let mut seen: BTreeSet<NodeId> = BTreeSet::new();
    seen.insert(slack_node);
    let mut qi = 0;
    while qi < order.len() {
        let cur = order[qi];
        qi += 1;
        if let Some(inc) = adj.get(&cur) {
            for &ei in inc {
                let e = edges[ei];
                let other = if e.from == cur { e.to } else { e.from };
                if seen.insert(other) {
                    parent_edge.insert(other, (ei, cur));
                    order.push(other);
                }
            }
        }
    }

    // reference voltages with the standard 120-degree rotation
    let angles = [0.0, -120.0_f64.to_radians(), 120.0_f64.to_radians()];
    let mut v: BTreeMap<(NodeId, Phase), Complex64> = BTreeMap::new();
    for &n in &order {
        for p in model.node(n).phases.iter() {
            v.insert(
                (n, p),
                Complex64::from_polar(slack_v_pu, angles[p.index()]),
            );
        }
    }

    let spu = |n: NodeId, p: Phase| -> Complex64 {
        let (pk, qk) = injections.get(&(n, p)).copied().unwrap_or((0.0, 0.0));
        Complex64::new(pk / s1ph, qk / s1ph)
    };

    let mut edge_i: Vec<[Complex64; 3]> = vec![[Complex64::new(0.0, 0.0); 3]; edges.len()];
    let mut iterations = 0;
    loop {
        iterations += 1;
        if iterations > SWEEP_MAX_ITERS {
            return Err(SimError::Diverged(SWEEP_MAX_ITERS));
        }
        // backward: accumulate demand currents up the tree
        let mut node_i: BTreeMap<NodeId, [Complex64; 3]> = BTreeMap::new();
        for &n in &order {
            let mut acc = [Complex64::new(0.0, 0.0); 3];
            for p in model.node(n).phases.iter() {
                let vv = v[&(n, p)];
                // demand current: negative injection over voltage, conjugated
                acc[p.index()] = (-spu(n, p) / vv).conj();
            }
            node_i.insert(n, acc);
        }
        for ei in edge_i.iter_mut() {
            *ei = [Complex64::new(0.0, 0.0); 3];
        }
        for &n in order.iter().rev() {
            if let Some(&(ei, _)) = parent_edge.get(&n) {
                // subtree currents were already accumulated into this node
                let flow = node_i[&n];
                for p in 0..3 {
                    edge_i[ei][p] += flow[p];
                }
                let parent = if edges[ei].from == n {
                    edges[ei].to
                } else {
                    edges[ei].from
                };
                let up = node_i.get_mut(&parent).unwrap();
                for p in 0..3 {
                    up[p] += flow[p];
                }
            }
        }
        // forward: push voltage drops down the tree
        let mut max_dv = 0.0_f64;
        for &n in &order {
            if let Some(&(ei, parent)) = parent_edge.get(&n) {
                let e = edges[ei];
                for p in model.node(n).phases.iter() {
                    if !e.phases.contains(p) {
                        continue;
                    }
                    let mut drop = Complex64::new(0.0, 0.0);
                    for q in e.phases.iter() {
                        let z = Complex64::new(
                            e.r_pu[p.index()][q.index()],
                            e.x_pu[p.index()][q.index()],
                        );
                        drop += z * edge_i[ei][q.index()];
                    }
                    let vp = v[&(parent, p)];
                    let newv = vp - drop;
                    let old = v[&(n, p)];
                    max_dv = max_dv.max((newv - old).norm());
                    v.insert((n, p), newv);
                }
            }
        }
        if max_dv < SWEEP_TOL {
            break;
        }
    }

    // slack injection balances its node: local demand plus root edge flows
    let mut slack_p = [0.0; 3];
    let mut slack_q = [0.0; 3];
    for p in model.node(slack_node).phases.iter() {
        let vv = v[&(slack_node, p)];
        let mut i_out = Complex64::new(0.0, 0.0);
        if let Some(inc) = adj.get(&slack_node) {
            for &ei in inc {
                let e = edges[ei];
                // edge current is oriented toward the slack's child subtree
                let child = if parent_edge.get(&e.to).map(|x| x.0) == Some(ei) {
                    e.to
                } else {
                    e.from
                };
                if child != slack_node && e.phases.contains(p) {
                    i_out += edge_i[ei][p.index()];
                }
            }
        }
        // supply the local (negative) injection too
        let local = spu(slack_node, p);
        let s = vv * i_out.conj() - local;
        slack_p[p.index()] = s.re * s1ph;
        slack_q[p.index()] = s.im * s1ph;
    }

    // edge-wise series losses (independent of the balance identity)
    let mut losses = 0.0;
    for (ei, e) in edges.iter().enumerate() {
        for p in e.phases.iter() {
            let from_key = (e.from, p);
            let to_key = (e.to, p);
            if let (Some(vf), Some(vt)) = (v.get(&from_key), v.get(&to_key)) {
                // current sign follows the tree orientation
                let i = edge_i[ei][p.index()];
                let dv = if parent_edge.get(&e.to).map(|x| x.0) == Some(ei) {
                    vf - vt
                } else {
                    vt - vf
                };
                losses += (dv * i.conj()).re * s1ph;
            }
        }
    }

    Ok(SweepResult {
        voltages: v,
        slack_p_kw: slack_p,
        slack_q_kvar: slack_q,
        losses_kw: losses,
        iterations,
    })
}

/// Realized system state carried across steps.
#[derive(Debug, Clone)]
pub struct SimState {
    pub soc_pct: BTreeMap<GenId, f64>,
    pub fuel_l: BTreeMap<GenId, f64>,
    pub cmg_on: bool,
    /// Consecutive hours each zone-phase has been without supply.
    pub disconnected_hours: BTreeMap<(ZoneId, Phase), f64>,
    /// Realized zone-phase connectivity of the current hour.
    pub connectivity: BTreeMap<(ZoneId, Phase), bool>,
    /// Realized diesel output of the previous hour (for ramps).
    pub dg_last_kw: BTreeMap<GenId, f64>,
    pub es_last_kw: BTreeMap<GenId, [f64; 3]>,
}

impl SimState {
    pub fn initial(model: &NetworkModel) -> SimState {
        let mut soc = BTreeMap::new();
        let mut fuel = BTreeMap::new();
        let mut dg_last = BTreeMap::new();
        for g in &model.gens {
            if let Some(es) = &g.es {
                soc.insert(g.id, es.soc_init);
            }
            if let Some(dg) = &g.dg {
                fuel.insert(g.id, dg.fuel_init_l);
                dg_last.insert(g.id, 0.0);
            }
        }
        let mut disconnected = BTreeMap::new();
        for z in &model.zones {
            for p in z.phases.iter() {
                disconnected.insert((z.id, p), 0.0);
            }
        }
        SimState {
            soc_pct: soc,
            fuel_l: fuel,
            cmg_on: true,
            disconnected_hours: disconnected,
            connectivity: BTreeMap::new(),
            dg_last_kw: dg_last,
            es_last_kw: BTreeMap::new(),
        }
    }

    pub fn gf_soc(&self, model: &NetworkModel) -> f64 {
        self.soc_pct[&model.grid_forming_id()]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimEvent {
    CmgOff,
    CmgRestart,
    GfDepleted,
    PartialService { shed: Vec<(ZoneId, Phase)> },
    VoltageCollapse,
}

/// One 5-minute realization record.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub hour: usize,
    pub slot: usize,
    pub step: usize,
    pub cmg_on: bool,
    pub served_cl_kw: f64,
    pub served_ncl_kw: f64,
    pub demand_cl_kw: f64,
    pub demand_ncl_kw: f64,
    pub clpu_served_kw: f64,
    pub pv_avail_kw: f64,
    pub pv_used_kw: f64,
    pub phase_served_kw: [f64; 3],
    pub gf_p_kw: [f64; 3],
    pub gf_soc_pct: f64,
    pub soc_pct: BTreeMap<GenId, f64>,
    pub fuel_l: BTreeMap<GenId, f64>,
    pub losses_kw: f64,
    pub v_min_pu: f64,
    pub v_max_pu: f64,
    /// Max |V_sweep^2 - V_linear| across energized node-phases (pu^2).
    pub lin_err_pu2: f64,
    pub balance_residual_kw: f64,
    pub events: Vec<SimEvent>,
}

/// Execute one step: realized loads and PV against the dispatched
/// setpoints, grid-forming residual via the sweep, ledgers updated.
pub fn step(
    state: &mut SimState,
    model: &NetworkModel,
    params: &StageParams,
    dispatch: &RtDispatch,
    realization: &Profile,
    hour: usize,
    slot: usize,
    step_idx: usize,
) -> Result<StepRecord, SimError> {
    let k = slot * crate::stages::rt::STEPS_PER_SLOT + step_idx;
    let gf = model.grid_forming_id();
    let gf_gen = model.grid_forming_gen();
    let gf_es = gf_gen.es.as_ref().unwrap();

    if !state.cmg_on {
        // while off, the co-located PV recharges the grid-forming unit
        let mut recharge_kw = 0.0;
        for g in &model.gens {
            if g.kind == GenKind::PvControllable && g.node == gf_gen.node {
                recharge_kw += realization.pv_avail(g.id, k).min(gf_gen.s_kva);
            }
        }
        let soc = state.soc_pct.get_mut(&gf).unwrap();
        *soc = (*soc + recharge_kw * DK_HOURS / gf_es.e_kwh * 100.0).min(gf_es.soc_op_max);
        let gf_soc = *soc;
        // every zone sits unserved
        let demand = class_demand(model, realization, k, params, state);
        return Ok(StepRecord {
            hour,
            slot,
            step: step_idx,
            cmg_on: false,
            served_cl_kw: 0.0,
            served_ncl_kw: 0.0,
            demand_cl_kw: demand.0,
            demand_ncl_kw: demand.1,
            clpu_served_kw: 0.0,
            pv_avail_kw: total_pv_avail(model, realization, k),
            pv_used_kw: recharge_kw,
            phase_served_kw: [0.0; 3],
            gf_p_kw: [-recharge_kw, 0.0, 0.0],
            gf_soc_pct: gf_soc,
            soc_pct: state.soc_pct.clone(),
            fuel_l: state.fuel_l.clone(),
            losses_kw: 0.0,
            v_min_pu: f64::NAN,
            v_max_pu: f64::NAN,
            lin_err_pu2: 0.0,
            balance_residual_kw: 0.0,
            events: Vec::new(),
        });
    }

    let energized: BTreeSet<NgId> = dispatch_energized(model, dispatch);
    let mut events = Vec::new();

    // connectivity from the hourly decisions, with emergency shedding when
    // the residual exceeds the grid-forming rating
    let mut connectivity: BTreeMap<(ZoneId, Phase), bool> = BTreeMap::new();
    for z in &model.zones {
        for p in z.phases.iter() {
            let on = dispatch
                .served_kw
                .keys()
                .any(|(n, ph)| *ph == p && model.node(*n).zone == z.id)
                && energized.contains(&model.ng_of(model.nodes[z.node_idxs[0]].id));
            connectivity.insert((z.id, p), on);
        }
    }

    let mut shed: Vec<(ZoneId, Phase)> = Vec::new();
    let record = loop {
        // realized injections under the current connectivity
        let mut injections: BTreeMap<(NodeId, Phase), (f64, f64)> = BTreeMap::new();
        let mut clpu_served = 0.0;
        let mut phase_served = [0.0; 3];
        for node in &model.nodes {
            if !node.has_load() || !energized.contains(&model.ng_of(node.id)) {
                continue;
            }
            for p in node.phases.iter() {
                if !connectivity.get(&(node.zone, p)).copied().unwrap_or(false) {
                    continue;
                }
                let disc = state
                    .disconnected_hours
                    .get(&(node.zone, p))
                    .copied()
                    .unwrap_or(0.0);
                let mult = clpu_multiplier(params, disc);
                let (pl, ql) = realization.node_load(node.id, p, k);
                let pl_full = pl * mult;
                let e = injections.entry((node.id, p)).or_insert((0.0, 0.0));
                e.0 -= pl_full;
                e.1 -= ql * mult;
                clpu_served += (mult - 1.0) * pl;
                phase_served[p.index()] += pl_full;
            }
        }
        let mut pv_used = 0.0;
        for g in &model.gens {
            if !energized.contains(&model.ng_of(g.node)) {
                continue;
            }
            match g.kind {
                GenKind::PvControllable => {
                    let avail = realization.pv_avail(g.id, k);
                    let nph = g.phases.count() as f64;
                    for p in g.phases.iter() {
                        let set = dispatch
                            .pv_p_kw
                            .get(&g.id)
                            .map(|a| a[p.index()])
                            .unwrap_or(0.0);
                        let actual = set.min(avail / nph);
                        let q = dispatch
                            .pv_q_kvar
                            .get(&g.id)
                            .map(|a| a[p.index()])
                            .unwrap_or(0.0);
                        let e = injections.entry((g.node, p)).or_insert((0.0, 0.0));
                        e.0 += actual;
                        e.1 += q;
                        pv_used += actual;
                    }
                }
                GenKind::PvBtm => {
                    let node = model.node(g.node);
                    let p = g.phases.iter().next().unwrap();
                    let on = if node.has_load() {
                        connectivity.get(&(node.zone, p)).copied().unwrap_or(false)
                    } else {
                        true
                    };
                    if on {
                        let avail = realization.pv_avail(g.id, k);
                        let e = injections.entry((g.node, p)).or_insert((0.0, 0.0));
                        e.0 += avail;
                        pv_used += avail;
                    }
                }
                GenKind::Diesel => {
                    for p in g.phases.iter() {
                        let pset = dispatch
                            .dg_p_kw
                            .get(&g.id)
                            .map(|a| a[p.index()])
                            .unwrap_or(0.0);
                        let qset = dispatch
                            .dg_q_kvar
                            .get(&g.id)
                            .map(|a| a[p.index()])
                            .unwrap_or(0.0);
                        let e = injections.entry((g.node, p)).or_insert((0.0, 0.0));
                        e.0 += pset;
                        e.1 += qset;
                    }
                }
                GenKind::Storage => {
                    if g.id == gf {
                        continue; // slack
                    }
                    for p in g.phases.iter() {
                        let pset = dispatch
                            .es_p_kw
                            .get(&g.id)
                            .map(|a| a[p.index()])
                            .unwrap_or(0.0);
                        let qset = dispatch
                            .es_q_kvar
                            .get(&g.id)
                            .map(|a| a[p.index()])
                            .unwrap_or(0.0);
                        let e = injections.entry((g.node, p)).or_insert((0.0, 0.0));
                        e.0 += pset;
                        e.1 += qset;
                    }
                }
            }
        }

        let sweep = match sweep_power_flow(
            model,
            &energized,
            &injections,
            gf_gen.node,
            model.base.slack_v_pu,
        ) {
            Ok(s) => s,
            Err(SimError::Diverged(_)) => {
                events.push(SimEvent::VoltageCollapse);
                return Err(SimError::Diverged(SWEEP_MAX_ITERS));
            }
            Err(e) => return Err(e),
        };

        // grid-forming rating check; shed lowest-priority zones first
        let slack_total: f64 = sweep.slack_p_kw.iter().sum();
        let over_per_phase = sweep
            .slack_p_kw
            .iter()
            .any(|p| p.abs() > gf_gen.s_kva / 3.0 + 1e-6);
        if (slack_total.abs() > gf_gen.s_kva + 1e-6 || over_per_phase) && !all_shed(&connectivity)
        {
            if let Some(victim) = cheapest_connected_zone(model, params, state, &connectivity) {
                connectivity.insert(victim, false);
                shed.push(victim);
                continue;
            }
        }

        if !shed.is_empty() {
            events.push(SimEvent::PartialService { shed: shed.clone() });
        }

        // ledgers
        let dk = DK_HOURS;
        for g in &model.gens {
            match g.kind {
                GenKind::Storage => {
                    let es = g.es.as_ref().unwrap();
                    let soc = state.soc_pct.get_mut(&g.id).unwrap();
                    let p_total: f64 = if g.id == gf {
                        slack_total
                    } else if energized.contains(&model.ng_of(g.node)) {
                        dispatch
                            .es_p_kw
                            .get(&g.id)
                            .map(|a| a.iter().sum())
                            .unwrap_or(0.0)
                    } else {
                        0.0
                    };
                    *soc = (*soc - p_total * dk / es.e_kwh * 100.0).clamp(0.0, 100.0);
                }
                GenKind::Diesel => {
                    if !energized.contains(&model.ng_of(g.node)) {
                        continue;
                    }
                    let dgp = g.dg.as_ref().unwrap();
                    let p_total: f64 = dispatch
                        .dg_p_kw
                        .get(&g.id)
                        .map(|a| a.iter().sum())
                        .unwrap_or(0.0);
                    let fuel = state.fuel_l.get_mut(&g.id).unwrap();
                    let burn =
                        (dgp.alpha_l_per_kwh * p_total + dgp.beta_l_per_kwh * dgp.p_max_kw) * dk;
                    *fuel = (*fuel - burn).max(0.0);
                }
                _ => {}
            }
        }

        let gf_soc = state.soc_pct[&gf];
        if gf_soc <= gf_es.soc_op_min {
            events.push(SimEvent::GfDepleted);
        }

        // audits
        let mut vmin = f64::INFINITY;
        let mut vmax = 0.0_f64;
        for vv in sweep.voltages.values() {
            vmin = vmin.min(vv.norm());
            vmax = vmax.max(vv.norm());
        }
        let mut lin_err = 0.0_f64;
        for (key, vv) in &sweep.voltages {
            if let Some(vlin) = dispatch.voltage_sq.get(key) {
                lin_err = lin_err.max((vv.norm_sqr() - vlin).abs());
            }
        }
        let total_gen: f64 = injections.values().map(|(p, _)| p.max(0.0)).sum::<f64>()
            + slack_total.max(0.0);
        let total_neg: f64 = injections
            .values()
            .map(|(p, _)| p.min(0.0))
            .sum::<f64>()
            + slack_total.min(0.0);
        let residual = total_gen + total_neg - sweep.losses_kw;

        let demand = class_demand(model, realization, k, params, state);
        let (served_cl, served_ncl) = recount_class(model, &connectivity, realization, k, params, state);
        break StepRecord {
            hour,
            slot,
            step: step_idx,
            cmg_on: true,
            served_cl_kw: served_cl,
            served_ncl_kw: served_ncl,
            demand_cl_kw: demand.0,
            demand_ncl_kw: demand.1,
            clpu_served_kw: clpu_served,
            pv_avail_kw: total_pv_avail(model, realization, k),
            pv_used_kw: pv_used,
            phase_served_kw: phase_served,
            gf_p_kw: sweep.slack_p_kw,
            gf_soc_pct: state.soc_pct[&gf],
            soc_pct: state.soc_pct.clone(),
            fuel_l: state.fuel_l.clone(),
            losses_kw: sweep.losses_kw,
            v_min_pu: vmin,
            v_max_pu: vmax,
            lin_err_pu2: lin_err,
            balance_residual_kw: residual,
            events: events.clone(),
        };
    };

    state.connectivity = connectivity;
    state.es_last_kw = dispatch.es_p_kw.clone();
    Ok(record)
}

fn all_shed(conn: &BTreeMap<(ZoneId, Phase), bool>) -> bool {
    conn.values().all(|v| !v)
}

/// Lowest effective priority (omega1 * omega2 proxy of 1), ties by zone
/// id then phase: deterministic emergency shedding order.
fn cheapest_connected_zone(
    model: &NetworkModel,
    _params: &StageParams,
    _state: &SimState,
    conn: &BTreeMap<(ZoneId, Phase), bool>,
) -> Option<(ZoneId, Phase)> {
    let mut best: Option<((ZoneId, Phase), f64)> = None;
    for ((z, p), on) in conn {
        if !on {
            continue;
        }
        let zone = model.zone(*z);
        let w = model.nodes[zone.node_idxs[0]].omega1;
        match best {
            Some((_, bw)) if bw <= w => {}
            _ => best = Some(((*z, *p), w)),
        }
    }
    best.map(|(k, _)| k)
}

fn total_pv_avail(model: &NetworkModel, realization: &Profile, k: usize) -> f64 {
    model
        .gens
        .iter()
        .filter(|g| matches!(g.kind, GenKind::PvControllable | GenKind::PvBtm))
        .map(|g| realization.pv_avail(g.id, k))
        .sum()
}

fn class_demand(
    model: &NetworkModel,
    realization: &Profile,
    k: usize,
    _params: &StageParams,
    _state: &SimState,
) -> (f64, f64) {
    let mut cl = 0.0;
    let mut ncl = 0.0;
    for node in &model.nodes {
        for p in node.phases.iter() {
            let (pl, _) = realization.node_load(node.id, p, k);
            match node.class {
                LoadClass::Critical => cl += pl,
                LoadClass::NonCritical => ncl += pl,
                LoadClass::None => {}
            }
        }
    }
    (cl, ncl)
}

fn recount_class(
    model: &NetworkModel,
    conn: &BTreeMap<(ZoneId, Phase), bool>,
    realization: &Profile,
    k: usize,
    _params: &StageParams,
    _state: &SimState,
) -> (f64, f64) {
    let mut cl = 0.0;
    let mut ncl = 0.0;
    for node in &model.nodes {
        if !node.has_load() {
            continue;
        }
        for p in node.phases.iter() {
            if conn.get(&(node.zone, p)).copied().unwrap_or(false) {
                let (pl, _) = realization.node_load(node.id, p, k);
                match node.class {
                    LoadClass::Critical => cl += pl,
                    LoadClass::NonCritical => ncl += pl,
                    LoadClass::None => {}
                }
            }
        }
    }
    (cl, ncl)
}

fn dispatch_energized(model: &NetworkModel, _dispatch: &RtDispatch) -> BTreeSet<NgId> {
    // the dispatch inherits the hourly energized set; recover it from the
    // voltage keys (every energized node carries voltage variables)
    let mut set = BTreeSet::new();
    for (n, _) in _dispatch.voltage_sq.keys() {
        set.insert(model.ng_of(*n));
    }
    set
}

/// Hour-boundary shutdown rule: below the threshold at the boundary the
/// microgrid turns off for the next hour.
pub fn shutdown_due(state: &SimState, model: &NetworkModel, params: &StageParams) -> bool {
    state.gf_soc(model) < params.shutdown_soc_pct
}

/// Restart recommendation: forecasted co-located PV over the next hour
/// covers the energy to clear the threshold plus hysteresis margin.
pub fn restart_recommended(
    state: &SimState,
    model: &NetworkModel,
    params: &StageParams,
    forecast_hourly: &Profile,
    hour: usize,
) -> bool {
    let gf = model.grid_forming_gen();
    let es = gf.es.as_ref().unwrap();
    let soc = state.gf_soc(model);
    if soc > params.shutdown_soc_pct {
        return true;
    }
    let target = params.shutdown_soc_pct + params.restart_margin_pct;
    let needed_kwh = (target - soc) / 100.0 * es.e_kwh;
    let mut pv_kwh = 0.0;
    for g in &model.gens {
        if g.kind == GenKind::PvControllable && g.node == gf.node {
            if hour < forecast_hourly.steps {
                pv_kwh += forecast_hourly.pv_avail(g.id, hour).min(gf.s_kva);
            }
        }
    }
    pv_kwh >= needed_kwh && pv_kwh > 0.0
}

/// Advance hour-boundary bookkeeping: disconnection durations and hourly
/// connectivity reset.
pub fn hour_rollover(state: &mut SimState, model: &NetworkModel) {
    for z in &model.zones {
        for p in z.phases.iter() {
            let on = state.cmg_on && state.connectivity.get(&(z.id, p)).copied().unwrap_or(false);
            let d = state.disconnected_hours.entry((z.id, p)).or_insert(0.0);
            if on {
                *d = 0.0;
            } else {
                *d += 1.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::forecast::{synthesize_base, Resolution};
    use crate::grid::load_network;
    use crate::params::StageParams;
    use crate::stages::nrt::{build_sensitivities, solve_nrt, NrtInputs};
    use crate::stages::rt::{solve_rt, RtInputs};
    use cmg_opt::default_registry;

    fn all_ngs(model: &NetworkModel) -> BTreeSet<NgId> {
        model.ngs.iter().map(|g| g.id).collect()
    }

    #[test]
    fn zero_injection_flat_voltage() {
        let model = fixtures::two_node();
        let inj = BTreeMap::new();
        let out = sweep_power_flow(&model, &all_ngs(&model), &inj, NodeId(1), 1.04).unwrap();
        for v in out.voltages.values() {
            assert!((v.norm() - 1.04).abs() < 1e-12);
        }
        assert!(out.slack_p_kw.iter().all(|p| p.abs() < 1e-9));
        assert!(out.losses_kw.abs() < 1e-12);
    }

    #[test]
    fn two_bus_matches_quadratic_formula() {
        // single-phase feeder, z = 0.05 + j0.02 pu, constant-power load
        // 0.01 + j0 pu at the receiving end
        let text = r#"
schema_version = 1

[base]
kva = 1000.0
kv_ll = 4.16

[[node]]
id = 1
phases = "a"

[[node]]
id = 2
phases = "a"
load_class = "ncl"
peak_kw = [10.0]

[[edge]]
id = 1
from = 1
to = 2
phases = "a"
r = [[0.86528]]
x = [[0.346112]]

[[generator]]
id = 1
node = 1
kind = "es"
phases = "a"
s_kva = 100.0
e_kwh = 200.0
grid_forming = true

[[node_group]]
id = 1
nodes = [1, 2]
"#;
        let model = load_network(text).unwrap();
        let s1ph = model.base.s_base_1ph_kw();
        let p_pu = 0.01;
        let mut inj = BTreeMap::new();
        inj.insert((NodeId(2), Phase::A), (-p_pu * s1ph, 0.0));
        let vs = 1.04;
        let out = sweep_power_flow(&model, &all_ngs(&model), &inj, NodeId(1), vs).unwrap();
        let got = out.voltages[&(NodeId(2), Phase::A)].norm();

        // closed-form two-bus oracle: |V|^4 + (2(rP+xQ) - |Vs|^2)|V|^2 +
        // (r^2+x^2)(P^2+Q^2) = 0, upper root
        let (r, x) = (0.05, 0.02);
        let (p, q) = (p_pu, 0.0);
        let b = 2.0 * (r * p + x * q) - vs * vs;
        let c = (r * r + x * x) * (p * p + q * q);
        let v2 = (-b + (b * b - 4.0 * c).sqrt()) / 2.0;
        let expect = v2.sqrt();
        assert!(
            (got - expect).abs() < 1e-8,
            "sweep {} vs closed form {}",
            got,
            expect
        );
        // slack covers load plus series loss
        let i2 = (p * p + q * q) / v2;
        let loss_pu = r * i2;
        assert!((out.slack_p_kw[0] / s1ph - (p + loss_pu)).abs() < 1e-8);
        assert!((out.losses_kw / s1ph - loss_pu).abs() < 1e-8);
    }

    #[test]
    fn linearized_voltage_close_to_sweep_at_moderate_loading() {
        // same two-bus case: squared-voltage gap between the linear model
        // and the sweep stays within 1e-3 pu at this loading
        let model = fixtures::two_node();
        let s1ph = model.base.s_base_1ph_kw();
        let mut inj = BTreeMap::new();
        for p in Phase::ALL {
            inj.insert((NodeId(2), p), (-0.01 * s1ph, -0.003 * s1ph));
        }
        let out = sweep_power_flow(&model, &all_ngs(&model), &inj, NodeId(1), 1.04).unwrap();
        let sens = build_sensitivities(&model).unwrap();
        let a = &sens.a[&crate::grid::EdgeId(1)];
        let b = &sens.b[&crate::grid::EdgeId(1)];
        for p in Phase::ALL {
            let mut v2_lin = 1.04 * 1.04;
            for q in Phase::ALL {
                v2_lin += a[p.index()][q.index()] * 0.01 + b[p.index()][q.index()] * 0.003;
            }
            let v2_sweep = out.voltages[&(NodeId(2), p)].norm_sqr();
            assert!(
                (v2_sweep - v2_lin).abs() <= 1e-3,
                "phase {}: sweep {} vs lin {}",
                p,
                v2_sweep,
                v2_lin
            );
        }
    }

    fn run_one_step(
        start_hour: u32,
    ) -> (StepRecord, SimState, crate::grid::NetworkModel) {
        let model = fixtures::two_node();
        let params = StageParams::default();
        let sens = build_sensitivities(&model).unwrap();
        let hourly = synthesize_base(&model, start_hour, 2);
        let fc = hourly.resample(Resolution::QuarterHour).slice_hours(0, 1);
        let rt_fc = hourly.resample(Resolution::FiveMin).slice_hours(0, 1);
        let eds = crate::stages::testutil::synthetic_eds_plan(&model, 2, 10_000.0);
        let reg = default_registry();
        let empty_soc = BTreeMap::new();
        let empty_fuel = BTreeMap::new();
        let empty_dgl = BTreeMap::new();
        let om2 = BTreeMap::new();
        let msd = BTreeSet::new();
        let disc = BTreeMap::new();
        let nrt_inputs = NrtInputs {
            hour: 0,
            forecast: &fc,
            eds: &eds,
            recourse: None,
            msd: &msd,
            omega2: &om2,
            soc_init: &empty_soc,
            fuel_init: &empty_fuel,
            dg_last_kw: &empty_dgl,
            disconnected_hours: &disc,
        };
        let nrt = solve_nrt(&model, &sens, &params, &nrt_inputs, &reg).unwrap();
        let prev = BTreeMap::new();
        let rt_inputs = RtInputs {
            slot: 0,
            step: 0,
            rt_forecast: &rt_fc,
            nrt: &nrt,
            soc_init: &empty_soc,
            es_prev_kw: &prev,
            disconnected_hours: &disc,
        };
        let dispatch = solve_rt(&model, &sens, &params, &rt_inputs, &reg).unwrap();
        let mut state = SimState::initial(&model);
        let rec = step(
            &mut state, &model, &params, &dispatch, &rt_fc, 0, 0, 0,
        )
        .unwrap();
        (rec, state, model)
    }

    #[test]
    fn zero_error_fixed_point_matches_prediction() {
        // realization equals the dispatch forecast: the grid-forming power
        // differs from the lossless prediction only by series losses
        let (rec, _state, _model) = run_one_step(19);
        assert!(rec.cmg_on);
        let gf_total: f64 = rec.gf_p_kw.iter().sum();
        let served = rec.served_cl_kw + rec.clpu_served_kw;
        assert!(rec.served_ncl_kw.abs() < 1e-12);
        // slack carries load plus losses net of dispatched PV
        assert!(
            (gf_total - (served + rec.losses_kw - rec.pv_used_kw)).abs() < 1e-5,
            "gf {} vs served {} + losses {} - pv {}",
            gf_total,
            served,
            rec.losses_kw,
            rec.pv_used_kw
        );
        assert!(rec.balance_residual_kw.abs() < model_base_tol());
    }

    fn model_base_tol() -> f64 {
        // 1e-6 per-unit on the fixture base
        1e-6 * (1000.0 / 3.0)
    }

    #[test]
    fn energy_conservation_each_step() {
        for hour in [0, 7, 12, 19] {
            let (rec, _, _) = run_one_step(hour);
            assert!(
                rec.balance_residual_kw.abs() <= model_base_tol(),
                "residual {} at start hour {}",
                rec.balance_residual_kw,
                hour
            );
        }
    }

    #[test]
    fn uniform_load_error_lands_on_grid_forming_unit() {
        // +10% realized load over the dispatch basis: the extra lands on
        // the slack; SOC drop over an hour = extra / capacity
        let model = fixtures::two_node();
        let params = StageParams::default();
        let sens = build_sensitivities(&model).unwrap();
        let hourly = synthesize_base(&model, 19, 2);
        let fc = hourly.resample(Resolution::QuarterHour).slice_hours(0, 1);
        let rt_fc = hourly.resample(Resolution::FiveMin).slice_hours(0, 1);
        let mut real = rt_fc.clone();
        for s in real.load.values_mut() {
            for v in s.p_kw.iter_mut() {
                *v *= 1.10;
            }
        }
        let eds = crate::stages::testutil::synthetic_eds_plan(&model, 2, 10_000.0);
        let reg = default_registry();
        let (e1, e2, e3, om2, msd, disc) = (
            BTreeMap::new(),
            BTreeMap::new(),
            BTreeMap::new(),
            BTreeMap::new(),
            BTreeSet::new(),
            BTreeMap::new(),
        );
        let nrt = solve_nrt(
            &model,
            &sens,
            &params,
            &NrtInputs {
                hour: 0,
                forecast: &fc,
                eds: &eds,
                recourse: None,
                msd: &msd,
                omega2: &om2,
                soc_init: &e1,
                fuel_init: &e2,
                dg_last_kw: &e3,
                disconnected_hours: &disc,
            },
            &reg,
        )
        .unwrap();
        let prev = BTreeMap::new();
        let dispatch = solve_rt(
            &model,
            &sens,
            &params,
            &RtInputs {
                slot: 0,
                step: 0,
                rt_forecast: &rt_fc,
                nrt: &nrt,
                soc_init: &e1,
                es_prev_kw: &prev,
                disconnected_hours: &disc,
            },
            &reg,
        )
        .unwrap();
        let mut state = SimState::initial(&model);
        let rec = step(&mut state, &model, &params, &dispatch, &real, 0, 0, 0).unwrap();
        let predicted: f64 = dispatch.gf_p_kw.iter().sum();
        let realized: f64 = rec.gf_p_kw.iter().sum();
        let base_load: f64 = dispatch.served_kw.values().sum();
        // extra discharge is close to 10% of the served base (losses small)
        assert!(
            (realized - predicted - 0.10 * base_load).abs() < 0.10 * base_load * 0.2 + 1.0,
            "predicted {} realized {} base {}",
            predicted,
            realized,
            base_load
        );
    }

    #[test]
    fn shutdown_threshold_rule() {
        let model = fixtures::two_node();
        let params = StageParams::default();
        let mut state = SimState::initial(&model);
        state
            .soc_pct
            .insert(model.grid_forming_id(), 19.5);
        assert!(shutdown_due(&state, &model, &params));
        state.soc_pct.insert(model.grid_forming_id(), 20.5);
        assert!(!shutdown_due(&state, &model, &params));
    }

    #[test]
    fn restart_needs_colocated_pv_energy() {
        let model = fixtures::two_node();
        let params = StageParams::default();
        let mut state = SimState::initial(&model);
        state.cmg_on = false;
        state.soc_pct.insert(model.grid_forming_id(), 18.0);
        // night: no PV, no restart
        let night = synthesize_base(&model, 0, 4);
        assert!(!restart_recommended(&state, &model, &params, &night, 0));
        // midday: 120 kVA co-located plant covers the 4% * 800 kWh = 32 kWh
        let day = synthesize_base(&model, 12, 4);
        assert!(restart_recommended(&state, &model, &params, &day, 0));
    }

    #[test]
    fn cmg_off_step_recharges_from_colocated_pv() {
        let model = fixtures::two_node();
        let params = StageParams::default();
        let sens = build_sensitivities(&model).unwrap();
        let _ = sens;
        let mut state = SimState::initial(&model);
        state.cmg_on = false;
        state.soc_pct.insert(model.grid_forming_id(), 18.0);
        let rt_fc = synthesize_base(&model, 12, 1).resample(Resolution::FiveMin);
        // a dispatch is still required structurally; reuse a trivial one
        let (_, _, _) = run_one_step(12);
        let dispatch = trivial_dispatch();
        let rec = step(&mut state, &model, &params, &dispatch, &rt_fc, 0, 0, 0).unwrap();
        assert!(!rec.cmg_on);
        assert_eq!(rec.served_cl_kw + rec.served_ncl_kw, 0.0);
        assert!(rec.gf_soc_pct > 18.0, "pv recharge must raise SOC");
    }

    fn trivial_dispatch() -> RtDispatch {
        RtDispatch {
            hour: 0,
            slot: 0,
            step: 0,
            pv_p_kw: BTreeMap::new(),
            pv_q_kvar: BTreeMap::new(),
            es_p_kw: BTreeMap::new(),
            es_q_kvar: BTreeMap::new(),
            dg_p_kw: BTreeMap::new(),
            dg_q_kvar: BTreeMap::new(),
            served_kw: BTreeMap::new(),
            served_kvar: BTreeMap::new(),
            btm_kw: BTreeMap::new(),
            gf_p_kw: [0.0; 3],
            gf_q_kvar: [0.0; 3],
            gf_soc_end: 0.0,
            soc_end: BTreeMap::new(),
            voltage_sq: BTreeMap::new(),
            curtailed_kw: 0.0,
            objective: 0.0,
            status: cmg_opt::SolStatus::Optimal,
            solve_time: std::time::Duration::from_secs(0),
            dg_relaxed: false,
        }
    }

    #[test]
    fn deterministic_repeat() {
        let (a, _, _) = run_one_step(19);
        let (b, _, _) = run_one_step(19);
        assert_eq!(a.gf_p_kw, b.gf_p_kw);
        assert_eq!(a.losses_kw, b.losses_kw);
        assert_eq!(a.gf_soc_pct, b.gf_soc_pct);
    }
}
