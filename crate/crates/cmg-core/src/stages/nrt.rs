//! Hourly deterministic schedule update on 15-minute slots: unbalanced
//! linearized power flow, per-phase demand-response selection with
//! minimum service duration and supply-duration equity, cold-load
//! pickup, coupling to the hourly referral plan, and the soft
//! delayed-recourse cut.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;

use cmg_opt::{
    add_hexagon, add_squared_deviation, symmetric_breakpoints, LinExpr, Program, Quadrants, RowOp,
    Sense, SolStatus, SolveOptions, SolverRegistry, VarId,
};

use crate::forecast::Profile;
use crate::grid::{
    EdgeId, GenId, GenKind, LoadClass, NetworkModel, NgId, NodeId, Phase, ZoneId,
};
use crate::params::StageParams;
use crate::recourse::RecourseTerm;
use crate::stages::eds::EdsPlan;

pub const SLOTS_PER_HOUR: usize = 4;
pub const DH_HOURS: f64 = 0.25;

#[derive(Debug, thiserror::Error)]
pub enum NrtError {
    #[error("referral plan does not cover hour {0}")]
    PlanMissingHour(usize),
    #[error("program construction: {0}")]
    Build(#[from] cmg_opt::OptError),
    #[error("solver: {0}")]
    Solve(#[from] cmg_opt::SolveError),
    #[error("infeasible even with relaxed equity and voltage band; microgrid shutdown recommended")]
    CmgOffRecommended,
    #[error("missing phase-pair impedance on edge {0}")]
    MissingImpedance(EdgeId),
}

/// Per-edge 3x3 voltage-sensitivity matrices of the linearized unbalanced
/// branch-flow model (per-unit).
#[derive(Debug, Clone)]
pub struct LineSensitivity {
    pub a: BTreeMap<EdgeId, [[f64; 3]; 3]>,
    pub b: BTreeMap<EdgeId, [[f64; 3]; 3]>,
}

/// Build the sensitivity matrices from per-unit phase-pair impedances.
/// Diagonals are -2r / -2x; off-diagonals alternate r -+ sqrt(3) x and
/// x +- sqrt(3) r around the phase rotation.
pub fn build_sensitivities(model: &NetworkModel) -> Result<LineSensitivity, NrtError> {
    let rt3 = 3.0_f64.sqrt();
    let mut a_map = BTreeMap::new();
    let mut b_map = BTreeMap::new();
    for e in &model.edges {
        let mut a = [[0.0; 3]; 3];
        let mut b = [[0.0; 3]; 3];
        let phases: Vec<Phase> = e.phases.iter().collect();
        for &pi in &phases {
            for &pj in &phases {
                let i = pi.index();
                let j = pj.index();
                let r = e.r_pu[i][j];
                let x = e.x_pu[i][j];
                if i == j {
                    if r == 0.0 && x == 0.0 && e.phases.count() == 3 {
                        return Err(NrtError::MissingImpedance(e.id));
                    }
                    a[i][j] = -2.0 * r;
                    b[i][j] = -2.0 * x;
                } else {
                    // +1 step around the rotation (a->b->c->a) carries
                    // -sqrt3 x in A and +sqrt3 r in B; the -1 step flips both
                    let fwd = (j + 3 - i) % 3 == 1;
                    if fwd {
                        a[i][j] = r - rt3 * x;
                        b[i][j] = x + rt3 * r;
                    } else {
                        a[i][j] = r + rt3 * x;
                        b[i][j] = x - rt3 * r;
                    }
                }
            }
        }
        a_map.insert(e.id, a);
        b_map.insert(e.id, b);
    }
    Ok(LineSensitivity { a: a_map, b: b_map })
}

/// Cold-load pickup multiplier after a disconnection of the given length:
/// saturating exponential, applied to the pickup-hour forecast and fully
/// decayed afterwards.
pub fn clpu_multiplier(params: &StageParams, hours_disconnected: f64) -> f64 {
    if hours_disconnected <= 0.0 {
        return 1.0;
    }
    1.0 + params.clpu_k * (1.0 - (-params.clpu_lambda * hours_disconnected).exp())
}

/// Rolling-window supply-duration equity weights: zones served less in
/// the recent window weigh more; critical loads stay at 1 so their
/// type-priority ordering is never disturbed.
#[derive(Debug, Clone)]
pub struct EquityTracker {
    window: usize,
    kappa: f64,
    history: BTreeMap<(ZoneId, Phase), Vec<bool>>,
}

impl EquityTracker {
    pub fn new(params: &StageParams) -> Self {
        EquityTracker {
            window: params.equity_window.max(1),
            kappa: params.equity_kappa,
            history: BTreeMap::new(),
        }
    }

    /// Record the last hour's connectivity.
    pub fn update(&mut self, connectivity: &BTreeMap<(ZoneId, Phase), bool>) {
        for (key, on) in connectivity {
            let h = self.history.entry(*key).or_default();
            h.push(*on);
            if h.len() > self.window {
                h.remove(0);
            }
        }
    }

    pub fn omega2(&self, zone: ZoneId, phase: Phase, class: LoadClass) -> f64 {
        if class == LoadClass::Critical {
            return 1.0;
        }
        let Some(h) = self.history.get(&(zone, phase)) else {
            return 1.0 + self.kappa * (1.0 - 0.0);
        };
        let d = h.iter().filter(|&&b| b).count() as f64;
        1.0 + self.kappa * (1.0 - d / self.window as f64)
    }

    pub fn weights(&self, model: &NetworkModel) -> BTreeMap<(ZoneId, Phase), f64> {
        let mut out = BTreeMap::new();
        for z in &model.zones {
            for p in z.phases.iter() {
                out.insert((z.id, p), self.omega2(z.id, p, z.class));
            }
        }
        out
    }
}

/// Zone-phases that must remain connected until their minimum service
/// duration completes: connected last hour with a run shorter than the
/// required duration.
pub fn msd_set(
    history: &BTreeMap<(ZoneId, Phase), Vec<bool>>,
    msd_hours: usize,
) -> BTreeSet<(ZoneId, Phase)> {
    let mut out = BTreeSet::new();
    for (key, h) in history {
        let Some(&last) = h.last() else { continue };
        if !last {
            continue;
        }
        let run = h.iter().rev().take_while(|&&b| b).count();
        if run < msd_hours {
            out.insert(*key);
        }
    }
    out
}

/// Inputs assembled by the harness for one hourly solve.
pub struct NrtInputs<'a> {
    pub hour: usize,
    /// Quarter-hour forecast covering exactly this hour (4 slots).
    pub forecast: &'a Profile,
    pub eds: &'a EdsPlan,
    pub recourse: Option<&'a RecourseTerm>,
    pub msd: &'a BTreeSet<(ZoneId, Phase)>,
    pub omega2: &'a BTreeMap<(ZoneId, Phase), f64>,
    pub soc_init: &'a BTreeMap<GenId, f64>,
    pub fuel_init: &'a BTreeMap<GenId, f64>,
    pub dg_last_kw: &'a BTreeMap<GenId, f64>,
    /// Hours each zone-phase has been disconnected (drives cold load).
    pub disconnected_hours: &'a BTreeMap<(ZoneId, Phase), f64>,
}

/// Result of the hourly network-constrained update.
#[derive(Debug, Clone)]
pub struct NrtPlan {
    pub hour: usize,
    pub energized: BTreeSet<NgId>,
    /// Hour-constant per-zone-per-phase connectivity.
    pub x: BTreeMap<(ZoneId, Phase), bool>,
    /// Served load per node-phase-slot (kW), cold load included.
    pub served_kw: BTreeMap<(NodeId, Phase), [f64; SLOTS_PER_HOUR]>,
    pub served_kvar: BTreeMap<(NodeId, Phase), [f64; SLOTS_PER_HOUR]>,
    /// Squared per-unit voltages per node-phase-slot.
    pub voltage_sq: BTreeMap<(NodeId, Phase), [f64; SLOTS_PER_HOUR]>,
    /// Hourly diesel setpoints per phase (kW / kvar).
    pub dg_p_kw: BTreeMap<GenId, [f64; 3]>,
    pub dg_q_kvar: BTreeMap<GenId, [f64; 3]>,
    /// Per-slot storage and PV setpoints per phase.
    pub es_p_kw: BTreeMap<GenId, [[f64; 3]; SLOTS_PER_HOUR]>,
    pub es_q_kvar: BTreeMap<GenId, [[f64; 3]; SLOTS_PER_HOUR]>,
    pub pv_p_kw: BTreeMap<GenId, [[f64; 3]; SLOTS_PER_HOUR]>,
    pub pv_q_kvar: BTreeMap<GenId, [[f64; 3]; SLOTS_PER_HOUR]>,
    /// Storage SOC trajectory (percent) at slot ends.
    pub soc_pct: BTreeMap<GenId, [f64; SLOTS_PER_HOUR]>,
    pub fuel_l: BTreeMap<GenId, [f64; SLOTS_PER_HOUR]>,
    /// Cold-load pickup added per node-phase at this hour (kW at slot 0
    /// scale; applied to all four slots).
    pub clpu_kw: BTreeMap<(NodeId, Phase), [f64; SLOTS_PER_HOUR]>,
    /// Network phase-imbalance variable values per slot.
    pub delta_d_kw: [[f64; 3]; SLOTS_PER_HOUR],
    /// Recourse-cut slack used per slot (kW).
    pub cut_slack_kw: [f64; SLOTS_PER_HOUR],
    pub cut_rhs_kw: Option<f64>,
    pub objective: f64,
    pub status: SolStatus,
    pub solve_time: Duration,
    pub equity_dropped: bool,
    pub voltage_relaxed: bool,
}

impl NrtPlan {
    /// Planned end-of-hour SOC of a storage unit.
    pub fn soc_end(&self, gen: GenId) -> f64 {
        self.soc_pct[&gen][SLOTS_PER_HOUR - 1]
    }

    pub fn total_served_kw(&self, slot: usize) -> f64 {
        self.served_kw.values().map(|s| s[slot]).sum()
    }
}

struct NrtIndex {
    energized: BTreeSet<NgId>,
    x: BTreeMap<(ZoneId, Phase), VarId>,
    v: BTreeMap<(NodeId, Phase), [VarId; SLOTS_PER_HOUR]>,
    dg_p: BTreeMap<GenId, [VarId; 3]>,
    dg_q: BTreeMap<GenId, [VarId; 3]>,
    es_p: BTreeMap<GenId, [[VarId; 3]; SLOTS_PER_HOUR]>,
    es_q: BTreeMap<GenId, [[VarId; 3]; SLOTS_PER_HOUR]>,
    pv_p: BTreeMap<GenId, [[VarId; 3]; SLOTS_PER_HOUR]>,
    pv_q: BTreeMap<GenId, [[VarId; 3]; SLOTS_PER_HOUR]>,
    soc: BTreeMap<GenId, [VarId; SLOTS_PER_HOUR]>,
    fuel: BTreeMap<GenId, [VarId; SLOTS_PER_HOUR]>,
    delta_d: [[Option<VarId>; 3]; SLOTS_PER_HOUR],
    cut_slack: [Option<VarId>; SLOTS_PER_HOUR],
    cut_rhs: Option<f64>,
    load_expr_kw: BTreeMap<(NodeId, Phase), [f64; SLOTS_PER_HOUR]>,
    load_expr_kvar: BTreeMap<(NodeId, Phase), [f64; SLOTS_PER_HOUR]>,
    clpu_kw: BTreeMap<(NodeId, Phase), [f64; SLOTS_PER_HOUR]>,
}

pub struct NrtBuild {
    pub program: Program,
    idx: NrtIndex,
}

/// Assemble the hourly network program for the energized region declared
/// by the referral plan.
pub fn build_nrt(
    model: &NetworkModel,
    sens: &LineSensitivity,
    params: &StageParams,
    inputs: &NrtInputs,
) -> Result<NrtBuild, NrtError> {
    build_nrt_inner(model, sens, params, inputs, params.equity_enabled, 0.0)
}

fn build_nrt_inner(
    model: &NetworkModel,
    sens: &LineSensitivity,
    params: &StageParams,
    inputs: &NrtInputs,
    equity_on: bool,
    voltage_relax: f64,
) -> Result<NrtBuild, NrtError> {
    let hour = inputs.hour;
    if hour < inputs.eds.start_hour || hour >= inputs.eds.start_hour + inputs.eds.horizon {
        return Err(NrtError::PlanMissingHour(hour));
    }
    let energized: BTreeSet<NgId> = model
        .ngs
        .iter()
        .filter(|g| inputs.eds.theta_at(g.id, hour))
        .map(|g| g.id)
        .collect();
    let in_set = |n: NodeId| energized.contains(&model.ng_of(n));

    let vmin2 = (params.v_min_pu - voltage_relax).powi(2);
    let vmax2 = (params.v_max_pu + voltage_relax).powi(2);
    let s1ph = model.base.s_base_1ph_kw();

    let mut prog = Program::new(Sense::Maximize);

    // zone connectivity binaries, hour-constant, with service-duration pins
    let mut x: BTreeMap<(ZoneId, Phase), VarId> = BTreeMap::new();
    for z in &model.zones {
        let any_node = model.nodes[z.node_idxs[0]].id;
        if !in_set(any_node) {
            continue;
        }
        for p in z.phases.iter() {
            let v = prog.add_binary(format!("x_z{}_{}", z.id, p), 0.0);
            if inputs.msd.contains(&(z.id, p)) {
                prog.fix_var(v, 1.0);
            }
            x.insert((z.id, p), v);
        }
    }

    // per-node-phase-slot load magnitudes (forecast plus cold load)
    let mut load_kw: BTreeMap<(NodeId, Phase), [f64; SLOTS_PER_HOUR]> = BTreeMap::new();
    let mut load_kvar: BTreeMap<(NodeId, Phase), [f64; SLOTS_PER_HOUR]> = BTreeMap::new();
    let mut clpu_kw: BTreeMap<(NodeId, Phase), [f64; SLOTS_PER_HOUR]> = BTreeMap::new();
    for node in &model.nodes {
        if !node.has_load() || !in_set(node.id) {
            continue;
        }
        for p in node.phases.iter() {
            let disc = inputs
                .disconnected_hours
                .get(&(node.zone, p))
                .copied()
                .unwrap_or(0.0);
            let mult = clpu_multiplier(params, disc);
            let mut pk = [0.0; SLOTS_PER_HOUR];
            let mut qk = [0.0; SLOTS_PER_HOUR];
            let mut ck = [0.0; SLOTS_PER_HOUR];
            for h in 0..SLOTS_PER_HOUR {
                let (pf, qf) = inputs.forecast.node_load(node.id, p, h);
                ck[h] = (mult - 1.0) * pf;
                pk[h] = pf + ck[h];
                qk[h] = qf * mult;
            }
            load_kw.insert((node.id, p), pk);
            load_kvar.insert((node.id, p), qk);
            clpu_kw.insert((node.id, p), ck);
        }
    }

    // voltages: squared per-unit, slack pinned at the grid-forming node
    let slack_node = model.grid_forming_gen().node;
    let slack_v2 = model.base.slack_v_pu * model.base.slack_v_pu;
    let mut v: BTreeMap<(NodeId, Phase), [VarId; SLOTS_PER_HOUR]> = BTreeMap::new();
    for node in &model.nodes {
        if !in_set(node.id) {
            continue;
        }
        for p in node.phases.iter() {
            let mut arr = [VarId::INVALID; SLOTS_PER_HOUR];
            for (h, slot) in arr.iter_mut().enumerate() {
                let var = prog.add_continuous(
                    format!("v_n{}_{}_h{}", node.id, p, h),
                    vmin2,
                    vmax2,
                    0.0,
                );
                if node.id == slack_node {
                    prog.fix_var(var, slack_v2);
                }
                *slot = var;
            }
            v.insert((node.id, p), arr);
        }
    }

    // edge orientation variables: flows, direction binaries, slack terms
    struct EdgeVars {
        edge: EdgeId,
        from: NodeId,
        to: NodeId,
        phases: Vec<Phase>,
        // [phase][slot]: (p_fwd, q_fwd, p_rev, q_rev, dir bin, zeta_fwd, zeta_rev)
        pf: BTreeMap<(Phase, usize), (VarId, VarId, VarId, VarId, Option<VarId>, VarId, VarId)>,
    }
    let closed_ids: BTreeSet<EdgeId> = model
        .energized_closed_edges(&energized)
        .map(|e| e.id)
        .collect();
    let mut edge_vars: Vec<EdgeVars> = Vec::new();
    let feeder_peak = model.feeder_peak_kw();
    for e in &model.edges {
        if !(in_set(e.from) && in_set(e.to)) {
            continue;
        }
        let closed = closed_ids.contains(&e.id);
        let p_cap = e.p_limit_kw.unwrap_or(params.line_limit_factor * feeder_peak / 3.0);
        let q_cap = e
            .q_limit_kvar
            .unwrap_or(params.line_limit_factor * feeder_peak / 3.0);
        let mut ev = EdgeVars {
            edge: e.id,
            from: e.from,
            to: e.to,
            phases: e.phases.iter().collect(),
            pf: BTreeMap::new(),
        };
        for p in e.phases.iter() {
            for h in 0..SLOTS_PER_HOUR {
                let pf = prog.add_continuous(format!("pf_e{}_{}_h{}", e.id, p, h), 0.0, p_cap, 0.0);
                let qf = prog.add_continuous(format!("qf_e{}_{}_h{}", e.id, p, h), 0.0, q_cap, 0.0);
                let pr = prog.add_continuous(format!("pr_e{}_{}_h{}", e.id, p, h), 0.0, p_cap, 0.0);
                let qr = prog.add_continuous(format!("qr_e{}_{}_h{}", e.id, p, h), 0.0, q_cap, 0.0);
                let zf = prog.add_continuous(
                    format!("zf_e{}_{}_h{}", e.id, p, h),
                    -vmax2,
                    vmax2,
                    0.0,
                );
                let zr = prog.add_continuous(
                    format!("zr_e{}_{}_h{}", e.id, p, h),
                    -vmax2,
                    vmax2,
                    0.0,
                );
                let dir = if closed {
                    // one direction active per closed edge-phase; the
                    // direction indicator is rho_fwd, rho_rev = 1 - rho_fwd
                    let d = prog.add_binary(format!("rho_e{}_{}_h{}", e.id, p, h), 0.0);
                    // flow caps tied to the active direction
                    let mut cap_f = LinExpr::var(pf);
                    cap_f.add_term(d, -p_cap);
                    prog.add_row(format!("pcap_e{}_{}_h{}", e.id, p, h), cap_f, RowOp::Le, 0.0)?;
                    let mut cap_fq = LinExpr::var(qf);
                    cap_fq.add_term(d, -q_cap);
                    prog.add_row(format!("qcap_e{}_{}_h{}", e.id, p, h), cap_fq, RowOp::Le, 0.0)?;
                    let mut cap_r = LinExpr::var(pr);
                    cap_r.add_term(d, p_cap);
                    prog.add_row(
                        format!("pcapr_e{}_{}_h{}", e.id, p, h),
                        cap_r,
                        RowOp::Le,
                        p_cap,
                    )?;
                    let mut cap_rq = LinExpr::var(qr);
                    cap_rq.add_term(d, q_cap);
                    prog.add_row(
                        format!("qcapr_e{}_{}_h{}", e.id, p, h),
                        cap_rq,
                        RowOp::Le,
                        q_cap,
                    )?;
                    // voltage-slack gating: zeta vanishes on the active
                    // orientation
                    let mut zfu = LinExpr::var(zf);
                    zfu.add_term(d, vmax2);
                    prog.add_row(
                        format!("zfu_e{}_{}_h{}", e.id, p, h),
                        zfu,
                        RowOp::Le,
                        vmax2,
                    )?;
                    let mut zfl = LinExpr::var(zf);
                    zfl.add_term(d, -vmax2);
                    prog.add_row(
                        format!("zfl_e{}_{}_h{}", e.id, p, h),
                        zfl,
                        RowOp::Ge,
                        -vmax2,
                    )?;
                    let mut zru = LinExpr::var(zr);
                    zru.add_term(d, -vmax2);
                    prog.add_row(format!("zru_e{}_{}_h{}", e.id, p, h), zru, RowOp::Le, 0.0)?;
                    let mut zrl = LinExpr::var(zr);
                    zrl.add_term(d, vmax2);
                    prog.add_row(format!("zrl_e{}_{}_h{}", e.id, p, h), zrl, RowOp::Ge, 0.0)?;
                    Some(d)
                } else {
                    // open edge: both orientations de-energized, zero flow,
                    // slack free within the voltage band
                    prog.fix_var(pf, 0.0);
                    prog.fix_var(qf, 0.0);
                    prog.fix_var(pr, 0.0);
                    prog.fix_var(qr, 0.0);
                    None
                };
                ev.pf.insert((p, h), (pf, qf, pr, qr, dir, zf, zr));
            }
        }
        edge_vars.push(ev);
    }

    // generator variables
    let mut dg_p: BTreeMap<GenId, [VarId; 3]> = BTreeMap::new();
    let mut dg_q: BTreeMap<GenId, [VarId; 3]> = BTreeMap::new();
    let mut es_p: BTreeMap<GenId, [[VarId; 3]; SLOTS_PER_HOUR]> = BTreeMap::new();
    let mut es_q: BTreeMap<GenId, [[VarId; 3]; SLOTS_PER_HOUR]> = BTreeMap::new();
    let mut pv_p: BTreeMap<GenId, [[VarId; 3]; SLOTS_PER_HOUR]> = BTreeMap::new();
    let mut pv_q: BTreeMap<GenId, [[VarId; 3]; SLOTS_PER_HOUR]> = BTreeMap::new();
    let mut soc: BTreeMap<GenId, [VarId; SLOTS_PER_HOUR]> = BTreeMap::new();
    let mut fuel: BTreeMap<GenId, [VarId; SLOTS_PER_HOUR]> = BTreeMap::new();

    for g in &model.gens {
        if !in_set(g.node) {
            continue;
        }
        let nph = g.phases.count() as f64;
        match g.kind {
            GenKind::Diesel => {
                let dg = g.dg.as_ref().unwrap();
                let mut parr = [VarId::INVALID; 3];
                let mut qarr = [VarId::INVALID; 3];
                let per_ph_max = dg.p_max_kw / nph;
                let per_ph_min = dg.p_min_kw / nph;
                let per_ph_qmax = dg.q_max_kvar / nph;
                for p in g.phases.iter() {
                    parr[p.index()] = prog.add_continuous(
                        format!("dgp_g{}_{}", g.id, p),
                        params.gamma * per_ph_min,
                        per_ph_max / params.gamma,
                        0.0,
                    );
                    qarr[p.index()] = prog.add_continuous(
                        format!("dgq_g{}_{}", g.id, p),
                        0.0,
                        per_ph_qmax / params.gamma,
                        0.0,
                    );
                }
                // apparent-power polygon on the phase totals
                let mut psum = LinExpr::new();
                let mut qsum = LinExpr::new();
                for p in g.phases.iter() {
                    psum.add_term(parr[p.index()], 1.0);
                    qsum.add_term(qarr[p.index()], 1.0);
                }
                add_hexagon(
                    &mut prog,
                    &psum,
                    &qsum,
                    g.s_kva,
                    params.tau,
                    Quadrants::Q1,
                    &format!("dg_g{}", g.id),
                )?;
                // per-unit phase imbalance within limit (circular shift)
                let delta_cap = params.dg_imbalance_frac * per_ph_max;
                let phases: Vec<Phase> = g.phases.iter().collect();
                if phases.len() == 3 {
                    for k in 0..3 {
                        let p0 = phases[k].index();
                        let p1 = phases[(k + 1) % 3].index();
                        let mut d = LinExpr::var(parr[p0]);
                        d.add_term(parr[p1], -1.0);
                        prog.add_row(
                            format!("dgimb_g{}_{}u", g.id, k),
                            d.clone(),
                            RowOp::Le,
                            delta_cap,
                        )?;
                        prog.add_row(format!("dgimb_g{}_{}l", g.id, k), d, RowOp::Ge, -delta_cap)?;
                    }
                }
                // ramp against the previous hour's realized total
                let last = inputs.dg_last_kw.get(&g.id).copied().unwrap_or(0.0);
                prog.add_row(
                    format!("dgrampu_g{}", g.id),
                    psum.clone(),
                    RowOp::Le,
                    last + dg.ramp_kw_per_h,
                )?;
                prog.add_row(
                    format!("dgrampl_g{}", g.id),
                    psum.clone(),
                    RowOp::Ge,
                    (last - dg.ramp_kw_per_h).max(0.0),
                )?;
                // fuel trajectory at slot resolution
                let fuel0 = inputs
                    .fuel_init
                    .get(&g.id)
                    .copied()
                    .unwrap_or(dg.fuel_init_l);
                let mut farr = [VarId::INVALID; SLOTS_PER_HOUR];
                for h in 0..SLOTS_PER_HOUR {
                    farr[h] = prog.add_continuous(
                        format!("fuel_g{}_h{}", g.id, h),
                        dg.fuel_min_l,
                        dg.fuel_cap_l,
                        0.0,
                    );
                    let mut rec = LinExpr::var(farr[h]);
                    rec.add_expr(&psum, dg.alpha_l_per_kwh * DH_HOURS);
                    let rhs = if h == 0 {
                        fuel0 - dg.beta_l_per_kwh * dg.p_max_kw * DH_HOURS
                    } else {
                        rec.add_term(farr[h - 1], -1.0);
                        -dg.beta_l_per_kwh * dg.p_max_kw * DH_HOURS
                    };
                    prog.add_row(format!("fuelrec_g{}_h{}", g.id, h), rec, RowOp::Eq, rhs)?;
                }
                fuel.insert(g.id, farr);
                dg_p.insert(g.id, parr);
                dg_q.insert(g.id, qarr);
            }
            GenKind::Storage => {
                let es = g.es.as_ref().unwrap();
                let soc0 = inputs.soc_init.get(&g.id).copied().unwrap_or(es.soc_init);
                let per_ph = g.s_kva / nph / params.gamma;
                let mut pmat = [[VarId::INVALID; 3]; SLOTS_PER_HOUR];
                let mut qmat = [[VarId::INVALID; 3]; SLOTS_PER_HOUR];
                let mut sarr = [VarId::INVALID; SLOTS_PER_HOUR];
                let lo0 = params.soc_sched_min.min(soc0);
                let hi0 = params.soc_sched_max.max(soc0);
                for h in 0..SLOTS_PER_HOUR {
                    let mut psum = LinExpr::new();
                    let mut qsum = LinExpr::new();
                    for p in g.phases.iter() {
                        let pv = prog.add_continuous(
                            format!("esp_g{}_{}_h{}", g.id, p, h),
                            -per_ph,
                            per_ph,
                            0.0,
                        );
                        let qv = prog.add_continuous(
                            format!("esq_g{}_{}_h{}", g.id, p, h),
                            0.0,
                            per_ph,
                            0.0,
                        );
                        pmat[h][p.index()] = pv;
                        qmat[h][p.index()] = qv;
                        psum.add_term(pv, 1.0);
                        qsum.add_term(qv, 1.0);
                    }
                    add_hexagon(
                        &mut prog,
                        &psum,
                        &qsum,
                        g.s_kva,
                        params.tau,
                        Quadrants::Q1.union(Quadrants::Q2),
                        &format!("es_g{}_h{}", g.id, h),
                    )?;
                    sarr[h] = prog.add_continuous(format!("soc_g{}_h{}", g.id, h), lo0, hi0, 0.0);
                    let coeff = 100.0 * DH_HOURS / es.e_kwh;
                    let mut rec = LinExpr::var(sarr[h]);
                    rec.add_expr(&psum, coeff);
                    if h == 0 {
                        prog.add_row(format!("socrec_g{}_h{}", g.id, h), rec, RowOp::Eq, soc0)?;
                    } else {
                        rec.add_term(sarr[h - 1], -1.0);
                        prog.add_row(format!("socrec_g{}_h{}", g.id, h), rec, RowOp::Eq, 0.0)?;
                    }
                }
                es_p.insert(g.id, pmat);
                es_q.insert(g.id, qmat);
                soc.insert(g.id, sarr);
            }
            GenKind::PvControllable => {
                let mut pmat = [[VarId::INVALID; 3]; SLOTS_PER_HOUR];
                let mut qmat = [[VarId::INVALID; 3]; SLOTS_PER_HOUR];
                for h in 0..SLOTS_PER_HOUR {
                    let avail = inputs.forecast.pv_avail(g.id, h) / nph;
                    let mut psum = LinExpr::new();
                    let mut qsum = LinExpr::new();
                    for p in g.phases.iter() {
                        let pv = prog.add_continuous(
                            format!("pvp_g{}_{}_h{}", g.id, p, h),
                            0.0,
                            avail,
                            0.0,
                        );
                        let qv = prog.add_continuous(
                            format!("pvq_g{}_{}_h{}", g.id, p, h),
                            0.0,
                            g.s_kva / nph,
                            0.0,
                        );
                        pmat[h][p.index()] = pv;
                        qmat[h][p.index()] = qv;
                        psum.add_term(pv, 1.0);
                        qsum.add_term(qv, 1.0);
                    }
                    add_hexagon(
                        &mut prog,
                        &psum,
                        &qsum,
                        g.s_kva,
                        params.tau,
                        Quadrants::Q1,
                        &format!("pv_g{}_h{}", g.id, h),
                    )?;
                }
                pv_p.insert(g.id, pmat);
                pv_q.insert(g.id, qmat);
            }
            GenKind::PvBtm => {} // folded into balances with the zone binary
        }
    }

    // network phase-imbalance variables (penalized in the objective)
    let mut delta_d: [[Option<VarId>; 3]; SLOTS_PER_HOUR] = Default::default();
    for h in 0..SLOTS_PER_HOUR {
        for p in 0..3 {
            delta_d[h][p] = Some(prog.add_continuous(
                format!("deltad_{}_h{}", p, h),
                0.0,
                f64::INFINITY,
                0.0,
            ));
        }
    }

    // power balances per energized node, phase, slot
    for node in &model.nodes {
        if !in_set(node.id) {
            continue;
        }
        for p in node.phases.iter() {
            for h in 0..SLOTS_PER_HOUR {
                let mut bal = LinExpr::new();
                let mut bal_q = LinExpr::new();
                // generation at this node
                for g in &model.gens {
                    if g.node != node.id || !g.phases.contains(p) {
                        continue;
                    }
                    match g.kind {
                        GenKind::Diesel => {
                            bal.add_term(dg_p[&g.id][p.index()], 1.0);
                            bal_q.add_term(dg_q[&g.id][p.index()], 1.0);
                        }
                        GenKind::Storage => {
                            bal.add_term(es_p[&g.id][h][p.index()], 1.0);
                            bal_q.add_term(es_q[&g.id][h][p.index()], 1.0);
                        }
                        GenKind::PvControllable => {
                            bal.add_term(pv_p[&g.id][h][p.index()], 1.0);
                            bal_q.add_term(pv_q[&g.id][h][p.index()], 1.0);
                        }
                        GenKind::PvBtm => {
                            let avail = inputs.forecast.pv_avail(g.id, h);
                            if let Some(&xv) = x.get(&(node.zone, p)) {
                                bal.add_term(xv, avail);
                            } else {
                                bal.add_constant(avail);
                            }
                        }
                    }
                }
                // load as connectivity-scaled magnitude
                if let Some(pk) = load_kw.get(&(node.id, p)) {
                    if let Some(&xv) = x.get(&(node.zone, p)) {
                        bal.add_term(xv, -pk[h]);
                        bal_q.add_term(xv, -load_kvar[&(node.id, p)][h]);
                    }
                }
                // edge flows
                for ev in &edge_vars {
                    if let Some(&(pf, qf, pr, qr, _, _, _)) = ev.pf.get(&(p, h)) {
                        if ev.from == node.id {
                            bal.add_term(pf, -1.0);
                            bal.add_term(pr, 1.0);
                            bal_q.add_term(qf, -1.0);
                            bal_q.add_term(qr, 1.0);
                        } else if ev.to == node.id {
                            bal.add_term(pf, 1.0);
                            bal.add_term(pr, -1.0);
                            bal_q.add_term(qf, 1.0);
                            bal_q.add_term(qr, -1.0);
                        }
                    }
                }
                prog.add_row(
                    format!("balp_n{}_{}_h{}", node.id, p, h),
                    bal,
                    RowOp::Eq,
                    0.0,
                )?;
                prog.add_row(
                    format!("balq_n{}_{}_h{}", node.id, p, h),
                    bal_q,
                    RowOp::Eq,
                    0.0,
                )?;
            }
        }
    }

    // linearized voltage rows per edge orientation and phase
    for ev in &edge_vars {
        let a = &sens.a[&ev.edge];
        let b = &sens.b[&ev.edge];
        for &p in &ev.phases {
            for h in 0..SLOTS_PER_HOUR {
                let (_, _, _, _, _, zf, zr) = ev.pf[&(p, h)];
                // forward orientation: V_from = V_to - A P - B Q + zeta
                let mut row = LinExpr::var(v[&(ev.from, p)][h]);
                row.add_term(v[&(ev.to, p)][h], -1.0);
                for &pp in &ev.phases {
                    let (ppf, qqf, _, _, _, _, _) = ev.pf[&(pp, h)];
                    // flows are in kW; sensitivities are per-unit
                    row.add_term(ppf, a[p.index()][pp.index()] / s1ph);
                    row.add_term(qqf, b[p.index()][pp.index()] / s1ph);
                }
                row.add_term(zf, -1.0);
                prog.add_row(format!("vlaw_e{}_{}_h{}_f", ev.edge, p, h), row, RowOp::Eq, 0.0)?;
                // reverse orientation
                let mut row = LinExpr::var(v[&(ev.to, p)][h]);
                row.add_term(v[&(ev.from, p)][h], -1.0);
                for &pp in &ev.phases {
                    let (_, _, ppr, qqr, _, _, _) = ev.pf[&(pp, h)];
                    row.add_term(ppr, a[p.index()][pp.index()] / s1ph);
                    row.add_term(qqr, b[p.index()][pp.index()] / s1ph);
                }
                row.add_term(zr, -1.0);
                prog.add_row(format!("vlaw_e{}_{}_h{}_r", ev.edge, p, h), row, RowOp::Eq, 0.0)?;
            }
        }
    }

    // network load imbalance rows: difference against the circular shift
    for h in 0..SLOTS_PER_HOUR {
        for k in 0..3 {
            let p0 = Phase::from_index(k);
            let p1 = Phase::from_index((k + 1) % 3);
            let mut diff = LinExpr::new();
            for node in &model.nodes {
                if !in_set(node.id) {
                    continue;
                }
                for (ph, sign) in [(p0, 1.0), (p1, -1.0)] {
                    if let Some(pk) = load_kw.get(&(node.id, ph)) {
                        if let Some(&xv) = x.get(&(node.zone, ph)) {
                            diff.add_term(xv, sign * pk[h]);
                        }
                    }
                }
            }
            let dv = delta_d[h][k].unwrap();
            let mut up = diff.clone();
            up.add_term(dv, -1.0);
            prog.add_row(format!("imbu_{}_h{}", k, h), up, RowOp::Le, 0.0)?;
            let mut lo = diff;
            lo.add_term(dv, 1.0);
            prog.add_row(format!("imbl_{}_h{}", k, h), lo, RowOp::Ge, 0.0)?;
        }
    }

    // delayed-recourse resiliency cut (soft, slot-wise)
    let mut cut_slack: [Option<VarId>; SLOTS_PER_HOUR] = Default::default();
    let mut cut_rhs = None;
    if let Some(rec) = inputs.recourse {
        let expected = inputs.eds.expected_load_kw[hour - inputs.eds.start_hour];
        let rhs = expected - rec.impact_kwh - rec.extrapolated_kwh;
        cut_rhs = Some(rhs);
        // penalty priced above the largest marginal non-critical gain so
        // the cut curtails non-critical load first yet never starves
        // critical zones
        let mut mu = 0.0_f64;
        for node in &model.nodes {
            if node.class == LoadClass::NonCritical && in_set(node.id) {
                for p in node.phases.iter() {
                    let w2 = inputs.omega2.get(&(node.zone, p)).copied().unwrap_or(1.0);
                    let w = node.omega1 * if equity_on { w2 } else { 1.0 };
                    let l = load_kw
                        .get(&(node.id, p))
                        .map(|a| a.iter().cloned().fold(0.0, f64::max))
                        .unwrap_or(0.0);
                    mu = mu.max(w * w * l);
                }
            }
        }
        let mu = 10.0 * mu.max(1.0);
        for h in 0..SLOTS_PER_HOUR {
            let slack = prog.add_continuous(format!("cutslack_h{}", h), 0.0, f64::INFINITY, -mu);
            let mut total = LinExpr::new();
            for ((node, p), pk) in &load_kw {
                let zone = model.node(*node).zone;
                if let Some(&xv) = x.get(&(zone, *p)) {
                    total.add_term(xv, pk[h]);
                }
            }
            total.add_term(slack, -1.0);
            prog.add_row(format!("recourse_cut_h{}", h), total, RowOp::Le, rhs)?;
            cut_slack[h] = Some(slack);
        }
    }

    // objective: squared weighted served load, exactly expanded over the
    // hour-constant zone binaries (x^2 = x; cross terms via products)
    let mut y_cache: BTreeMap<(ZoneId, Phase, Phase), VarId> = BTreeMap::new();
    for node in &model.nodes {
        if !node.has_load() || !in_set(node.id) {
            continue;
        }
        let zone = node.zone;
        let class = node.class;
        for h in 0..SLOTS_PER_HOUR {
            let phases: Vec<Phase> = node.phases.iter().collect();
            for (i, &pi) in phases.iter().enumerate() {
                let li = load_kw.get(&(node.id, pi)).map(|a| a[h]).unwrap_or(0.0);
                if li == 0.0 {
                    continue;
                }
                let w2i = if equity_on {
                    inputs.omega2.get(&(zone, pi)).copied().unwrap_or(1.0)
                } else {
                    1.0
                };
                let wi = node.omega1 * w2i;
                let Some(&xi) = x.get(&(zone, pi)) else { continue };
                // diagonal term (x^2 = x)
                prog.add_objective(xi, params.w_load * wi * wi * li * li);
                for &pj in phases.iter().skip(i + 1) {
                    let lj = load_kw.get(&(node.id, pj)).map(|a| a[h]).unwrap_or(0.0);
                    if lj == 0.0 {
                        continue;
                    }
                    let w2j = if equity_on {
                        inputs.omega2.get(&(zone, pj)).copied().unwrap_or(1.0)
                    } else {
                        1.0
                    };
                    let wj = node.omega1 * w2j;
                    let Some(&xj) = x.get(&(zone, pj)) else { continue };
                    let key = (zone, pi, pj);
                    let yv = match y_cache.get(&key) {
                        Some(v) => *v,
                        None => {
                            let yv =
                                prog.add_continuous(format!("y_z{}_{}{}", zone, pi, pj), 0.0, 1.0, 0.0);
                            let mut r1 = LinExpr::var(yv);
                            r1.add_term(xi, -1.0);
                            prog.add_row(format!("y1_z{}_{}{}", zone, pi, pj), r1, RowOp::Le, 0.0)?;
                            let mut r2 = LinExpr::var(yv);
                            r2.add_term(xj, -1.0);
                            prog.add_row(format!("y2_z{}_{}{}", zone, pi, pj), r2, RowOp::Le, 0.0)?;
                            y_cache.insert(key, yv);
                            yv
                        }
                    };
                    prog.add_objective(yv, params.w_load * 2.0 * wi * li * wj * lj);
                }
            }
        }
        let _ = class;
    }

    // deviation penalties against the referral plan
    let off = hour - inputs.eds.start_hour;
    for (gid, parr) in &dg_p {
        let target = inputs.eds.dg_p_kw.get(gid).map(|v| v[off]).unwrap_or(0.0);
        let mut psum = LinExpr::new();
        for p in model.gen(*gid).phases.iter() {
            psum.add_term(parr[p.index()], 1.0);
        }
        let range = model.gen(*gid).dg.as_ref().unwrap().p_max_kw.max(1.0);
        let bps = symmetric_breakpoints(range, params.pwl_knots);
        // per-slot deviation of an hour-constant setpoint: four identical
        // squared terms
        add_squared_deviation(
            &mut prog,
            &psum,
            target,
            params.w_dev * SLOTS_PER_HOUR as f64,
            &bps,
            &format!("dgdev_g{}", gid),
        )?;
    }
    for (gid, sarr) in &soc {
        let es = model.gen(*gid).es.as_ref().unwrap();
        let target = inputs
            .eds
            .expected_soc
            .get(gid)
            .map(|v| v[off])
            .unwrap_or(es.soc_init);
        let scale = es.e_kwh / 100.0 / DH_HOURS; // percent -> kW equivalent
        let bps = symmetric_breakpoints(80.0, params.pwl_knots);
        add_squared_deviation(
            &mut prog,
            &LinExpr::var(sarr[SLOTS_PER_HOUR - 1]),
            target,
            params.w_dev * scale * scale,
            &bps,
            &format!("socdev_g{}", gid),
        )?;
    }
    for (h, row) in delta_d.iter().enumerate() {
        for (k, dv) in row.iter().enumerate() {
            let dv = dv.unwrap();
            let bps = symmetric_breakpoints(feeder_peak.max(1.0), params.pwl_knots);
            add_squared_deviation(
                &mut prog,
                &LinExpr::var(dv),
                0.0,
                params.w_dev,
                &bps,
                &format!("imbdev_{}_h{}", k, h),
            )?;
        }
    }

    Ok(NrtBuild {
        program: prog,
        idx: NrtIndex {
            energized,
            x,
            v,
            dg_p,
            dg_q,
            es_p,
            es_q,
            pv_p,
            pv_q,
            soc,
            fuel,
            delta_d,
            cut_slack,
            cut_rhs,
            load_expr_kw: load_kw,
            load_expr_kvar: load_kvar,
            clpu_kw,
        },
    })
}

/// Solve the hourly update with the documented fallback ladder: drop the
/// equity weighting, then relax the voltage band by one percent; a
/// second infeasibility recommends shutting the microgrid down.
pub fn solve_nrt(
    model: &NetworkModel,
    sens: &LineSensitivity,
    params: &StageParams,
    inputs: &NrtInputs,
    registry: &SolverRegistry,
) -> Result<NrtPlan, NrtError> {
    let backend = registry.get(&params.solver)?;
    let opts = SolveOptions {
        gap: params.mip_gap,
        time_limit: Some(std::time::Duration::from_secs_f64(params.nrt_time_limit_s)),
        ..Default::default()
    };
    let attempts = [
        (params.equity_enabled, 0.0),
        (false, 0.0),
        (false, 0.01),
    ];
    for (equity_on, relax) in attempts {
        let build = build_nrt_inner(model, sens, params, inputs, equity_on, relax)?;
        let sol = backend.solve(&build.program, &opts)?;
        if sol.status != SolStatus::Infeasible {
            return Ok(extract_plan(
                model,
                inputs,
                &build,
                &sol,
                params.equity_enabled && !equity_on,
                relax > 0.0,
            ));
        }
    }
    Err(NrtError::CmgOffRecommended)
}

fn extract_plan(
    model: &NetworkModel,
    inputs: &NrtInputs,
    build: &NrtBuild,
    sol: &cmg_opt::Solution,
    equity_dropped: bool,
    voltage_relaxed: bool,
) -> NrtPlan {
    let idx = &build.idx;
    let x: BTreeMap<(ZoneId, Phase), bool> = idx
        .x
        .iter()
        .map(|(k, v)| (*k, sol.value(*v) > 0.5))
        .collect();
    let mut served_kw = BTreeMap::new();
    let mut served_kvar = BTreeMap::new();
    for ((node, p), pk) in &idx.load_expr_kw {
        let zone = model.node(*node).zone;
        let on = x.get(&(zone, *p)).copied().unwrap_or(false);
        let mut sp = [0.0; SLOTS_PER_HOUR];
        let mut sq = [0.0; SLOTS_PER_HOUR];
        for h in 0..SLOTS_PER_HOUR {
            if on {
                sp[h] = pk[h];
                sq[h] = idx.load_expr_kvar[&(*node, *p)][h];
            }
        }
        served_kw.insert((*node, *p), sp);
        served_kvar.insert((*node, *p), sq);
    }
    let voltage_sq = idx
        .v
        .iter()
        .map(|(k, arr)| {
            let mut out = [0.0; SLOTS_PER_HOUR];
            for h in 0..SLOTS_PER_HOUR {
                out[h] = sol.value(arr[h]);
            }
            (*k, out)
        })
        .collect();
    let grab3 = |arr: &[VarId; 3], gid: GenId| {
        let mask = model.gen(gid).phases;
        let mut out = [0.0; 3];
        for p in mask.iter() {
            out[p.index()] = sol.value(arr[p.index()]);
        }
        out
    };
    let dg_p_kw = idx.dg_p.iter().map(|(g, a)| (*g, grab3(a, *g))).collect();
    let dg_q_kvar = idx.dg_q.iter().map(|(g, a)| (*g, grab3(a, *g))).collect();
    let grab_mat = |mat: &[[VarId; 3]; SLOTS_PER_HOUR], gid: GenId| {
        let mask = model.gen(gid).phases;
        let mut out = [[0.0; 3]; SLOTS_PER_HOUR];
        for h in 0..SLOTS_PER_HOUR {
            for p in mask.iter() {
                out[h][p.index()] = sol.value(mat[h][p.index()]);
            }
        }
        out
    };
    let es_p_kw = idx
        .es_p
        .iter()
        .map(|(g, m)| (*g, grab_mat(m, *g)))
        .collect();
    let es_q_kvar = idx
        .es_q
        .iter()
        .map(|(g, m)| (*g, grab_mat(m, *g)))
        .collect();
    let pv_p_kw: BTreeMap<GenId, [[f64; 3]; SLOTS_PER_HOUR]> = idx
        .pv_p
        .iter()
        .map(|(g, m)| (*g, grab_mat(m, *g)))
        .collect();
    let pv_q_kvar = idx
        .pv_q
        .iter()
        .map(|(g, m)| (*g, grab_mat(m, *g)))
        .collect();
    let soc_pct = idx
        .soc
        .iter()
        .map(|(g, arr)| {
            let mut out = [0.0; SLOTS_PER_HOUR];
            for h in 0..SLOTS_PER_HOUR {
                out[h] = sol.value(arr[h]);
            }
            (*g, out)
        })
        .collect();
    let fuel_l = idx
        .fuel
        .iter()
        .map(|(g, arr)| {
            let mut out = [0.0; SLOTS_PER_HOUR];
            for h in 0..SLOTS_PER_HOUR {
                out[h] = sol.value(arr[h]);
            }
            (*g, out)
        })
        .collect();
    let mut delta = [[0.0; 3]; SLOTS_PER_HOUR];
    for h in 0..SLOTS_PER_HOUR {
        for k in 0..3 {
            if let Some(v) = idx.delta_d[h][k] {
                delta[h][k] = sol.value(v);
            }
        }
    }
    let mut cut_slack_kw = [0.0; SLOTS_PER_HOUR];
    for h in 0..SLOTS_PER_HOUR {
        if let Some(v) = idx.cut_slack[h] {
            cut_slack_kw[h] = sol.value(v);
        }
    }
    NrtPlan {
        hour: inputs.hour,
        energized: idx.energized.clone(),
        x,
        served_kw,
        served_kvar,
        voltage_sq,
        dg_p_kw,
        dg_q_kvar,
        es_p_kw,
        es_q_kvar,
        pv_p_kw,
        pv_q_kvar,
        soc_pct,
        fuel_l,
        clpu_kw: idx.clpu_kw.clone(),
        delta_d_kw: delta,
        cut_slack_kw,
        cut_rhs_kw: idx.cut_rhs,
        objective: sol.objective,
        status: sol.status,
        solve_time: sol.wall,
        equity_dropped,
        voltage_relaxed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::forecast::{synthesize_base, Resolution};
    use crate::grid::load_network;
    use cmg_opt::default_registry;

    fn params() -> StageParams {
        StageParams::default()
    }

    #[test]
    fn sensitivity_single_phase_diagonal() {
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
peak_kw = [5.0]

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
        // z_base = 4.16^2 * 1000 / 1000 = 17.3056 ohm; the ohms above are
        // chosen to land on r = 0.05 pu, x = 0.02 pu
        let m = load_network(text).unwrap();
        let zb = m.base.z_base_ohm();
        let sens = build_sensitivities(&m).unwrap();
        let a = sens.a[&EdgeId(1)];
        let b = sens.b[&EdgeId(1)];
        let r_pu = 0.86528 / zb;
        let x_pu = 0.346112 / zb;
        assert!((r_pu - 0.05).abs() < 1e-6);
        assert!((x_pu - 0.02).abs() < 1e-6);
        assert!((a[0][0] + 2.0 * r_pu).abs() < 1e-12);
        assert!((b[0][0] + 2.0 * x_pu).abs() < 1e-12);
        // the anchor values: A = [-0.10], B = [-0.04]
        assert!((a[0][0] + 0.10).abs() < 1e-5, "{}", a[0][0]);
        assert!((b[0][0] + 0.04).abs() < 1e-5, "{}", b[0][0]);
    }

    #[test]
    fn sensitivity_offdiagonal_pattern() {
        let m = fixtures::two_node();
        let sens = build_sensitivities(&m).unwrap();
        let e = &m.edges[0];
        let a = sens.a[&e.id];
        let b = sens.b[&e.id];
        let rt3 = 3.0_f64.sqrt();
        let r_ab = e.r_pu[0][1];
        let x_ab = e.x_pu[0][1];
        assert!((a[0][1] - (r_ab - rt3 * x_ab)).abs() < 1e-15);
        assert!((b[0][1] - (x_ab + rt3 * r_ab)).abs() < 1e-15);
        assert!((a[0][2] - (r_ab + rt3 * x_ab)).abs() < 1e-15);
        assert!((a[1][0] - (r_ab + rt3 * x_ab)).abs() < 1e-15);
        // derived anchor: r_ab = 0.01, x_ab = 0.02 gives a[0][1] ~= -0.02464
        let a01 = 0.01 - rt3 * 0.02;
        assert!((a01 + 0.024641).abs() < 1e-6);
    }

    #[test]
    fn voltage_propagation_arithmetic() {
        // V_i = V_j - A P - B Q with A = [-0.10]: P = 0.01 pu lifts the
        // sending end by 0.001 (squared-voltage units)
        let a = -0.10_f64;
        let v_j = 1.0_f64;
        let v_i = v_j - a * 0.01;
        assert!((v_i - 1.001).abs() < 1e-12);
    }

    #[test]
    fn clpu_multiplier_examples() {
        let p = params();
        assert_eq!(clpu_multiplier(&p, 0.0), 1.0);
        let m = clpu_multiplier(&p, 4.0);
        let expect = 1.0 + 0.5 * (1.0 - (-1.2_f64).exp());
        assert!((m - expect).abs() < 1e-12);
        assert!((m - 1.349).abs() < 1e-3);
    }

    #[test]
    fn equity_weights_follow_service_history() {
        let p = params();
        let mut tr = EquityTracker::new(&p);
        let za = ZoneId(1);
        let zb = ZoneId(2);
        // zone a always served, zone b never, over ten hours
        for _ in 0..10 {
            let mut conn = BTreeMap::new();
            conn.insert((za, Phase::A), true);
            conn.insert((zb, Phase::A), false);
            tr.update(&conn);
        }
        let wa = tr.omega2(za, Phase::A, LoadClass::NonCritical);
        let wb = tr.omega2(zb, Phase::A, LoadClass::NonCritical);
        // window 24: a served 10 of 24 -> 1 + 0.5(1 - 10/24)
        assert!((wa - (1.0 + 0.5 * (1.0 - 10.0 / 24.0))).abs() < 1e-12);
        assert!((wb - 1.5).abs() < 1e-12);
        assert!(wb > wa);
        // critical loads keep unit weight
        assert_eq!(tr.omega2(za, Phase::A, LoadClass::Critical), 1.0);
    }

    #[test]
    fn equity_formula_anchor() {
        // kappa = 0.5, window 10, served 4 -> 1.3
        let mut p = params();
        p.equity_window = 10;
        let mut tr = EquityTracker::new(&p);
        let z = ZoneId(9);
        for i in 0..10 {
            let mut conn = BTreeMap::new();
            conn.insert((z, Phase::B), i < 4);
            tr.update(&conn);
        }
        let w = tr.omega2(z, Phase::B, LoadClass::NonCritical);
        assert!((w - 1.3).abs() < 1e-12);
    }

    #[test]
    fn msd_set_from_history() {
        let mut hist: BTreeMap<(ZoneId, Phase), Vec<bool>> = BTreeMap::new();
        hist.insert((ZoneId(1), Phase::A), vec![false, true]); // run 1 < 2
        hist.insert((ZoneId(2), Phase::A), vec![true, true]); // run complete
        hist.insert((ZoneId(3), Phase::A), vec![true, false]); // disconnected
        let set = msd_set(&hist, 2);
        assert!(set.contains(&(ZoneId(1), Phase::A)));
        assert!(!set.contains(&(ZoneId(2), Phase::A)));
        assert!(!set.contains(&(ZoneId(3), Phase::A)));
    }

    use crate::stages::testutil::synthetic_eds_plan;

    fn empty_inputs_maps() -> (
        BTreeMap<GenId, f64>,
        BTreeMap<GenId, f64>,
        BTreeMap<GenId, f64>,
        BTreeMap<(ZoneId, Phase), f64>,
        BTreeSet<(ZoneId, Phase)>,
        BTreeMap<(ZoneId, Phase), f64>,
    ) {
        (
            BTreeMap::new(),
            BTreeMap::new(),
            BTreeMap::new(),
            BTreeMap::new(),
            BTreeSet::new(),
            BTreeMap::new(),
        )
    }

    #[test]
    fn nrt_serves_everything_when_capacity_allows() {
        let model = fixtures::two_node();
        let sens = build_sensitivities(&model).unwrap();
        let p = params();
        let base = synthesize_base(&model, 12, 2).resample(Resolution::QuarterHour);
        let fc = base.slice_hours(0, 1);
        let eds = synthetic_eds_plan(&model, 2, 1000.0);
        let (soc, fuel, dgl, om2, msd, disc) = empty_inputs_maps();
        let inputs = NrtInputs {
            hour: 0,
            forecast: &fc,
            eds: &eds,
            recourse: None,
            msd: &msd,
            omega2: &om2,
            soc_init: &soc,
            fuel_init: &fuel,
            dg_last_kw: &dgl,
            disconnected_hours: &disc,
        };
        let reg = default_registry();
        let plan = solve_nrt(&model, &sens, &p, &inputs, &reg).expect("plan");
        assert_eq!(plan.status, SolStatus::Optimal);
        for on in plan.x.values() {
            assert!(*on, "ample capacity must connect every zone");
        }
        // full supply equals the forecast at every slot
        for h in 0..SLOTS_PER_HOUR {
            let forecast: f64 = fc.load.values().map(|s| s.p_kw[h]).sum();
            assert!((plan.total_served_kw(h) - forecast).abs() < 1e-6);
        }
        // voltages stay within the band on the energized system
        for arr in plan.voltage_sq.values() {
            for v2 in arr {
                assert!(*v2 >= 0.95_f64.powi(2) - 1e-9 && *v2 <= 1.05_f64.powi(2) + 1e-9);
            }
        }
    }

    #[test]
    fn recourse_cut_lowers_cap_and_binds() {
        let model = fixtures::two_node();
        let sens = build_sensitivities(&model).unwrap();
        let p = params();
        let base = synthesize_base(&model, 18, 2).resample(Resolution::QuarterHour);
        let fc = base.slice_hours(0, 1);
        let hour_load: f64 = fc.load.values().map(|s| s.p_kw[0]).sum();
        let eds = synthetic_eds_plan(&model, 2, hour_load);
        let (soc, fuel, dgl, om2, msd, disc) = empty_inputs_maps();
        let rec = RecourseTerm {
            impact_kwh: 50.0,
            slope: 20.0 / 180.0,
            extrapolated_kwh: 20.0,
        };
        let inputs = NrtInputs {
            hour: 0,
            forecast: &fc,
            eds: &eds,
            recourse: Some(&rec),
            msd: &msd,
            omega2: &om2,
            soc_init: &soc,
            fuel_init: &fuel,
            dg_last_kw: &dgl,
            disconnected_hours: &disc,
        };
        let build = build_nrt(&model, &sens, &p, &inputs).expect("build");
        let rhs = build.idx.cut_rhs.expect("cut present");
        assert!((rhs - (hour_load - 70.0)).abs() < 1e-9, "cap lowered by 70 kW");
        let reg = default_registry();
        let plan = solve_nrt(&model, &sens, &p, &inputs, &reg).expect("plan");
        // served load obeys the cap up to the priced slack
        for h in 0..SLOTS_PER_HOUR {
            let served = plan.total_served_kw(h);
            assert!(
                served <= plan.cut_rhs_kw.unwrap() + plan.cut_slack_kw[h] + 1e-6,
                "slot {}: served {} above cap {} + slack {}",
                h,
                served,
                plan.cut_rhs_kw.unwrap(),
                plan.cut_slack_kw[h]
            );
        }
    }

    #[test]
    fn msd_pin_beats_soft_cut() {
        // the single load zone is pinned; a crushing recourse cut must be
        // absorbed by slack rather than disconnecting it
        let model = fixtures::two_node();
        let sens = build_sensitivities(&model).unwrap();
        let p = params();
        let base = synthesize_base(&model, 18, 2).resample(Resolution::QuarterHour);
        let fc = base.slice_hours(0, 1);
        let eds = synthetic_eds_plan(&model, 2, 500.0);
        let (soc, fuel, dgl, om2, _, disc) = empty_inputs_maps();
        let mut msd = BTreeSet::new();
        for ph in Phase::ALL {
            msd.insert((ZoneId(2), ph));
        }
        let rec = RecourseTerm {
            impact_kwh: 5000.0,
            slope: 1.0,
            extrapolated_kwh: 180.0,
        };
        let inputs = NrtInputs {
            hour: 0,
            forecast: &fc,
            eds: &eds,
            recourse: Some(&rec),
            msd: &msd,
            omega2: &om2,
            soc_init: &soc,
            fuel_init: &fuel,
            dg_last_kw: &dgl,
            disconnected_hours: &disc,
        };
        let reg = default_registry();
        let plan = solve_nrt(&model, &sens, &p, &inputs, &reg).expect("plan");
        for ph in Phase::ALL {
            assert!(plan.x[&(ZoneId(2), ph)], "pinned zone disconnected");
        }
        assert!(plan.cut_slack_kw.iter().any(|s| *s > 1.0));
    }

    #[test]
    fn cold_load_added_on_pickup_hour() {
        let model = fixtures::two_node();
        let sens = build_sensitivities(&model).unwrap();
        let p = params();
        let base = synthesize_base(&model, 12, 2).resample(Resolution::QuarterHour);
        let fc = base.slice_hours(0, 1);
        let eds = synthetic_eds_plan(&model, 2, 1000.0);
        let (soc, fuel, dgl, om2, msd, _) = empty_inputs_maps();
        let mut disc = BTreeMap::new();
        for ph in Phase::ALL {
            disc.insert((ZoneId(2), ph), 4.0);
        }
        let inputs = NrtInputs {
            hour: 0,
            forecast: &fc,
            eds: &eds,
            recourse: None,
            msd: &msd,
            omega2: &om2,
            soc_init: &soc,
            fuel_init: &fuel,
            dg_last_kw: &dgl,
            disconnected_hours: &disc,
        };
        let build = build_nrt(&model, &sens, &p, &inputs).expect("build");
        let mult = clpu_multiplier(&p, 4.0);
        for ph in Phase::ALL {
            let clpu = build.idx.clpu_kw[&(NodeId(2), ph)];
            let (f0, _) = fc.node_load(NodeId(2), ph, 0);
            assert!((clpu[0] - (mult - 1.0) * f0).abs() < 1e-9);
            assert!(clpu.iter().all(|v| *v > 0.0), "all four slots carry cold load");
        }
    }

    #[test]
    fn plan_missing_hour_is_an_error() {
        let model = fixtures::two_node();
        let sens = build_sensitivities(&model).unwrap();
        let p = params();
        let base = synthesize_base(&model, 0, 2).resample(Resolution::QuarterHour);
        let fc = base.slice_hours(0, 1);
        let eds = synthetic_eds_plan(&model, 2, 100.0);
        let (soc, fuel, dgl, om2, msd, disc) = empty_inputs_maps();
        let inputs = NrtInputs {
            hour: 7,
            forecast: &fc,
            eds: &eds,
            recourse: None,
            msd: &msd,
            omega2: &om2,
            soc_init: &soc,
            fuel_init: &fuel,
            dg_last_kw: &dgl,
            disconnected_hours: &disc,
        };
        assert!(matches!(
            build_nrt(&model, &sens, &p, &inputs),
            Err(NrtError::PlanMissingHour(7))
        ));
    }
}
