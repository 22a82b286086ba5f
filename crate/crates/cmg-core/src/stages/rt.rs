//! Five-minute dispatch fine-tuning: load connectivity and diesel
//! setpoints are inherited from the hourly network stage, controllable
//! PV is bounded by the hourly decisions, and the grid-following storage
//! units re-dispatch to minimize PV curtailment. The grid-forming unit
//! is not a setpoint: its power is the balance residual, predicted here
//! and realized by the simulator.

use std::collections::BTreeMap;
use std::time::Duration;

use cmg_opt::{
    add_hexagon, add_squared_deviation, symmetric_breakpoints, LinExpr, Program, Quadrants, RowOp,
    Sense, SolStatus, SolveOptions, SolverRegistry, VarId,
};

use crate::forecast::Profile;
use crate::grid::{GenId, GenKind, NetworkModel, NodeId, Phase};
use crate::params::StageParams;
use crate::stages::nrt::{clpu_multiplier, LineSensitivity, NrtPlan, SLOTS_PER_HOUR};

pub const STEPS_PER_SLOT: usize = 3;
pub const DK_HOURS: f64 = 1.0 / 12.0;

#[derive(Debug, thiserror::Error)]
pub enum RtError {
    #[error("hourly plan does not cover slot {0}")]
    MissingSlot(usize),
    #[error("program construction: {0}")]
    Build(#[from] cmg_opt::OptError),
    #[error("solver: {0}")]
    Solve(#[from] cmg_opt::SolveError),
    #[error("infeasible after relaxing the inherited equalities; microgrid shutdown")]
    CmgOff,
}

pub struct RtInputs<'a> {
    /// Slot index within the hour (0..4) and step within the slot (0..3).
    pub slot: usize,
    pub step: usize,
    /// Five-minute forecast covering this hour (12 steps).
    pub rt_forecast: &'a Profile,
    pub nrt: &'a NrtPlan,
    pub soc_init: &'a BTreeMap<GenId, f64>,
    pub es_prev_kw: &'a BTreeMap<GenId, [f64; 3]>,
    pub disconnected_hours: &'a BTreeMap<(crate::grid::ZoneId, Phase), f64>,
}

#[derive(Debug, Clone)]
pub struct RtDispatch {
    pub hour: usize,
    pub slot: usize,
    pub step: usize,
    pub pv_p_kw: BTreeMap<GenId, [f64; 3]>,
    pub pv_q_kvar: BTreeMap<GenId, [f64; 3]>,
    pub es_p_kw: BTreeMap<GenId, [f64; 3]>,
    pub es_q_kvar: BTreeMap<GenId, [f64; 3]>,
    pub dg_p_kw: BTreeMap<GenId, [f64; 3]>,
    pub dg_q_kvar: BTreeMap<GenId, [f64; 3]>,
    /// Served load per node-phase this step (kW), cold load included.
    pub served_kw: BTreeMap<(NodeId, Phase), f64>,
    pub served_kvar: BTreeMap<(NodeId, Phase), f64>,
    /// Behind-the-meter injection this step per node-phase (kW).
    pub btm_kw: BTreeMap<(NodeId, Phase), f64>,
    /// Predicted grid-forming residual per phase (kW / kvar) and its SOC.
    pub gf_p_kw: [f64; 3],
    pub gf_q_kvar: [f64; 3],
    pub gf_soc_end: f64,
    pub soc_end: BTreeMap<GenId, f64>,
    pub voltage_sq: BTreeMap<(NodeId, Phase), f64>,
    /// Total PV curtailed this step (kW).
    pub curtailed_kw: f64,
    pub objective: f64,
    pub status: SolStatus,
    pub solve_time: Duration,
    pub dg_relaxed: bool,
}

struct RtIndex {
    pv_p: BTreeMap<GenId, [VarId; 3]>,
    pv_q: BTreeMap<GenId, [VarId; 3]>,
    es_p: BTreeMap<GenId, [VarId; 3]>,
    es_q: BTreeMap<GenId, [VarId; 3]>,
    dg_p: BTreeMap<GenId, [VarId; 3]>,
    dg_q: BTreeMap<GenId, [VarId; 3]>,
    gf: GenId,
    soc: BTreeMap<GenId, VarId>,
    v: BTreeMap<(NodeId, Phase), VarId>,
    served_kw: BTreeMap<(NodeId, Phase), f64>,
    served_kvar: BTreeMap<(NodeId, Phase), f64>,
    btm_kw: BTreeMap<(NodeId, Phase), f64>,
    avail_total: f64,
}

pub struct RtBuild {
    pub program: Program,
    idx: RtIndex,
}

/// Assemble the dispatch program for one 5-minute step.
pub fn build_rt(
    model: &NetworkModel,
    sens: &LineSensitivity,
    params: &StageParams,
    inputs: &RtInputs,
) -> Result<RtBuild, RtError> {
    build_rt_inner(model, sens, params, inputs, false)
}

fn build_rt_inner(
    model: &NetworkModel,
    sens: &LineSensitivity,
    params: &StageParams,
    inputs: &RtInputs,
    relax_dg: bool,
) -> Result<RtBuild, RtError> {
    if inputs.slot >= SLOTS_PER_HOUR {
        return Err(RtError::MissingSlot(inputs.slot));
    }
    let nrt = inputs.nrt;
    let energized = &nrt.energized;
    let in_set = |n: NodeId| energized.contains(&model.ng_of(n));
    let k = inputs.slot * STEPS_PER_SLOT + inputs.step;
    let s1ph = model.base.s_base_1ph_kw();
    let vmin2 = params.v_min_pu.powi(2);
    let vmax2 = params.v_max_pu.powi(2);

    let mut prog = Program::new(Sense::Minimize);

    // fixed load magnitudes: realized-forecast plus cold load, gated by the
    // inherited connectivity
    let mut served_kw = BTreeMap::new();
    let mut served_kvar = BTreeMap::new();
    for node in &model.nodes {
        if !node.has_load() || !in_set(node.id) {
            continue;
        }
        for p in node.phases.iter() {
            let on = nrt.x.get(&(node.zone, p)).copied().unwrap_or(false);
            if !on {
                continue;
            }
            let disc = inputs
                .disconnected_hours
                .get(&(node.zone, p))
                .copied()
                .unwrap_or(0.0);
            let mult = clpu_multiplier(params, disc);
            let (pf, qf) = inputs.rt_forecast.node_load(node.id, p, k);
            served_kw.insert((node.id, p), pf * mult);
            served_kvar.insert((node.id, p), qf * mult);
        }
    }
    // behind-the-meter injections follow the same connectivity
    let mut btm_kw: BTreeMap<(NodeId, Phase), f64> = BTreeMap::new();
    for g in &model.gens {
        if g.kind != GenKind::PvBtm || !in_set(g.node) {
            continue;
        }
        let node = model.node(g.node);
        let p = g.phases.iter().next().unwrap();
        let on = nrt
            .x
            .get(&(node.zone, p))
            .copied()
            .unwrap_or(node.class == crate::grid::LoadClass::None);
        if on || node.class == crate::grid::LoadClass::None {
            let avail = inputs.rt_forecast.pv_avail(g.id, k);
            *btm_kw.entry((g.node, p)).or_default() += avail;
        }
    }

    // voltages
    let slack_node = model.grid_forming_gen().node;
    let slack_v2 = model.base.slack_v_pu * model.base.slack_v_pu;
    let mut v: BTreeMap<(NodeId, Phase), VarId> = BTreeMap::new();
    for node in &model.nodes {
        if !in_set(node.id) {
            continue;
        }
        for p in node.phases.iter() {
            let var = prog.add_continuous(format!("v_n{}_{}", node.id, p), vmin2, vmax2, 0.0);
            if node.id == slack_node {
                prog.fix_var(var, slack_v2);
            }
            v.insert((node.id, p), var);
        }
    }

    // edge flows with direction binaries (single step)
    struct Ev {
        edge: crate::grid::EdgeId,
        from: NodeId,
        to: NodeId,
        phases: Vec<Phase>,
        vars: BTreeMap<Phase, (VarId, VarId, VarId, VarId, VarId, VarId)>,
    }
    let closed_ids: std::collections::BTreeSet<crate::grid::EdgeId> = model
        .energized_closed_edges(energized)
        .map(|e| e.id)
        .collect();
    let feeder_peak = model.feeder_peak_kw();
    let mut edges: Vec<Ev> = Vec::new();
    for e in &model.edges {
        if !(in_set(e.from) && in_set(e.to)) {
            continue;
        }
        let closed = closed_ids.contains(&e.id);
        let p_cap = e
            .p_limit_kw
            .unwrap_or(params.line_limit_factor * feeder_peak / 3.0);
        let q_cap = e
            .q_limit_kvar
            .unwrap_or(params.line_limit_factor * feeder_peak / 3.0);
        let mut ev = Ev {
            edge: e.id,
            from: e.from,
            to: e.to,
            phases: e.phases.iter().collect(),
            vars: BTreeMap::new(),
        };
        for p in e.phases.iter() {
            let pf = prog.add_continuous(format!("pf_e{}_{}", e.id, p), 0.0, p_cap, 0.0);
            let qf = prog.add_continuous(format!("qf_e{}_{}", e.id, p), 0.0, q_cap, 0.0);
            let pr = prog.add_continuous(format!("pr_e{}_{}", e.id, p), 0.0, p_cap, 0.0);
            let qr = prog.add_continuous(format!("qr_e{}_{}", e.id, p), 0.0, q_cap, 0.0);
            let zf = prog.add_continuous(format!("zf_e{}_{}", e.id, p), -vmax2, vmax2, 0.0);
            let zr = prog.add_continuous(format!("zr_e{}_{}", e.id, p), -vmax2, vmax2, 0.0);
            if closed {
                let d = prog.add_binary(format!("rho_e{}_{}", e.id, p), 0.0);
                let mut cap_f = LinExpr::var(pf);
                cap_f.add_term(d, -p_cap);
                prog.add_row(format!("pcap_e{}_{}", e.id, p), cap_f, RowOp::Le, 0.0)?;
                let mut cap_fq = LinExpr::var(qf);
                cap_fq.add_term(d, -q_cap);
                prog.add_row(format!("qcap_e{}_{}", e.id, p), cap_fq, RowOp::Le, 0.0)?;
                let mut cap_r = LinExpr::var(pr);
                cap_r.add_term(d, p_cap);
                prog.add_row(format!("pcapr_e{}_{}", e.id, p), cap_r, RowOp::Le, p_cap)?;
                let mut cap_rq = LinExpr::var(qr);
                cap_rq.add_term(d, q_cap);
                prog.add_row(format!("qcapr_e{}_{}", e.id, p), cap_rq, RowOp::Le, q_cap)?;
                let mut zfu = LinExpr::var(zf);
                zfu.add_term(d, vmax2);
                prog.add_row(format!("zfu_e{}_{}", e.id, p), zfu, RowOp::Le, vmax2)?;
                let mut zfl = LinExpr::var(zf);
                zfl.add_term(d, -vmax2);
                prog.add_row(format!("zfl_e{}_{}", e.id, p), zfl, RowOp::Ge, -vmax2)?;
                let mut zru = LinExpr::var(zr);
                zru.add_term(d, -vmax2);
                prog.add_row(format!("zru_e{}_{}", e.id, p), zru, RowOp::Le, 0.0)?;
                let mut zrl = LinExpr::var(zr);
                zrl.add_term(d, vmax2);
                prog.add_row(format!("zrl_e{}_{}", e.id, p), zrl, RowOp::Ge, 0.0)?;
            } else {
                prog.fix_var(pf, 0.0);
                prog.fix_var(qf, 0.0);
                prog.fix_var(pr, 0.0);
                prog.fix_var(qr, 0.0);
            }
            ev.vars.insert(p, (pf, qf, pr, qr, zf, zr));
        }
        edges.push(ev);
    }

    // generators
    let gf_id = model.grid_forming_id();
    let mut pv_p = BTreeMap::new();
    let mut pv_q = BTreeMap::new();
    let mut es_p = BTreeMap::new();
    let mut es_q = BTreeMap::new();
    let mut dg_p = BTreeMap::new();
    let mut dg_q = BTreeMap::new();
    let mut soc = BTreeMap::new();
    let mut avail_total = 0.0;
    let mut curtail_parts: Vec<(LinExpr, f64, f64)> = Vec::new();

    for g in &model.gens {
        if !in_set(g.node) {
            continue;
        }
        let nph = g.phases.count() as f64;
        match g.kind {
            GenKind::PvControllable => {
                let avail = inputs.rt_forecast.pv_avail(g.id, k);
                avail_total += avail;
                let nrt_caps = nrt
                    .pv_p_kw
                    .get(&g.id)
                    .map(|m| {
                        let mut caps = [0.0_f64; 3];
                        for h in 0..SLOTS_PER_HOUR {
                            for (i, c) in caps.iter_mut().enumerate() {
                                *c = (*c).max(m[h][i]);
                            }
                        }
                        caps
                    })
                    .unwrap_or([0.0; 3]);
                let mut parr = [VarId::INVALID; 3];
                let mut qarr = [VarId::INVALID; 3];
                let mut psum = LinExpr::new();
                let mut qsum = LinExpr::new();
                for p in g.phases.iter() {
                    // slot-inherited ceiling and realized availability both cap
                    let ub = (avail / nph).min(nrt_caps[p.index()]);
                    let pv = prog.add_continuous(format!("pvp_g{}_{}", g.id, p), 0.0, ub, 0.0);
                    let qv = prog.add_continuous(
                        format!("pvq_g{}_{}", g.id, p),
                        0.0,
                        g.s_kva / nph,
                        0.0,
                    );
                    parr[p.index()] = pv;
                    qarr[p.index()] = qv;
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
                    &format!("pv_g{}", g.id),
                )?;
                // curtailment accumulates (avail - sum P)^2 pressure
                curtail_parts.push((psum.clone(), avail, g.s_kva));
                pv_p.insert(g.id, parr);
                pv_q.insert(g.id, qarr);
            }
            GenKind::Storage => {
                let es = g.es.as_ref().unwrap();
                let soc0 = inputs.soc_init.get(&g.id).copied().unwrap_or(es.soc_init);
                let per_ph = g.s_kva / nph;
                let mut parr = [VarId::INVALID; 3];
                let mut qarr = [VarId::INVALID; 3];
                let mut psum = LinExpr::new();
                let mut qsum = LinExpr::new();
                for p in g.phases.iter() {
                    let pv = prog.add_continuous(
                        format!("esp_g{}_{}", g.id, p),
                        -per_ph,
                        per_ph,
                        0.0,
                    );
                    let qv =
                        prog.add_continuous(format!("esq_g{}_{}", g.id, p), 0.0, per_ph, 0.0);
                    parr[p.index()] = pv;
                    qarr[p.index()] = qv;
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
                    &format!("es_g{}", g.id),
                )?;
                // SOC after this step within the operational envelope
                let lo = es.soc_op_min.min(soc0);
                let hi = es.soc_op_max.max(soc0);
                let sv = prog.add_continuous(format!("soc_g{}", g.id), lo, hi, 0.0);
                let coeff = 100.0 * DK_HOURS / es.e_kwh;
                let mut rec = LinExpr::var(sv);
                rec.add_expr(&psum, coeff);
                prog.add_row(format!("socrec_g{}", g.id), rec, RowOp::Eq, soc0)?;
                soc.insert(g.id, sv);
                // grid-following units track the previous step to break ties;
                // the grid-forming unit is left to the balance residual
                if g.id != gf_id {
                    if let Some(prev) = inputs.es_prev_kw.get(&g.id) {
                        for p in g.phases.iter() {
                            let t = prog.add_continuous(
                                format!("esmov_g{}_{}", g.id, p),
                                0.0,
                                f64::INFINITY,
                                1e-4,
                            );
                            let mut up = LinExpr::var(parr[p.index()]);
                            up.add_term(t, -1.0);
                            prog.add_row(
                                format!("esmovu_g{}_{}", g.id, p),
                                up,
                                RowOp::Le,
                                prev[p.index()],
                            )?;
                            let mut lo = LinExpr::var(parr[p.index()]);
                            lo.add_term(t, 1.0);
                            prog.add_row(
                                format!("esmovl_g{}_{}", g.id, p),
                                lo,
                                RowOp::Ge,
                                prev[p.index()],
                            )?;
                        }
                    }
                }
                es_p.insert(g.id, parr);
                es_q.insert(g.id, qarr);
            }
            GenKind::Diesel => {
                let nrt_p = nrt.dg_p_kw.get(&g.id).copied().unwrap_or([0.0; 3]);
                let nrt_q = nrt.dg_q_kvar.get(&g.id).copied().unwrap_or([0.0; 3]);
                let mut parr = [VarId::INVALID; 3];
                let mut qarr = [VarId::INVALID; 3];
                for p in g.phases.iter() {
                    let (plo, phi, qlo, qhi) = if relax_dg {
                        (0.0, nrt_p[p.index()].max(0.0), 0.0, nrt_q[p.index()].max(0.0))
                    } else {
                        (
                            nrt_p[p.index()],
                            nrt_p[p.index()],
                            nrt_q[p.index()],
                            nrt_q[p.index()],
                        )
                    };
                    parr[p.index()] =
                        prog.add_continuous(format!("dgp_g{}_{}", g.id, p), plo, phi, 0.0);
                    qarr[p.index()] =
                        prog.add_continuous(format!("dgq_g{}_{}", g.id, p), qlo, qhi, 0.0);
                }
                dg_p.insert(g.id, parr);
                dg_q.insert(g.id, qarr);
            }
            GenKind::PvBtm => {}
        }
    }

    // node balances
    for node in &model.nodes {
        if !in_set(node.id) {
            continue;
        }
        for p in node.phases.iter() {
            let mut bal = LinExpr::new();
            let mut bal_q = LinExpr::new();
            for g in &model.gens {
                if g.node != node.id || !g.phases.contains(p) {
                    continue;
                }
                match g.kind {
                    GenKind::PvControllable => {
                        bal.add_term(pv_p[&g.id][p.index()], 1.0);
                        bal_q.add_term(pv_q[&g.id][p.index()], 1.0);
                    }
                    GenKind::Storage => {
                        bal.add_term(es_p[&g.id][p.index()], 1.0);
                        bal_q.add_term(es_q[&g.id][p.index()], 1.0);
                    }
                    GenKind::Diesel => {
                        bal.add_term(dg_p[&g.id][p.index()], 1.0);
                        bal_q.add_term(dg_q[&g.id][p.index()], 1.0);
                    }
                    GenKind::PvBtm => {}
                }
            }
            if let Some(btm) = btm_kw.get(&(node.id, p)) {
                bal.add_constant(*btm);
            }
            if let Some(l) = served_kw.get(&(node.id, p)) {
                bal.add_constant(-*l);
                bal_q.add_constant(-served_kvar[&(node.id, p)]);
            }
            for ev in &edges {
                if let Some(&(pf, qf, pr, qr, _, _)) = ev.vars.get(&p) {
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
            prog.add_row(format!("balp_n{}_{}", node.id, p), bal, RowOp::Eq, 0.0)?;
            prog.add_row(format!("balq_n{}_{}", node.id, p), bal_q, RowOp::Eq, 0.0)?;
        }
    }

    // voltage rows
    for ev in &edges {
        let a = &sens.a[&ev.edge];
        let b = &sens.b[&ev.edge];
        for &p in &ev.phases {
            let (_, _, _, _, zf, zr) = ev.vars[&p];
            let mut row = LinExpr::var(v[&(ev.from, p)]);
            row.add_term(v[&(ev.to, p)], -1.0);
            for &pp in &ev.phases {
                let (ppf, qqf, _, _, _, _) = ev.vars[&pp];
                row.add_term(ppf, a[p.index()][pp.index()] / s1ph);
                row.add_term(qqf, b[p.index()][pp.index()] / s1ph);
            }
            row.add_term(zf, -1.0);
            prog.add_row(format!("vlaw_e{}_{}_f", ev.edge, p), row, RowOp::Eq, 0.0)?;
            let mut row = LinExpr::var(v[&(ev.to, p)]);
            row.add_term(v[&(ev.from, p)], -1.0);
            for &pp in &ev.phases {
                let (_, _, ppr, qqr, _, _) = ev.vars[&pp];
                row.add_term(ppr, a[p.index()][pp.index()] / s1ph);
                row.add_term(qqr, b[p.index()][pp.index()] / s1ph);
            }
            row.add_term(zr, -1.0);
            prog.add_row(format!("vlaw_e{}_{}_r", ev.edge, p), row, RowOp::Eq, 0.0)?;
        }
    }

    // objective: PV curtailment squared per plant
    for (i, (psum, avail, s_kva)) in curtail_parts.iter().enumerate() {
        let bps = symmetric_breakpoints(s_kva.max(1.0), params.pwl_knots);
        add_squared_deviation(&mut prog, psum, *avail, 1.0, &bps, &format!("curt_{}", i))?;
    }

    Ok(RtBuild {
        program: prog,
        idx: RtIndex {
            pv_p,
            pv_q,
            es_p,
            es_q,
            dg_p,
            dg_q,
            gf: gf_id,
            soc,
            v,
            served_kw,
            served_kvar,
            btm_kw,
            avail_total,
        },
    })
}

/// Solve the step; on infeasibility the inherited diesel equalities are
/// relaxed to upper bounds once (flag recorded), then the microgrid is
/// recommended off.
pub fn solve_rt(
    model: &NetworkModel,
    sens: &LineSensitivity,
    params: &StageParams,
    inputs: &RtInputs,
    registry: &SolverRegistry,
) -> Result<RtDispatch, RtError> {
    let backend = registry.get(&params.solver)?;
    let opts = SolveOptions {
        gap: params.mip_gap,
        time_limit: Some(std::time::Duration::from_secs_f64(params.rt_time_limit_s)),
        ..Default::default()
    };
    for relax in [false, true] {
        let build = build_rt_inner(model, sens, params, inputs, relax)?;
        let sol = backend.solve(&build.program, &opts)?;
        if sol.status != SolStatus::Infeasible {
            return Ok(extract(model, inputs, &build, &sol, relax));
        }
    }
    Err(RtError::CmgOff)
}

fn extract(
    model: &NetworkModel,
    inputs: &RtInputs,
    build: &RtBuild,
    sol: &cmg_opt::Solution,
    dg_relaxed: bool,
) -> RtDispatch {
    let idx = &build.idx;
    let grab = |map: &BTreeMap<GenId, [VarId; 3]>| -> BTreeMap<GenId, [f64; 3]> {
        map.iter()
            .map(|(g, arr)| {
                let mask = model.gen(*g).phases;
                let mut out = [0.0; 3];
                for p in mask.iter() {
                    out[p.index()] = sol.value(arr[p.index()]);
                }
                (*g, out)
            })
            .collect()
    };
    let pv_p_kw = grab(&idx.pv_p);
    let pv_q_kvar = grab(&idx.pv_q);
    let es_p_kw = grab(&idx.es_p);
    let es_q_kvar = grab(&idx.es_q);
    let dg_p_kw = grab(&idx.dg_p);
    let dg_q_kvar = grab(&idx.dg_q);
    let gf_p = es_p_kw.get(&idx.gf).copied().unwrap_or([0.0; 3]);
    let gf_q = es_q_kvar.get(&idx.gf).copied().unwrap_or([0.0; 3]);
    let soc_end: BTreeMap<GenId, f64> = idx
        .soc
        .iter()
        .map(|(g, v)| (*g, sol.value(*v)))
        .collect();
    let pv_total: f64 = pv_p_kw.values().map(|a| a.iter().sum::<f64>()).sum();
    RtDispatch {
        hour: inputs.nrt.hour,
        slot: inputs.slot,
        step: inputs.step,
        pv_p_kw,
        pv_q_kvar,
        es_p_kw,
        es_q_kvar,
        dg_p_kw,
        dg_q_kvar,
        served_kw: idx.served_kw.clone(),
        served_kvar: idx.served_kvar.clone(),
        btm_kw: idx.btm_kw.clone(),
        gf_p_kw: gf_p,
        gf_q_kvar: gf_q,
        gf_soc_end: soc_end.get(&idx.gf).copied().unwrap_or(0.0),
        soc_end,
        voltage_sq: idx.v.iter().map(|(k, v)| (*k, sol.value(*v))).collect(),
        curtailed_kw: (idx.avail_total - pv_total).max(0.0),
        objective: sol.objective,
        status: sol.status,
        solve_time: sol.wall,
        dg_relaxed,
    }
}
