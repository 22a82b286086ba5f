use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::program::{Program, SolStatus, Solution, VarKind};
use crate::simplex::{BasisSnapshot, LpOutcome, Simplex, SparseLp};
use crate::{FEASIBILITY_TOL, INTEGRALITY_TOL};

#[derive(Debug, thiserror::Error)]
pub enum SolveError {
    #[error("program is unbounded")]
    Unbounded,
    #[error("numerical failure in LP engine: {0}")]
    Numerical(String),
    #[error("no solver backend registered under name {0:?}")]
    UnknownBackend(String),
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub time_limit: Option<Duration>,
    /// Relative MIP gap at which the search stops with status `optimal`.
    pub gap: f64,
    pub node_limit: usize,
    /// Recorded for reproducibility bookkeeping; the search itself is
    /// deterministic and does not consume randomness.
    pub seed: u64,
    /// Print search progress to stderr.
    pub verbose: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            time_limit: None,
            gap: 1e-4,
            node_limit: 200_000,
            seed: 0,
            verbose: false,
        }
    }
}

/// Contract every MILP backend fulfils. The scheduling stages only talk
/// to this trait, so an external solver can replace the built-in
/// branch-and-bound without touching stage code.
pub trait SolverBackend: Send + Sync {
    fn name(&self) -> &str;
    fn solve(&self, prog: &Program, opts: &SolveOptions) -> Result<Solution, SolveError>;
}

/// Named registry of solver backends, selected at runtime via config.
#[derive(Default)]
pub struct SolverRegistry {
    backends: BTreeMap<String, Arc<dyn SolverBackend>>,
}

impl SolverRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, backend: Arc<dyn SolverBackend>) {
        self.backends.insert(backend.name().to_string(), backend);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn SolverBackend>, SolveError> {
        self.backends
            .get(name)
            .cloned()
            .ok_or_else(|| SolveError::UnknownBackend(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.backends.keys().map(|s| s.as_str()).collect()
    }
}

/// Registry with the built-in backend installed under its default name.
pub fn default_registry() -> SolverRegistry {
    let mut reg = SolverRegistry::new();
    reg.register(Arc::new(BranchAndBound));
    reg
}

/// Built-in deterministic branch-and-bound over LP relaxations.
///
/// Branching picks the most-fractional binary (ties by lowest variable
/// index); node selection is best-bound (ties by node id). A
/// round-and-resolve heuristic seeds incumbents early.
pub struct BranchAndBound;

impl SolverBackend for BranchAndBound {
    fn name(&self) -> &str {
        "bnb"
    }

    fn solve(&self, prog: &Program, opts: &SolveOptions) -> Result<Solution, SolveError> {
        solve_bnb(prog, opts)
    }
}

const HEURISTIC_EVERY: usize = 25;
const LP_ITER_LIMIT: usize = 2_000_000;

/// Diagnostic: solve only the LP relaxation and report (objective,
/// iterations, wall time). Used by benchmarks; not part of the stable API.
#[doc(hidden)]
pub fn relaxation_probe(prog: &Program, iter_limit: usize) -> Result<(f64, usize, Duration), SolveError> {
    let ctx = build_lp(prog);
    let t0 = Instant::now();
    let mut s = Simplex::new(&ctx.lp, &ctx.base_lb, &ctx.base_ub);
    match s.solve(None, iter_limit) {
        Ok(LpOutcome::Optimal { obj, .. }) => {
            let o = if ctx.negate { -obj } else { obj };
            Ok((o, s.iterations(), t0.elapsed()))
        }
        Ok(LpOutcome::Infeasible) => Err(SolveError::Numerical("infeasible".into())),
        Ok(LpOutcome::Unbounded) => Err(SolveError::Unbounded),
        Err(e) => Err(SolveError::Numerical(e.0)),
    }
}

struct Node {
    id: usize,
    bound: f64,
    parent: Option<usize>,
    branch: Option<(usize, f64, f64)>,
    basis: Option<BasisSnapshot>,
    relax: Option<Vec<f64>>,
}

struct MipContext {
    lp: SparseLp,
    base_lb: Vec<f64>,
    base_ub: Vec<f64>,
    binaries: Vec<usize>,
    negate: bool,
}

fn build_lp(prog: &Program) -> MipContext {
    let n = prog.num_vars();
    let m = prog.num_rows();
    let negate = prog.sense == crate::Sense::Maximize;

    // column-compressed assembly with per-row inf-norm scaling
    let mut row_scale = vec![1.0_f64; m];
    for (i, row) in prog.rows.iter().enumerate() {
        let mx = row
            .terms
            .iter()
            .fold(0.0_f64, |acc, &(_, c)| acc.max(c.abs()));
        if mx > 0.0 {
            row_scale[i] = 1.0 / mx;
        }
    }
    let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for (i, row) in prog.rows.iter().enumerate() {
        for &(v, c) in &row.terms {
            cols[v.index()].push((i, c * row_scale[i]));
        }
    }
    let mut col_ptr = vec![0usize];
    let mut row_idx = Vec::new();
    let mut vals = Vec::new();
    for col in &cols {
        for &(r, c) in col {
            row_idx.push(r);
            vals.push(c);
        }
        col_ptr.push(row_idx.len());
    }
    let cost: Vec<f64> = prog
        .vars
        .iter()
        .map(|v| if negate { -v.obj } else { v.obj })
        .collect();
    let mut rhs = Vec::with_capacity(m);
    let mut log_lb = Vec::with_capacity(m);
    let mut log_ub = Vec::with_capacity(m);
    for (i, row) in prog.rows.iter().enumerate() {
        rhs.push(row.rhs * row_scale[i]);
        match row.op {
            crate::RowOp::Le => {
                log_lb.push(0.0);
                log_ub.push(f64::INFINITY);
            }
            crate::RowOp::Ge => {
                log_lb.push(f64::NEG_INFINITY);
                log_ub.push(0.0);
            }
            crate::RowOp::Eq => {
                log_lb.push(0.0);
                log_ub.push(0.0);
            }
        }
    }
    let base_lb: Vec<f64> = prog.vars.iter().map(|v| v.lb).collect();
    let base_ub: Vec<f64> = prog.vars.iter().map(|v| v.ub).collect();
    let binaries: Vec<usize> = prog
        .vars
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind == VarKind::Binary)
        .map(|(i, _)| i)
        .collect();
    MipContext {
        lp: SparseLp {
            m,
            n,
            col_ptr,
            row_idx,
            vals,
            cost,
            rhs,
            log_lb,
            log_ub,
        },
        base_lb,
        base_ub,
        binaries,
        negate,
    }
}

/// Bound-probing presolve: fix any binary whose 0 or 1 setting makes some
/// row unsatisfiable even at the most favorable bounds of the remaining
/// variables. Iterated to a fixpoint so chained implications (indicator ->
/// gate -> connectivity) resolve before the search starts.
fn probe_binaries(prog: &Program, lb: &mut [f64], ub: &mut [f64]) {
    for _pass in 0..10 {
        let mut changed = false;
        for row in &prog.rows {
            let mut act_min = 0.0_f64;
            let mut act_max = 0.0_f64;
            for &(v, c) in &row.terms {
                let (l, u) = (lb[v.index()], ub[v.index()]);
                if c >= 0.0 {
                    act_min += c * l;
                    act_max += c * u;
                } else {
                    act_min += c * u;
                    act_max += c * l;
                }
            }
            if !act_min.is_finite() || !act_max.is_finite() {
                continue;
            }
            for &(v, c) in &row.terms {
                let j = v.index();
                if prog.vars[j].kind != VarKind::Binary || lb[j] == ub[j] {
                    continue;
                }
                // contribution ranges for b in {0, 1}
                let (mn_b, mx_b) = if c >= 0.0 { (0.0, c) } else { (c, 0.0) };
                let tol = 1e-9 * (1.0 + row.rhs.abs());
                match row.op {
                    crate::RowOp::Le => {
                        if act_min - mn_b + c > row.rhs + tol {
                            ub[j] = 0.0;
                            changed = true;
                        } else if act_min - mn_b > row.rhs + tol {
                            lb[j] = 1.0;
                            changed = true;
                        }
                    }
                    crate::RowOp::Ge => {
                        if act_max - mx_b + c < row.rhs - tol {
                            ub[j] = 0.0;
                            changed = true;
                        } else if act_max - mx_b < row.rhs - tol {
                            lb[j] = 1.0;
                            changed = true;
                        }
                    }
                    crate::RowOp::Eq => {
                        if act_min - mn_b + c > row.rhs + tol
                            || act_max - mx_b + c < row.rhs - tol
                        {
                            ub[j] = 0.0;
                            changed = true;
                        } else if act_min - mn_b > row.rhs + tol
                            || act_max - mx_b < row.rhs - tol
                        {
                            lb[j] = 1.0;
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
}

fn node_bounds(ctx: &MipContext, nodes: &[Node], mut at: Option<usize>) -> (Vec<f64>, Vec<f64>) {
    let mut lb = ctx.base_lb.clone();
    let mut ub = ctx.base_ub.clone();
    let mut seen: Vec<usize> = Vec::new();
    while let Some(i) = at {
        if let Some((v, l, u)) = nodes[i].branch {
            if !seen.contains(&v) {
                lb[v] = l;
                ub[v] = u;
                seen.push(v);
            }
        }
        at = nodes[i].parent;
    }
    (lb, ub)
}

fn most_fractional(ctx: &MipContext, x: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for &v in &ctx.binaries {
        let xv = x[v];
        let frac_dist = (xv - xv.round()).abs();
        if frac_dist > INTEGRALITY_TOL {
            let score = (xv - 0.5).abs();
            match best {
                Some((_, s)) if s <= score => {}
                _ => best = Some((v, score)),
            }
        }
    }
    best.map(|(v, _)| (v, x[v]))
}

fn solve_bnb(prog: &Program, opts: &SolveOptions) -> Result<Solution, SolveError> {
    let start = Instant::now();
    let mut ctx = build_lp(prog);
    {
        let MipContext {
            ref mut base_lb,
            ref mut base_ub,
            ..
        } = ctx;
        probe_binaries(prog, base_lb, base_ub);
    }
    if ctx
        .base_lb
        .iter()
        .zip(&ctx.base_ub)
        .any(|(l, u)| l > u)
    {
        return Ok(finish(
            prog,
            &ctx,
            None,
            SolStatus::Infeasible,
            start.elapsed(),
            0,
            f64::INFINITY,
            Some("bound probing fixed a binary both ways; constraints conflict".into()),
        ));
    }
    let over_time = |elapsed: Duration| opts.time_limit.map_or(false, |tl| elapsed > tl);

    let run_lp = |lb: &[f64], ub: &[f64], warm: Option<&BasisSnapshot>| {
        let mut s = Simplex::new(&ctx.lp, lb, ub);
        s.solve(warm, LP_ITER_LIMIT)
            .map_err(|e| SolveError::Numerical(e.0))
    };

    let mut nodes: Vec<Node> = Vec::new();
    let mut open: Vec<usize> = Vec::new(); // indices of solved, unbranched nodes
    let mut incumbent: Option<(Vec<f64>, f64)> = None; // (values, internal obj)
    let mut solved_count = 0usize;

    // root
    nodes.push(Node {
        id: 0,
        bound: f64::NEG_INFINITY,
        parent: None,
        branch: None,
        basis: None,
        relax: None,
    });
    {
        let (lb, ub) = node_bounds(&ctx, &nodes, Some(0));
        match run_lp(&lb, &ub, None)? {
            LpOutcome::Optimal { x, obj, basis } => {
                nodes[0].bound = obj;
                nodes[0].basis = Some(basis);
                nodes[0].relax = Some(x);
                open.push(0);
            }
            LpOutcome::Infeasible => {
                let hint = Some(infeasibility_hint(prog, &ctx, &lb, &ub));
                return Ok(finish(
                    prog,
                    &ctx,
                    None,
                    SolStatus::Infeasible,
                    start.elapsed(),
                    0,
                    f64::INFINITY,
                    hint,
                ));
            }
            LpOutcome::Unbounded => return Err(SolveError::Unbounded),
        }
        solved_count += 1;
    }

    // LP-guided dive from the root: repeatedly fix the most-integral
    // fractional binary and re-solve, flipping on infeasibility. Cheap and
    // usually lands a first incumbent that lets best-bound prune.
    if !ctx.binaries.is_empty() && incumbent.is_none() {
        let mut lb = ctx.base_lb.clone();
        let mut ub = ctx.base_ub.clone();
        let mut cur_x = nodes[0].relax.clone().unwrap();
        let mut basis = nodes[0].basis.clone();
        let mut steps = 0usize;
        loop {
            steps += 1;
            if steps > 4 * ctx.binaries.len() + 4 {
                break;
            }
            let mut pick: Option<(usize, f64)> = None;
            for &b in &ctx.binaries {
                let d = (cur_x[b] - cur_x[b].round()).abs();
                if d > INTEGRALITY_TOL {
                    match pick {
                        Some((_, pd)) if pd <= d => {}
                        _ => pick = Some((b, d)),
                    }
                }
            }
            let Some((b, _)) = pick else {
                try_incumbent(prog, &ctx, &cur_x, &mut incumbent);
                break;
            };
            let fix = cur_x[b].round();
            lb[b] = fix;
            ub[b] = fix;
            match run_lp(&lb, &ub, basis.as_ref())? {
                LpOutcome::Optimal { x, basis: bs, .. } => {
                    cur_x = x;
                    basis = Some(bs);
                }
                LpOutcome::Infeasible => {
                    let flipped = 1.0 - fix;
                    lb[b] = flipped;
                    ub[b] = flipped;
                    match run_lp(&lb, &ub, basis.as_ref())? {
                        LpOutcome::Optimal { x, basis: bs, .. } => {
                            cur_x = x;
                            basis = Some(bs);
                        }
                        _ => break,
                    }
                }
                LpOutcome::Unbounded => return Err(SolveError::Unbounded),
            }
        }
    }

    let gap_of = |inc: &Option<(Vec<f64>, f64)>, bound: f64| -> f64 {
        match inc {
            None => f64::INFINITY,
            Some((_, best)) => (best - bound).max(0.0) / best.abs().max(1.0),
        }
    };

    let mut status = SolStatus::Optimal;
    let final_gap;
    let mut next_id = 1usize;
    loop {
        // best-bound node selection; ties go to the most recent node so
        // equal-bound regions are plunged depth-first
        open.sort_by(|a, b| {
            nodes[*a]
                .bound
                .total_cmp(&nodes[*b].bound)
                .then(nodes[*b].id.cmp(&nodes[*a].id))
        });
        // prune against incumbent
        if let Some((_, best)) = &incumbent {
            let cutoff = *best - opts.gap * best.abs().max(1.0);
            open.retain(|&i| nodes[i].bound < cutoff);
        }
        let Some(&cur) = open.first() else {
            final_gap = if incumbent.is_some() { 0.0 } else { f64::INFINITY };
            break;
        };
        let bound = nodes[cur].bound;
        let g = gap_of(&incumbent, bound);
        if g <= opts.gap {
            final_gap = g;
            break;
        }
        if over_time(start.elapsed()) || solved_count >= opts.node_limit {
            status = SolStatus::TimeLimit;
            final_gap = g;
            break;
        }
        if opts.verbose && solved_count % 100 <= 1 {
            eprintln!(
                "[bnb] nodes={} open={} bound={:.4} incumbent={:?} gap={:.5} t={:?}",
                solved_count,
                open.len(),
                bound,
                incumbent.as_ref().map(|(_, b)| *b),
                g,
                start.elapsed()
            );
        }
        open.remove(0);

        let x = nodes[cur].relax.take().expect("open node keeps relaxation");

        let Some((bvar, _)) = most_fractional(&ctx, &x) else {
            try_incumbent(prog, &ctx, &x, &mut incumbent);
            continue;
        };

        // Round-to-bound closing: if rounding the fractional binaries stays
        // feasible and already achieves this node's relaxation bound, the
        // subtree is solved — take the incumbent and skip branching. This
        // is what keeps indicator binaries with no objective pressure from
        // exploding the tree.
        let mut closed = false;
        for floor_mode in [true, false] {
            if let Some((vals, internal)) = rounded_candidate(prog, &ctx, &x, floor_mode) {
                if internal <= bound + 1e-9 * bound.abs().max(1.0) {
                    accept_incumbent(vals, internal, &mut incumbent);
                    closed = true;
                    break;
                }
            }
        }
        if closed {
            continue;
        }

        for (cl, cu) in [(0.0, 0.0), (1.0, 1.0)] {
            let id = next_id;
            next_id += 1;
            nodes.push(Node {
                id,
                bound: f64::NEG_INFINITY,
                parent: Some(cur),
                branch: Some((bvar, cl, cu)),
                basis: None,
                relax: None,
            });
            let ni = nodes.len() - 1;
            let (clb, cub) = node_bounds(&ctx, &nodes, Some(ni));
            match run_lp(&clb, &cub, nodes[cur].basis.as_ref())? {
                LpOutcome::Optimal { x, obj, basis } => {
                    nodes[ni].bound = obj;
                    if most_fractional(&ctx, &x).is_none() {
                        try_incumbent(prog, &ctx, &x, &mut incumbent);
                    } else {
                        nodes[ni].basis = Some(basis);
                        nodes[ni].relax = Some(x);
                        open.push(ni);
                    }
                }
                LpOutcome::Infeasible => {}
                LpOutcome::Unbounded => return Err(SolveError::Unbounded),
            }
            solved_count += 1;
        }
        nodes[cur].basis = None;

        if solved_count % HEURISTIC_EVERY == 0 {
            if let Some(&peek) = open.first() {
                heuristic_round(prog, &ctx, &nodes, peek, &run_lp, &mut incumbent)?;
            }
        }
    }

    if incumbent.is_none() {
        let status = if status == SolStatus::TimeLimit {
            SolStatus::TimeLimit
        } else {
            SolStatus::Infeasible
        };
        return Ok(finish(
            prog,
            &ctx,
            None,
            status,
            start.elapsed(),
            solved_count,
            f64::INFINITY,
            None,
        ));
    }
    Ok(finish(
        prog,
        &ctx,
        incumbent,
        status,
        start.elapsed(),
        solved_count,
        final_gap,
        None,
    ))
}

fn try_incumbent(
    prog: &Program,
    ctx: &MipContext,
    x: &[f64],
    incumbent: &mut Option<(Vec<f64>, f64)>,
) -> bool {
    let mut vals = x[..ctx.lp.n].to_vec();
    for &b in &ctx.binaries {
        let r = vals[b].round();
        if (vals[b] - r).abs() > INTEGRALITY_TOL {
            return false;
        }
        vals[b] = r;
    }
    if prog.max_violation(&vals) > FEASIBILITY_TOL {
        return false;
    }
    let internal: f64 = vals.iter().zip(&ctx.lp.cost).map(|(xv, c)| xv * c).sum();
    accept_incumbent(vals, internal, incumbent)
}

fn accept_incumbent(
    vals: Vec<f64>,
    internal: f64,
    incumbent: &mut Option<(Vec<f64>, f64)>,
) -> bool {
    match incumbent {
        Some((_, best)) if *best <= internal => false,
        _ => {
            *incumbent = Some((vals, internal));
            true
        }
    }
}

/// Round every fractional binary (down in `floor_mode`, to nearest
/// otherwise) and return the candidate if it is feasible.
fn rounded_candidate(
    prog: &Program,
    ctx: &MipContext,
    x: &[f64],
    floor_mode: bool,
) -> Option<(Vec<f64>, f64)> {
    let mut vals = x[..ctx.lp.n].to_vec();
    for &b in &ctx.binaries {
        let v = vals[b];
        let r = v.round();
        vals[b] = if (v - r).abs() <= INTEGRALITY_TOL {
            r
        } else if floor_mode {
            v.floor()
        } else {
            r
        };
    }
    if prog.max_violation(&vals) > FEASIBILITY_TOL {
        return None;
    }
    let internal: f64 = vals.iter().zip(&ctx.lp.cost).map(|(xv, c)| xv * c).sum();
    Some((vals, internal))
}

fn heuristic_round(
    prog: &Program,
    ctx: &MipContext,
    nodes: &[Node],
    node: usize,
    run_lp: &impl Fn(
        &[f64],
        &[f64],
        Option<&BasisSnapshot>,
    ) -> Result<LpOutcome, SolveError>,
    incumbent: &mut Option<(Vec<f64>, f64)>,
) -> Result<(), SolveError> {
    let Some(relax) = nodes[node].relax.as_ref() else {
        return Ok(());
    };
    let (lb, ub) = node_bounds(ctx, nodes, Some(node));
    let mut hlb = ctx.base_lb.clone();
    let mut hub = ctx.base_ub.clone();
    for &b in &ctx.binaries {
        let r = relax[b].round().clamp(lb[b], ub[b]);
        hlb[b] = r;
        hub[b] = r;
    }
    if let LpOutcome::Optimal { x, .. } = run_lp(&hlb, &hub, nodes[node].basis.as_ref())? {
        try_incumbent(prog, ctx, &x, incumbent);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn finish(
    prog: &Program,
    ctx: &MipContext,
    incumbent: Option<(Vec<f64>, f64)>,
    status: SolStatus,
    wall: Duration,
    nodes: usize,
    gap: f64,
    hint: Option<String>,
) -> Solution {
    match incumbent {
        Some((vals, internal)) => {
            let objective = if ctx.negate { -internal } else { internal };
            let max_residual = prog.max_violation(&vals);
            Solution {
                status,
                values: vals,
                objective,
                wall,
                nodes,
                gap,
                max_residual,
                infeasibility_hint: None,
            }
        }
        None => Solution {
            status,
            values: vec![0.0; prog.num_vars()],
            objective: f64::NAN,
            wall,
            nodes,
            gap,
            max_residual: f64::NAN,
            infeasibility_hint: hint,
        },
    }
}

/// Binary-search the shortest row prefix that is already infeasible and
/// name its last row: the first failing constraint subset found.
fn infeasibility_hint(prog: &Program, ctx: &MipContext, lb: &[f64], ub: &[f64]) -> String {
    if prog.num_rows() > 5000 {
        return "relaxation infeasible (program too large for subset search)".to_string();
    }
    let prefix_feasible = |k: usize| -> bool {
        let mut sub = ctx.lp.clone();
        // relax rows beyond the prefix by freeing their logical bounds
        for r in k..sub.m {
            sub.log_lb[r] = f64::NEG_INFINITY;
            sub.log_ub[r] = f64::INFINITY;
        }
        let mut s = Simplex::new(&sub, lb, ub);
        matches!(
            s.solve(None, LP_ITER_LIMIT),
            Ok(LpOutcome::Optimal { .. }) | Ok(LpOutcome::Unbounded)
        )
    };
    if !prefix_feasible(0) {
        return "variable bounds alone are inconsistent".to_string();
    }
    let (mut lo, mut hi) = (0usize, prog.num_rows());
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if prefix_feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    format!(
        "rows 0..={} form an infeasible subset; last added row: {}",
        hi - 1,
        prog.rows[hi - 1].name
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{LinExpr, Program, RowOp, Sense};

    fn bnb(prog: &Program) -> Solution {
        BranchAndBound
            .solve(prog, &SolveOptions::default())
            .expect("solve")
    }

    #[test]
    fn lp_max_x() {
        let mut p = Program::new(Sense::Maximize);
        let x = p.add_continuous("x", 0.0, 3.0, 1.0);
        let s = bnb(&p);
        assert_eq!(s.status, SolStatus::Optimal);
        assert!((s.value(x) - 3.0).abs() < 1e-9);
        assert!((s.objective - 3.0).abs() < 1e-9);
    }

    #[test]
    fn milp_rounding_forced() {
        // max x+y st x+y <= 1.5, x,y binary -> objective 1
        let mut p = Program::new(Sense::Maximize);
        let x = p.add_binary("x", 1.0);
        let y = p.add_binary("y", 1.0);
        let mut e = LinExpr::new();
        e.add_term(x, 1.0).add_term(y, 1.0);
        p.add_row("cap", e, RowOp::Le, 1.5).unwrap();
        let s = bnb(&p);
        assert_eq!(s.status, SolStatus::Optimal);
        assert!((s.objective - 1.0).abs() < 1e-9, "{}", s.objective);
    }

    #[test]
    fn knapsack_matches_exhaustive_enumeration() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _case in 0..10 {
            let n = 8;
            let weights: Vec<f64> = (0..n).map(|_| rng.random_range(1..20) as f64).collect();
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(1..30) as f64).collect();
            let cap: f64 = weights.iter().sum::<f64>() * 0.5;

            let mut p = Program::new(Sense::Maximize);
            let vars: Vec<_> = (0..n)
                .map(|i| p.add_binary(format!("item{}", i), values[i]))
                .collect();
            let mut e = LinExpr::new();
            for i in 0..n {
                e.add_term(vars[i], weights[i]);
            }
            p.add_row("capacity", e, RowOp::Le, cap).unwrap();
            let s = bnb(&p);

            // brute-force oracle over all 2^8 subsets
            let mut best = 0.0_f64;
            for mask in 0u32..(1 << n) {
                let w: f64 = (0..n)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| weights[i])
                    .sum();
                if w <= cap {
                    let v: f64 = (0..n)
                        .filter(|i| mask & (1 << i) != 0)
                        .map(|i| values[i])
                        .sum();
                    best = best.max(v);
                }
            }
            assert_eq!(s.status, SolStatus::Optimal);
            assert!(
                (s.objective - best).abs() < 1e-6,
                "bnb {} vs brute {}",
                s.objective,
                best
            );
        }
    }

    #[test]
    fn all_binary_matches_enumeration_16() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 12;
        let mut p = Program::new(Sense::Minimize);
        let costs: Vec<f64> = (0..n)
            .map(|_| rng.random_range(-10..10) as f64)
            .collect();
        let vars: Vec<_> = (0..n)
            .map(|i| p.add_binary(format!("b{}", i), costs[i]))
            .collect();
        // two covering constraints
        let mut e1 = LinExpr::new();
        let mut e2 = LinExpr::new();
        for i in 0..n {
            if i % 2 == 0 {
                e1.add_term(vars[i], 1.0);
            } else {
                e2.add_term(vars[i], 1.0);
            }
        }
        p.add_row("cover_even", e1, RowOp::Ge, 2.0).unwrap();
        p.add_row("cover_odd", e2, RowOp::Ge, 3.0).unwrap();
        let s = bnb(&p);

        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << n) {
            let mut even = 0;
            let mut odd = 0;
            let mut c = 0.0;
            for i in 0..n {
                if mask & (1 << i) != 0 {
                    c += costs[i];
                    if i % 2 == 0 {
                        even += 1;
                    } else {
                        odd += 1;
                    }
                }
            }
            if even >= 2 && odd >= 3 {
                best = best.min(c);
            }
        }
        assert_eq!(s.status, SolStatus::Optimal);
        assert!((s.objective - best).abs() < 1e-6);
    }

    #[test]
    fn infeasible_reports_hint() {
        let mut p = Program::new(Sense::Minimize);
        let x = p.add_continuous("x", 0.0, 10.0, 1.0);
        p.add_row("lo", LinExpr::var(x), RowOp::Ge, 5.0).unwrap();
        p.add_row("hi", LinExpr::var(x), RowOp::Le, 2.0).unwrap();
        let s = bnb(&p);
        assert_eq!(s.status, SolStatus::Infeasible);
        let hint = s.infeasibility_hint.expect("hint");
        assert!(hint.contains("hi"), "{}", hint);
    }

    #[test]
    fn registry_lookup() {
        let reg = default_registry();
        assert!(reg.get("bnb").is_ok());
        assert!(reg.get("missing").is_err());
        assert_eq!(reg.names(), vec!["bnb"]);
    }

    #[test]
    fn solution_residual_is_small() {
        let mut p = Program::new(Sense::Maximize);
        let x = p.add_continuous("x", 0.0, 10.0, 1.0);
        let y = p.add_continuous("y", 0.0, 10.0, 1.0);
        let mut e = LinExpr::new();
        e.add_term(x, 2.0).add_term(y, 3.0);
        p.add_row("r", e, RowOp::Le, 12.0).unwrap();
        let s = bnb(&p);
        assert!(s.max_residual <= 1e-6);
    }
}
