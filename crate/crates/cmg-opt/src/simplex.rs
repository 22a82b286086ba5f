//! Sparse bounded-variable primal simplex.
//!
//! Solves `min c'x  s.t.  A x + s = rhs,  l <= (x,s) <= u` where the
//! logical variables `s` encode row senses. The basis is kept as a
//! sparse LU factorization (left-looking with partial pivoting) updated
//! by product-form eta vectors and refactorized periodically. Phase 1
//! minimizes basic-variable bound violations with the same pivot
//! machinery (composite method), so the solver self-switches to phase 2
//! once feasible.
//!
//! All tie-breaking is by lowest index, which makes the solve path a
//! pure function of the input.

const FEAS_TOL: f64 = 1e-7;
const PIVOT_TOL: f64 = 1e-8;
const ZERO_TOL: f64 = 1e-12;
const LU_SINGULAR_TOL: f64 = 1e-10;
const REFACTOR_EVERY: usize = 100;
const STALL_LIMIT: usize = 1000;
const UNSET: u32 = u32::MAX;

/// Column-compressed LP data. Structural columns are stored explicitly;
/// each row's logical column is an implicit unit vector.
#[derive(Debug, Clone)]
pub(crate) struct SparseLp {
    pub m: usize,
    pub n: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub vals: Vec<f64>,
    /// Minimization costs for structural columns.
    pub cost: Vec<f64>,
    pub rhs: Vec<f64>,
    pub log_lb: Vec<f64>,
    pub log_ub: Vec<f64>,
}

impl SparseLp {
    fn ncols(&self) -> usize {
        self.n + self.m
    }

    fn col_range(&self, j: usize) -> std::ops::Range<usize> {
        self.col_ptr[j]..self.col_ptr[j + 1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VState {
    Basic,
    AtLower,
    AtUpper,
    /// Nonbasic free variable parked at zero.
    Free,
}

/// Basis snapshot for warm starts between branch-and-bound nodes.
#[derive(Debug, Clone)]
pub(crate) struct BasisSnapshot {
    cols: Vec<u32>,
    states: Vec<u8>,
}

#[derive(Debug, Clone)]
pub(crate) enum LpOutcome {
    Optimal {
        /// Values for all columns (structural first).
        x: Vec<f64>,
        obj: f64,
        basis: BasisSnapshot,
    },
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub(crate) struct NumericalError(pub String);

struct Eta {
    pos: usize,
    pivot: f64,
    terms: Vec<(u32, f64)>,
}

#[derive(Default)]
struct Lu {
    /// Per elimination position: subdiagonal multipliers keyed by
    /// original row index.
    l_cols: Vec<Vec<(u32, f64)>>,
    /// Per elimination position: above-diagonal U entries keyed by
    /// earlier position.
    u_cols: Vec<Vec<(u32, f64)>>,
    u_diag: Vec<f64>,
    /// position -> original row chosen as pivot
    prow: Vec<u32>,
    /// original row -> position (UNSET until pivoted)
    pinv: Vec<u32>,
}

pub(crate) struct Simplex<'a> {
    lp: &'a SparseLp,
    lb: Vec<f64>,
    ub: Vec<f64>,
    state: Vec<VState>,
    basis: Vec<usize>,
    x: Vec<f64>,
    lu: Lu,
    etas: Vec<Eta>,
    work_row: Vec<f64>,
    work_pos: Vec<f64>,
    work_pos2: Vec<f64>,
    cost_scale: f64,
    bland: bool,
    stall: usize,
    iterations: usize,
}

impl<'a> Simplex<'a> {
    pub(crate) fn new(lp: &'a SparseLp, struct_lb: &[f64], struct_ub: &[f64]) -> Self {
        let m = lp.m;
        let nc = lp.ncols();
        let mut lb = Vec::with_capacity(nc);
        let mut ub = Vec::with_capacity(nc);
        lb.extend_from_slice(struct_lb);
        ub.extend_from_slice(struct_ub);
        lb.extend_from_slice(&lp.log_lb);
        ub.extend_from_slice(&lp.log_ub);
        let cost_scale = lp.cost.iter().fold(1.0_f64, |acc, c| acc.max(c.abs()));
        Simplex {
            lp,
            lb,
            ub,
            state: vec![VState::AtLower; nc],
            basis: Vec::with_capacity(m),
            x: vec![0.0; nc],
            lu: Lu::default(),
            etas: Vec::new(),
            work_row: vec![0.0; m],
            work_pos: vec![0.0; m],
            work_pos2: vec![0.0; m],
            cost_scale,
            bland: false,
            stall: 0,
            iterations: 0,
        }
    }

    fn nonbasic_rest(&mut self, j: usize) {
        let (l, u) = (self.lb[j], self.ub[j]);
        let (st, v) = match (l.is_finite(), u.is_finite()) {
            (true, true) => {
                if u.abs() < l.abs() {
                    (VState::AtUpper, u)
                } else {
                    (VState::AtLower, l)
                }
            }
            (true, false) => (VState::AtLower, l),
            (false, true) => (VState::AtUpper, u),
            (false, false) => (VState::Free, 0.0),
        };
        self.state[j] = st;
        self.x[j] = v;
    }

    fn slack_basis(&mut self) {
        let m = self.lp.m;
        self.basis.clear();
        for j in 0..self.lp.ncols() {
            self.nonbasic_rest(j);
        }
        for r in 0..m {
            let j = self.lp.n + r;
            self.basis.push(j);
            self.state[j] = VState::Basic;
        }
    }

    fn try_warm_start(&mut self, snap: &BasisSnapshot) -> bool {
        if snap.cols.len() != self.lp.m || snap.states.len() != self.lp.ncols() {
            return false;
        }
        if snap.cols.iter().any(|&c| c as usize >= self.lp.ncols()) {
            return false;
        }
        for j in 0..self.lp.ncols() {
            match snap.states[j] {
                0 => self.state[j] = VState::Basic,
                1 => {
                    if !self.lb[j].is_finite() {
                        return false;
                    }
                    self.state[j] = VState::AtLower;
                    self.x[j] = self.lb[j];
                }
                2 => {
                    if !self.ub[j].is_finite() {
                        return false;
                    }
                    self.state[j] = VState::AtUpper;
                    self.x[j] = self.ub[j];
                }
                _ => {
                    self.state[j] = VState::Free;
                    self.x[j] = 0.0;
                }
            }
        }
        self.basis = snap.cols.iter().map(|&c| c as usize).collect();
        true
    }

    fn snapshot(&self) -> BasisSnapshot {
        let cols = self.basis.iter().map(|&c| c as u32).collect();
        let states = self
            .state
            .iter()
            .map(|s| match s {
                VState::Basic => 0,
                VState::AtLower => 1,
                VState::AtUpper => 2,
                VState::Free => 3,
            })
            .collect();
        BasisSnapshot { cols, states }
    }

    fn column_entries(&self, j: usize) -> ColIter<'_> {
        if j < self.lp.n {
            ColIter::Struct {
                lp: self.lp,
                range: self.lp.col_range(j),
            }
        } else {
            ColIter::Logical {
                row: j - self.lp.n,
                done: false,
            }
        }
    }

    fn factorize(&mut self) -> Result<(), NumericalError> {
        let m = self.lp.m;
        let mut lu = Lu {
            l_cols: Vec::with_capacity(m),
            u_cols: Vec::with_capacity(m),
            u_diag: Vec::with_capacity(m),
            prow: Vec::with_capacity(m),
            pinv: vec![UNSET; m],
        };
        let mut w = vec![0.0_f64; m];
        let mut inpat = vec![false; m];
        let mut pattern: Vec<u32> = Vec::with_capacity(64);
        let mut mark = vec![false; m];
        let mut topo: Vec<u32> = Vec::with_capacity(64);
        let mut stack: Vec<(u32, usize)> = Vec::new();

        for jpos in 0..m {
            let col = self.basis[jpos];
            pattern.clear();
            topo.clear();
            for (r, v) in self.column_entries(col) {
                w[r] = v;
                if !inpat[r] {
                    inpat[r] = true;
                    pattern.push(r as u32);
                }
            }
            // Reachability over already-pivoted positions: reverse postorder
            // of this DFS is a valid left-looking elimination order and
            // covers every position the update phase can fill.
            let orig_len = pattern.len();
            for idx in 0..orig_len {
                let k0 = lu.pinv[pattern[idx] as usize];
                if k0 == UNSET || mark[k0 as usize] {
                    continue;
                }
                mark[k0 as usize] = true;
                stack.push((k0, 0));
                while let Some(top) = stack.last_mut() {
                    let k = top.0;
                    let kcol = &lu.l_cols[k as usize];
                    if top.1 < kcol.len() {
                        let r2 = kcol[top.1].0 as usize;
                        top.1 += 1;
                        let k2 = lu.pinv[r2];
                        if k2 != UNSET && !mark[k2 as usize] {
                            mark[k2 as usize] = true;
                            stack.push((k2, 0));
                        }
                    } else {
                        stack.pop();
                        topo.push(k);
                    }
                }
            }
            topo.reverse();
            let mut ucol: Vec<(u32, f64)> = Vec::with_capacity(topo.len());
            for &k in &topo {
                mark[k as usize] = false;
                let pr = lu.prow[k as usize] as usize;
                let ukj = w[pr];
                if ukj != 0.0 {
                    ucol.push((k, ukj));
                    for &(r, lval) in &lu.l_cols[k as usize] {
                        let ri = r as usize;
                        if !inpat[ri] {
                            inpat[ri] = true;
                            pattern.push(r);
                        }
                        w[ri] -= lval * ukj;
                    }
                }
            }
            // partial pivoting among rows not yet pivoted
            let mut pr = UNSET;
            let mut pmag = 0.0_f64;
            for &r in &pattern {
                let ri = r as usize;
                if lu.pinv[ri] == UNSET {
                    let a = w[ri].abs();
                    if a > pmag || (a == pmag && a > 0.0 && r < pr) {
                        pmag = a;
                        pr = r;
                    }
                }
            }
            if pr == UNSET || pmag < LU_SINGULAR_TOL {
                for &r in &pattern {
                    w[r as usize] = 0.0;
                    inpat[r as usize] = false;
                }
                return Err(NumericalError(format!(
                    "singular basis at column position {}",
                    jpos
                )));
            }
            let diag = w[pr as usize];
            let mut lcol: Vec<(u32, f64)> = Vec::new();
            for &r in &pattern {
                let ri = r as usize;
                if lu.pinv[ri] == UNSET && r != pr && w[ri] != 0.0 {
                    lcol.push((r, w[ri] / diag));
                }
            }
            lcol.sort_unstable_by_key(|e| e.0);
            for &r in &pattern {
                w[r as usize] = 0.0;
                inpat[r as usize] = false;
            }
            lu.pinv[pr as usize] = jpos as u32;
            lu.prow.push(pr);
            lu.u_diag.push(diag);
            lu.u_cols.push(ucol);
            lu.l_cols.push(lcol);
        }
        self.lu = lu;
        self.etas.clear();
        Ok(())
    }

    /// Solve B z = a. Input in row space (consumed), output in
    /// basis-position space.
    fn ftran(&self, a_row: &mut [f64], out: &mut [f64]) {
        let m = self.lp.m;
        for k in 0..m {
            let pr = self.lu.prow[k] as usize;
            let v = a_row[pr];
            out[k] = v;
            if v != 0.0 {
                for &(r, l) in &self.lu.l_cols[k] {
                    a_row[r as usize] -= l * v;
                }
            }
        }
        for j in (0..m).rev() {
            let xj = out[j] / self.lu.u_diag[j];
            out[j] = xj;
            if xj != 0.0 {
                for &(k, u) in &self.lu.u_cols[j] {
                    out[k as usize] -= u * xj;
                }
            }
        }
        for eta in &self.etas {
            let t = out[eta.pos] / eta.pivot;
            out[eta.pos] = t;
            if t != 0.0 {
                for &(i, wv) in &eta.terms {
                    out[i as usize] -= wv * t;
                }
            }
        }
    }

    /// Solve B' y = g. Input in basis-position space (consumed), output in
    /// row space.
    fn btran(&self, g: &mut [f64], out_row: &mut [f64]) {
        let m = self.lp.m;
        for eta in self.etas.iter().rev() {
            let mut acc = g[eta.pos];
            for &(i, wv) in &eta.terms {
                acc -= wv * g[i as usize];
            }
            g[eta.pos] = acc / eta.pivot;
        }
        for j in 0..m {
            let mut acc = g[j];
            for &(k, u) in &self.lu.u_cols[j] {
                acc -= u * g[k as usize];
            }
            g[j] = acc / self.lu.u_diag[j];
        }
        for r in out_row.iter_mut() {
            *r = 0.0;
        }
        for k in (0..m).rev() {
            let mut acc = g[k];
            for &(r, l) in &self.lu.l_cols[k] {
                acc -= l * out_row[r as usize];
            }
            out_row[self.lu.prow[k] as usize] = acc;
        }
    }

    /// x_B = B^-1 (rhs - N x_N)
    fn recompute_basics(&mut self) {
        let m = self.lp.m;
        let mut r = self.lp.rhs.clone();
        for j in 0..self.lp.ncols() {
            if self.state[j] != VState::Basic && self.x[j] != 0.0 {
                let xj = self.x[j];
                for (row, v) in self.column_entries(j) {
                    r[row] -= v * xj;
                }
            }
        }
        let mut out = std::mem::take(&mut self.work_pos);
        self.ftran(&mut r, &mut out);
        for i in 0..m {
            self.x[self.basis[i]] = out[i];
        }
        self.work_pos = out;
    }

    /// (sum, max) of basic bound violations.
    fn infeasibility(&self) -> (f64, f64) {
        let mut total = 0.0;
        let mut worst = 0.0_f64;
        for &b in &self.basis {
            let v = self.x[b];
            let viol = (self.lb[b] - v).max(v - self.ub[b]).max(0.0);
            total += viol;
            worst = worst.max(viol);
        }
        (total, worst)
    }

    fn objective(&self) -> f64 {
        (0..self.lp.n).map(|j| self.lp.cost[j] * self.x[j]).sum()
    }

    pub(crate) fn iterations(&self) -> usize {
        self.iterations
    }

    pub(crate) fn solve(
        &mut self,
        warm: Option<&BasisSnapshot>,
        iter_limit: usize,
    ) -> Result<LpOutcome, NumericalError> {
        let started_warm = match warm {
            Some(s) => self.try_warm_start(s),
            None => false,
        };
        if !started_warm {
            self.slack_basis();
        }
        if self.factorize().is_err() {
            self.slack_basis();
            self.factorize()?;
        }
        self.recompute_basics();

        let mut iters = 0usize;
        let mut since_refactor = 0usize;
        self.bland = false;
        self.stall = 0;
        let mut last_metric = f64::INFINITY;
        let mut last_phase1 = true;

        loop {
            iters += 1;
            self.iterations = iters;
            if iters > iter_limit {
                return Err(NumericalError(format!(
                    "simplex iteration limit {} exceeded",
                    iter_limit
                )));
            }
            if since_refactor >= REFACTOR_EVERY || self.etas.len() >= REFACTOR_EVERY {
                self.factorize()?;
                self.recompute_basics();
                since_refactor = 0;
            }

            let (infeas_sum, infeas_max) = self.infeasibility();
            let phase1 = infeas_max > FEAS_TOL;
            let metric = if phase1 { infeas_sum } else { self.objective() };
            if phase1 != last_phase1 {
                last_metric = f64::INFINITY;
                self.stall = 0;
                self.bland = false;
                last_phase1 = phase1;
            }
            if metric < last_metric - 1e-12 * (1.0 + metric.abs()) {
                last_metric = metric;
                self.stall = 0;
                self.bland = false;
            } else {
                self.stall += 1;
                if self.stall > STALL_LIMIT {
                    self.bland = true;
                }
            }

            let m = self.lp.m;
            let mut g = std::mem::take(&mut self.work_pos);
            for i in 0..m {
                let b = self.basis[i];
                g[i] = if phase1 {
                    let v = self.x[b];
                    if v < self.lb[b] - FEAS_TOL {
                        -1.0
                    } else if v > self.ub[b] + FEAS_TOL {
                        1.0
                    } else {
                        0.0
                    }
                } else if b < self.lp.n {
                    self.lp.cost[b]
                } else {
                    0.0
                };
            }
            let mut y = std::mem::take(&mut self.work_row);
            self.btran(&mut g, &mut y);
            self.work_pos = g;

            let dtol = if phase1 {
                1e-9
            } else {
                1e-9 * self.cost_scale.max(1.0)
            };

            let mut enter = usize::MAX;
            let mut enter_d = 0.0;
            let mut best_viol = dtol;
            for j in 0..self.lp.ncols() {
                let st = self.state[j];
                if st == VState::Basic || self.lb[j] == self.ub[j] {
                    continue;
                }
                let cj = if phase1 || j >= self.lp.n {
                    0.0
                } else {
                    self.lp.cost[j]
                };
                let mut d = cj;
                for (row, v) in self.column_entries(j) {
                    d -= y[row] * v;
                }
                let viol = match st {
                    VState::AtLower => -d,
                    VState::AtUpper => d,
                    VState::Free => d.abs(),
                    VState::Basic => unreachable!(),
                };
                if self.bland {
                    if viol > dtol {
                        enter = j;
                        enter_d = d;
                        break;
                    }
                } else if viol > best_viol {
                    best_viol = viol;
                    enter = j;
                    enter_d = d;
                }
            }
            self.work_row = y;

            if enter == usize::MAX {
                if phase1 {
                    return Ok(LpOutcome::Infeasible);
                }
                if !self.etas.is_empty() {
                    self.factorize()?;
                    self.recompute_basics();
                }
                let obj = self.objective();
                return Ok(LpOutcome::Optimal {
                    x: self.x.clone(),
                    obj,
                    basis: self.snapshot(),
                });
            }

            let dir = match self.state[enter] {
                VState::AtLower => 1.0,
                VState::AtUpper => -1.0,
                VState::Free => {
                    if enter_d < 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                }
                VState::Basic => unreachable!(),
            };

            let mut acol = std::mem::take(&mut self.work_row);
            acol.iter_mut().for_each(|v| *v = 0.0);
            for (row, v) in self.column_entries(enter) {
                acol[row] = v;
            }
            let mut w = std::mem::take(&mut self.work_pos2);
            self.ftran(&mut acol, &mut w);
            acol.iter_mut().for_each(|v| *v = 0.0);
            self.work_row = acol;

            let range = self.ub[enter] - self.lb[enter];
            let mut t_best = if range.is_finite() {
                range
            } else {
                f64::INFINITY
            };
            let mut leave: Option<(usize, VState)> = None;
            let mut leave_w = 0.0_f64;
            for i in 0..m {
                let wi = w[i];
                if wi.abs() < PIVOT_TOL {
                    continue;
                }
                let b = self.basis[i];
                let xv = self.x[b];
                let gcoef = dir * wi;
                let (t, target) = if phase1 && xv < self.lb[b] - FEAS_TOL {
                    if gcoef < 0.0 {
                        ((self.lb[b] - xv) / -gcoef, VState::AtLower)
                    } else {
                        continue;
                    }
                } else if phase1 && xv > self.ub[b] + FEAS_TOL {
                    if gcoef > 0.0 {
                        ((xv - self.ub[b]) / gcoef, VState::AtUpper)
                    } else {
                        continue;
                    }
                } else if gcoef > 0.0 {
                    if self.lb[b].is_finite() {
                        ((xv - self.lb[b]).max(0.0) / gcoef, VState::AtLower)
                    } else {
                        continue;
                    }
                } else if self.ub[b].is_finite() {
                    ((self.ub[b] - xv).max(0.0) / -gcoef, VState::AtUpper)
                } else {
                    continue;
                };
                let better = if self.bland {
                    t < t_best - ZERO_TOL
                        || (t < t_best + ZERO_TOL
                            && leave.map_or(true, |(p, _)| self.basis[i] < self.basis[p]))
                } else {
                    t < t_best - ZERO_TOL
                        || (t < t_best + ZERO_TOL && wi.abs() > leave_w.abs() + ZERO_TOL)
                };
                if better {
                    t_best = t.max(0.0);
                    leave = Some((i, target));
                    leave_w = wi;
                }
            }

            if !t_best.is_finite() {
                w.iter_mut().for_each(|v| *v = 0.0);
                self.work_pos2 = w;
                if phase1 {
                    return Err(NumericalError(
                        "unbounded phase-1 direction (numerical trouble)".into(),
                    ));
                }
                return Ok(LpOutcome::Unbounded);
            }

            let t = t_best;
            for i in 0..m {
                if w[i] != 0.0 {
                    let b = self.basis[i];
                    self.x[b] -= t * dir * w[i];
                }
            }
            match leave {
                None => {
                    self.x[enter] += t * dir;
                    self.state[enter] = match self.state[enter] {
                        VState::AtLower => VState::AtUpper,
                        VState::AtUpper => VState::AtLower,
                        other => other,
                    };
                    self.x[enter] = match self.state[enter] {
                        VState::AtUpper => self.ub[enter],
                        VState::AtLower => self.lb[enter],
                        _ => self.x[enter],
                    };
                }
                Some((r, target)) => {
                    let leaving = self.basis[r];
                    self.x[enter] += t * dir;
                    self.x[leaving] = match target {
                        VState::AtLower => self.lb[leaving],
                        VState::AtUpper => self.ub[leaving],
                        _ => self.x[leaving],
                    };
                    self.state[leaving] = target;
                    self.state[enter] = VState::Basic;
                    self.basis[r] = enter;
                    let mut terms: Vec<(u32, f64)> = Vec::with_capacity(16);
                    for i in 0..m {
                        if i != r && w[i].abs() > ZERO_TOL {
                            terms.push((i as u32, w[i]));
                        }
                    }
                    self.etas.push(Eta {
                        pos: r,
                        pivot: w[r],
                        terms,
                    });
                    since_refactor += 1;
                }
            }
            w.iter_mut().for_each(|v| *v = 0.0);
            self.work_pos2 = w;
        }
    }
}

enum ColIter<'a> {
    Struct {
        lp: &'a SparseLp,
        range: std::ops::Range<usize>,
    },
    Logical {
        row: usize,
        done: bool,
    },
}

impl<'a> Iterator for ColIter<'a> {
    type Item = (usize, f64);

    fn next(&mut self) -> Option<(usize, f64)> {
        match self {
            ColIter::Struct { lp, range } => {
                let i = range.next()?;
                Some((lp.row_idx[i], lp.vals[i]))
            }
            ColIter::Logical { row, done } => {
                if *done {
                    None
                } else {
                    *done = true;
                    Some((*row, 1.0))
                }
            }
        }
    }
}
