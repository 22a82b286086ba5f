use std::fmt;
use std::io::{self, Write};
use std::time::Duration;

use crate::expr::LinExpr;
use crate::OptError;

/// Handle to a declared variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub(crate) u32);

impl VarId {
    /// Placeholder for slots that are never read (absent phases in fixed
    /// per-phase arrays). Dereferencing it panics.
    pub const INVALID: VarId = VarId(u32::MAX);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Handle to a constraint row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RowId(pub(crate) u32);

impl RowId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Continuous,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowOp {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone)]
pub(crate) struct VarDef {
    pub name: String,
    pub kind: VarKind,
    pub lb: f64,
    pub ub: f64,
    pub obj: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Row {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub op: RowOp,
    pub rhs: f64,
}

/// A mixed-binary linear program with an optional set of convex
/// piecewise-linear penalty parts already materialized as epigraph
/// variables and rows.
#[derive(Debug, Clone)]
pub struct Program {
    pub(crate) sense: Sense,
    pub(crate) vars: Vec<VarDef>,
    pub(crate) rows: Vec<Row>,
}

impl Program {
    pub fn new(sense: Sense) -> Self {
        Self {
            sense,
            vars: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_binaries(&self) -> usize {
        self.vars.iter().filter(|v| v.kind == VarKind::Binary).count()
    }

    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        kind: VarKind,
        lb: f64,
        ub: f64,
        obj: f64,
    ) -> VarId {
        let name = name.into();
        let (lb, ub) = match kind {
            VarKind::Binary => (lb.max(0.0), ub.min(1.0)),
            VarKind::Continuous => (lb, ub),
        };
        debug_assert!(lb <= ub, "invalid bounds for {}", name);
        self.vars.push(VarDef {
            name,
            kind,
            lb,
            ub,
            obj,
        });
        VarId((self.vars.len() - 1) as u32)
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lb: f64, ub: f64, obj: f64) -> VarId {
        self.add_var(name, VarKind::Continuous, lb, ub, obj)
    }

    pub fn add_binary(&mut self, name: impl Into<String>, obj: f64) -> VarId {
        self.add_var(name, VarKind::Binary, 0.0, 1.0, obj)
    }

    pub fn set_objective(&mut self, var: VarId, coeff: f64) {
        self.vars[var.index()].obj = coeff;
    }

    pub fn add_objective(&mut self, var: VarId, coeff: f64) {
        self.vars[var.index()].obj += coeff;
    }

    pub fn objective_coeff(&self, var: VarId) -> f64 {
        self.vars[var.index()].obj
    }

    pub fn bounds(&self, var: VarId) -> (f64, f64) {
        let d = &self.vars[var.index()];
        (d.lb, d.ub)
    }

    pub fn set_bounds(&mut self, var: VarId, lb: f64, ub: f64) {
        let d = &mut self.vars[var.index()];
        d.lb = lb;
        d.ub = ub;
    }

    pub fn fix_var(&mut self, var: VarId, value: f64) {
        self.set_bounds(var, value, value);
    }

    pub fn var_kind(&self, var: VarId) -> VarKind {
        self.vars[var.index()].kind
    }

    pub fn var_name(&self, var: VarId) -> &str {
        &self.vars[var.index()].name
    }

    pub fn row_name(&self, row: RowId) -> &str {
        &self.rows[row.index()].name
    }

    /// Add the constraint `expr (op) rhs`. The expression constant is
    /// folded into the right-hand side.
    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        expr: LinExpr,
        op: RowOp,
        rhs: f64,
    ) -> Result<RowId, OptError> {
        let norm = expr.normalized();
        for &(v, _) in &norm.terms {
            if v.index() >= self.vars.len() {
                return Err(OptError::UnknownVariable(v));
            }
        }
        self.rows.push(Row {
            name: name.into(),
            terms: norm.terms,
            op,
            rhs: rhs - norm.constant,
        });
        Ok(RowId((self.rows.len() - 1) as u32))
    }

    /// Largest absolute violation of any row or bound under `values`.
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for row in &self.rows {
            let act: f64 = row.terms.iter().map(|&(v, c)| c * values[v.index()]).sum();
            let viol = match row.op {
                RowOp::Le => act - row.rhs,
                RowOp::Ge => row.rhs - act,
                RowOp::Eq => (act - row.rhs).abs(),
            };
            worst = worst.max(viol);
        }
        for (i, d) in self.vars.iter().enumerate() {
            worst = worst.max(d.lb - values[i]).max(values[i] - d.ub);
        }
        worst
    }

    /// Objective value of an assignment.
    pub fn objective_value(&self, values: &[f64]) -> f64 {
        self.vars
            .iter()
            .enumerate()
            .map(|(i, d)| d.obj * values[i])
            .sum()
    }

    /// Write the program in CPLEX LP text format for cross-checking
    /// against external solvers.
    pub fn write_lp(&self, w: &mut impl Write) -> io::Result<()> {
        match self.sense {
            Sense::Minimize => writeln!(w, "Minimize")?,
            Sense::Maximize => writeln!(w, "Maximize")?,
        }
        write!(w, " obj:")?;
        let mut wrote = false;
        for (i, d) in self.vars.iter().enumerate() {
            if d.obj != 0.0 {
                write!(w, " {} {}", fmt_signed(d.obj, wrote), lp_name(&d.name, i))?;
                wrote = true;
            }
        }
        if !wrote {
            write!(w, " 0 {}", lp_name(&self.vars[0].name, 0))?;
        }
        writeln!(w)?;
        writeln!(w, "Subject To")?;
        for (r, row) in self.rows.iter().enumerate() {
            write!(w, " {}:", lp_name(&row.name, r))?;
            let mut wrote = false;
            for &(v, c) in &row.terms {
                write!(
                    w,
                    " {} {}",
                    fmt_signed(c, wrote),
                    lp_name(&self.vars[v.index()].name, v.index())
                )?;
                wrote = true;
            }
            if !wrote {
                write!(w, " 0 {}", lp_name(&self.vars[0].name, 0))?;
            }
            let op = match row.op {
                RowOp::Le => "<=",
                RowOp::Ge => ">=",
                RowOp::Eq => "=",
            };
            writeln!(w, " {} {}", op, row.rhs)?;
        }
        writeln!(w, "Bounds")?;
        for (i, d) in self.vars.iter().enumerate() {
            let name = lp_name(&d.name, i);
            match (d.lb.is_finite(), d.ub.is_finite()) {
                (true, true) if d.lb == d.ub => writeln!(w, " {} = {}", name, d.lb)?,
                (true, true) => writeln!(w, " {} <= {} <= {}", d.lb, name, d.ub)?,
                (true, false) => writeln!(w, " {} >= {}", name, d.lb)?,
                (false, true) => writeln!(w, " -inf <= {} <= {}", name, d.ub)?,
                (false, false) => writeln!(w, " {} free", name)?,
            }
        }
        let binaries: Vec<_> = self
            .vars
            .iter()
            .enumerate()
            .filter(|(_, d)| d.kind == VarKind::Binary)
            .collect();
        if !binaries.is_empty() {
            writeln!(w, "Binaries")?;
            for (i, d) in binaries {
                writeln!(w, " {}", lp_name(&d.name, i))?;
            }
        }
        writeln!(w, "End")
    }
}

/// LP-format identifiers cannot contain spaces or start with a digit;
/// fall back to an indexed name when the declared one is unusable.
fn lp_name(name: &str, idx: usize) -> String {
    let ok = !name.is_empty()
        && !name.chars().next().unwrap().is_ascii_digit()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "_.[]{}".contains(c));
    if ok {
        name.to_string()
    } else {
        format!("v{}", idx)
    }
}

fn fmt_signed(c: f64, follow: bool) -> String {
    if c < 0.0 {
        format!("- {}", -c)
    } else if follow {
        format!("+ {}", c)
    } else {
        format!("{}", c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolStatus {
    Optimal,
    Feasible,
    Infeasible,
    TimeLimit,
}

impl fmt::Display for SolStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SolStatus::Optimal => "optimal",
            SolStatus::Feasible => "feasible",
            SolStatus::Infeasible => "infeasible",
            SolStatus::TimeLimit => "time_limit",
        };
        f.write_str(s)
    }
}

/// Result of a solve: best incumbent values plus solve metadata.
#[derive(Debug, Clone)]
pub struct Solution {
    pub status: SolStatus,
    pub values: Vec<f64>,
    pub objective: f64,
    pub wall: Duration,
    pub nodes: usize,
    pub gap: f64,
    pub max_residual: f64,
    /// For infeasible programs: a short description of the first failing
    /// constraint subset found.
    pub infeasibility_hint: Option<String>,
}

impl Solution {
    pub fn value(&self, var: VarId) -> f64 {
        self.values[var.index()]
    }

    pub fn eval(&self, expr: &LinExpr) -> f64 {
        expr.eval(&self.values)
    }
}
