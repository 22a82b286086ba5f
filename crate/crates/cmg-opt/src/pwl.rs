use crate::expr::LinExpr;
use crate::program::{Program, RowId, Sense, VarId, VarKind};
use crate::OptError;

/// Convex piecewise-linear encoding of `weight * (expr - target)^2`,
/// materialized as an epigraph variable bounded below by the chords
/// between breakpoints. The part is exact on breakpoints and
/// overestimates between them by at most `max_error`.
#[derive(Debug, Clone)]
pub struct SquaredDeviation {
    /// The penalty value; already wired into the objective with the sign
    /// that opposes the optimization direction.
    pub cost_var: VarId,
    pub rows: Vec<RowId>,
    /// Worst-case chord-over-curve gap, from breakpoint spacing.
    pub max_error: f64,
}

/// Add a squared-deviation penalty to the objective. `breakpoints` are in
/// deviation units (relative to `target`), must be strictly increasing
/// and symmetric about zero. In a minimization the penalty is added; in a
/// maximization it is subtracted.
pub fn add_squared_deviation(
    prog: &mut Program,
    expr: &LinExpr,
    target: f64,
    weight: f64,
    breakpoints: &[f64],
    tag: &str,
) -> Result<SquaredDeviation, OptError> {
    if breakpoints.len() < 3 {
        return Err(OptError::BadBreakpoints);
    }
    for w in breakpoints.windows(2) {
        if w[1] <= w[0] {
            return Err(OptError::NonMonotoneBreakpoints);
        }
    }
    let last = breakpoints[breakpoints.len() - 1];
    if (breakpoints[0] + last).abs() > 1e-9 * last.abs().max(1.0) {
        return Err(OptError::BadBreakpoints);
    }

    let y = prog.add_var(
        format!("sqdev_{}", tag),
        VarKind::Continuous,
        0.0,
        f64::INFINITY,
        0.0,
    );
    match prog.sense() {
        Sense::Minimize => prog.add_objective(y, weight),
        Sense::Maximize => prog.add_objective(y, -weight),
    }

    // deviation e = expr - target; chords of e^2 between breakpoints:
    //   y >= w*(f_j + s_j (e - b_j))   with s_j = (f_{j+1}-f_j)/(b_{j+1}-b_j)
    // weight is folded into the objective coefficient, so chord rows carry
    // the unit-weight parabola.
    let mut rows = Vec::new();
    let mut max_err = 0.0_f64;
    for (j, w2) in breakpoints.windows(2).enumerate() {
        let (b0, b1) = (w2[0], w2[1]);
        let (f0, f1) = (b0 * b0, b1 * b1);
        let slope = (f1 - f0) / (b1 - b0);
        // chord-over-curve gap peaks mid-segment at (b1-b0)^2/4
        max_err = max_err.max((b1 - b0) * (b1 - b0) / 4.0);
        // y - slope*e >= f0 - slope*b0, e = expr - target
        let mut row = LinExpr::var(y);
        row.add_expr(expr, -slope);
        let rhs = f0 - slope * b0 - slope * target;
        rows.push(prog.add_row(
            format!("sqdev_{}_{}", tag, j),
            row,
            crate::RowOp::Ge,
            rhs,
        )?);
    }
    Ok(SquaredDeviation {
        cost_var: y,
        rows,
        max_error: weight.abs() * max_err,
    })
}

/// Evenly spaced symmetric breakpoints covering `[-range, range]`.
pub fn symmetric_breakpoints(range: f64, count: usize) -> Vec<f64> {
    let count = count.max(3);
    let half = (count - 1) as f64 / 2.0;
    (0..count)
        .map(|i| (i as f64 - half) / half * range)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::{SolStatus, Sense};
    use crate::{BranchAndBound, SolveOptions, SolverBackend};

    fn penalty_at(dev: f64, weight: f64, bps: &[f64]) -> f64 {
        let mut prog = Program::new(Sense::Minimize);
        let x = prog.add_continuous("x", dev, dev, 0.0);
        let part =
            add_squared_deviation(&mut prog, &LinExpr::var(x), 0.0, weight, bps, "t").unwrap();
        let sol = BranchAndBound
            .solve(&prog, &SolveOptions::default())
            .unwrap();
        assert_eq!(sol.status, SolStatus::Optimal);
        sol.value(part.cost_var) * weight
    }

    #[test]
    fn zero_deviation_contributes_zero() {
        let p = penalty_at(0.0, 2.5, &[-1.0, 0.0, 1.0]);
        assert!(p.abs() < 1e-9, "{}", p);
    }

    #[test]
    fn breakpoint_hit_is_exact() {
        // knots {-1,0,1}, deviation 1 -> weight * 1.0 exactly
        let p = penalty_at(1.0, 3.0, &[-1.0, 0.0, 1.0]);
        assert!((p - 3.0).abs() < 1e-9, "{}", p);
    }

    #[test]
    fn chord_value_between_knots() {
        // deviation 0.5 with knots {-1,0,1}: chord of x^2 between 0 and 1
        // evaluates to 0.5, overestimating the true 0.25 by 0.25
        let w = 1.0;
        let p = penalty_at(0.5, w, &[-1.0, 0.0, 1.0]);
        assert!((p - 0.5).abs() < 1e-9, "{}", p);
        let mut prog = Program::new(Sense::Minimize);
        let x = prog.add_continuous("x", 0.0, 0.0, 0.0);
        let part =
            add_squared_deviation(&mut prog, &LinExpr::var(x), 0.0, w, &[-1.0, 0.0, 1.0], "t")
                .unwrap();
        assert!((part.max_error - 0.25).abs() < 1e-12);
    }

    #[test]
    fn works_under_maximization() {
        // max 4x - (x-0)^2-ish: with chords on integers the optimum of
        // 4x - pwl(x^2) over [0,4] sits at the knot x=2 (slope of chord
        // [1,2] is 3 < 4, slope of chord [2,3] is 5 > 4)
        let mut prog = Program::new(Sense::Maximize);
        let x = prog.add_continuous("x", 0.0, 4.0, 4.0);
        let bps: Vec<f64> = (-4..=4).map(|i| i as f64).collect();
        add_squared_deviation(&mut prog, &LinExpr::var(x), 0.0, 1.0, &bps, "t").unwrap();
        let sol = BranchAndBound
            .solve(&prog, &SolveOptions::default())
            .unwrap();
        assert_eq!(sol.status, SolStatus::Optimal);
        assert!((sol.value(x) - 2.0).abs() < 1e-8, "{}", sol.value(x));
        assert!((sol.objective - 4.0).abs() < 1e-8);
    }

    #[test]
    fn non_monotone_rejected() {
        let mut prog = Program::new(Sense::Minimize);
        let x = prog.add_continuous("x", 0.0, 1.0, 0.0);
        let e = add_squared_deviation(&mut prog, &LinExpr::var(x), 0.0, 1.0, &[-1.0, 1.0, 0.5], "t");
        assert!(matches!(e, Err(OptError::NonMonotoneBreakpoints)));
    }

    #[test]
    fn asymmetric_rejected() {
        let mut prog = Program::new(Sense::Minimize);
        let x = prog.add_continuous("x", 0.0, 1.0, 0.0);
        let e = add_squared_deviation(&mut prog, &LinExpr::var(x), 0.0, 1.0, &[-2.0, 0.0, 1.0], "t");
        assert!(matches!(e, Err(OptError::BadBreakpoints)));
    }

    #[test]
    fn symmetric_breakpoint_builder() {
        let bps = symmetric_breakpoints(10.0, 17);
        assert_eq!(bps.len(), 17);
        assert!((bps[0] + 10.0).abs() < 1e-12);
        assert!((bps[16] - 10.0).abs() < 1e-12);
        assert!(bps[8].abs() < 1e-12);
    }

    #[test]
    fn nonzero_target_shifts_parabola() {
        // penalize (x - 5)^2 at x = 6 with integer knots: exact value 1
        let mut prog = Program::new(Sense::Minimize);
        let x = prog.add_continuous("x", 6.0, 6.0, 0.0);
        let bps: Vec<f64> = (-3..=3).map(|i| i as f64).collect();
        let part =
            add_squared_deviation(&mut prog, &LinExpr::var(x), 5.0, 2.0, &bps, "t").unwrap();
        let sol = BranchAndBound
            .solve(&prog, &SolveOptions::default())
            .unwrap();
        assert!((sol.value(part.cost_var) - 1.0).abs() < 1e-9);
    }
}
