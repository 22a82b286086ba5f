use crate::expr::LinExpr;
use crate::program::{Program, RowId, RowOp, VarId, VarKind};
use crate::OptError;

/// Result of instantiating one scenario-approximated chance constraint:
/// the satisfied-probability expression `phi = sum_s pi_s z_s` and the
/// binary indicators behind it.
#[derive(Debug, Clone)]
pub struct ChanceIndicator {
    pub phi: LinExpr,
    pub indicators: Vec<VarId>,
    pub rows: Vec<RowId>,
}

/// Scenario approximation of `Pr(lhs >= rhs) = phi`: one binary `z_s`
/// per scenario with `lhs_s >= rhs_s - M (1 - z_s)`, so `z_s` can be 1
/// only when the scenario is satisfied. The caller couples the returned
/// `phi` to a connectivity decision (`theta <= phi + eps`).
pub fn add_chance_indicator(
    prog: &mut Program,
    lhs_per_scenario: &[LinExpr],
    rhs_per_scenario: &[LinExpr],
    probabilities: &[f64],
    big_m: f64,
    tag: &str,
) -> Result<ChanceIndicator, OptError> {
    if lhs_per_scenario.is_empty() {
        return Err(OptError::EmptyScenarioSet);
    }
    if lhs_per_scenario.len() != rhs_per_scenario.len()
        || lhs_per_scenario.len() != probabilities.len()
    {
        return Err(OptError::ScenarioLengthMismatch);
    }
    if big_m <= 0.0 {
        return Err(OptError::NonpositiveBigM(big_m));
    }
    let mut indicators = Vec::with_capacity(probabilities.len());
    let mut rows = Vec::with_capacity(probabilities.len());
    let mut phi = LinExpr::new();
    for (s, pi) in probabilities.iter().enumerate() {
        let z = prog.add_var(format!("z_{}_{}", tag, s), VarKind::Binary, 0.0, 1.0, 0.0);
        // lhs - rhs - M z >= -M
        let mut e = LinExpr::new();
        e.add_expr(&lhs_per_scenario[s], 1.0);
        e.add_expr(&rhs_per_scenario[s], -1.0);
        e.add_term(z, -big_m);
        rows.push(prog.add_row(format!("cc_{}_{}", tag, s), e, RowOp::Ge, -big_m)?);
        phi.add_term(z, *pi);
        indicators.push(z);
    }
    Ok(ChanceIndicator {
        phi,
        indicators,
        rows,
    })
}

/// Couple a connectivity binary to a chance indicator:
/// `-phi <= -(1 - eps) + 1 - theta`, i.e. `theta <= phi + eps`.
///
/// When the scenario probabilities are uniform the equivalent
/// integer-rounded form `sum_s z_s >= (S - floor(eps*S)) * theta` is also
/// added. It cuts no integral point (the violated-scenario count is an
/// integer) but stops fractional indicators from propping up the
/// connectivity relaxation, which keeps the branch-and-bound tree small.
pub fn add_connectivity_gate(
    prog: &mut Program,
    theta: VarId,
    chance: &ChanceIndicator,
    eps: f64,
    tag: &str,
) -> Result<Vec<RowId>, OptError> {
    let mut rows = Vec::new();
    let mut gate = LinExpr::var(theta);
    gate.add_expr(&chance.phi, -1.0);
    rows.push(prog.add_row(format!("gate_{}", tag), gate, RowOp::Le, eps)?);

    let s_count = chance.indicators.len();
    let uniform = chance
        .phi
        .terms
        .iter()
        .all(|(_, p)| (p - 1.0 / s_count as f64).abs() < 1e-12);
    if uniform && s_count > 0 {
        let k_star = (eps * s_count as f64 + 1e-9).floor();
        let needed = s_count as f64 - k_star;
        let mut cut = LinExpr::term(theta, needed);
        for &z in &chance.indicators {
            cut.add_term(z, -1.0);
        }
        rows.push(prog.add_row(format!("gate_ir_{}", tag), cut, RowOp::Le, 0.0)?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::program::{Sense, SolStatus};
    use crate::{BranchAndBound, SolveOptions, SolverBackend};

    /// phi maximization over fixed scenario data must recover the exact
    /// satisfied fraction.
    fn max_phi(lhs_vals: &[f64], rhs_vals: &[f64], probs: &[f64]) -> f64 {
        let mut prog = Program::new(Sense::Maximize);
        let lhs: Vec<LinExpr> = lhs_vals.iter().map(|&v| LinExpr::constant(v)).collect();
        let rhs: Vec<LinExpr> = rhs_vals.iter().map(|&v| LinExpr::constant(v)).collect();
        let m = rhs_vals.iter().cloned().fold(1.0_f64, f64::max) + 1.0;
        let cc = add_chance_indicator(&mut prog, &lhs, &rhs, probs, m, "t").unwrap();
        for &z in &cc.indicators {
            prog.add_objective(z, prog_prob(&cc.phi, z));
        }
        let sol = BranchAndBound
            .solve(&prog, &SolveOptions::default())
            .unwrap();
        assert_eq!(sol.status, SolStatus::Optimal);
        sol.eval(&cc.phi)
    }

    fn prog_prob(phi: &LinExpr, z: VarId) -> f64 {
        phi.terms
            .iter()
            .find(|(v, _)| *v == z)
            .map(|(_, c)| *c)
            .unwrap()
    }

    #[test]
    fn all_scenarios_satisfied_gives_phi_one() {
        let lhs = vec![10.0; 5];
        let rhs = vec![1.0; 5];
        let probs = vec![0.2; 5];
        let phi = max_phi(&lhs, &rhs, &probs);
        assert!((phi - 1.0).abs() < 1e-9);
    }

    #[test]
    fn eighteen_of_twenty_gives_phi_090_and_gates_theta() {
        // 20 equiprobable scenarios, 18 satisfiable -> phi = 0.90;
        // theta <= phi - (1 - eps) + 1 forces theta = 0 at eps = 0.05
        // and admits theta = 1 at eps = 0.20.
        let mut lhs = vec![5.0; 20];
        lhs[3] = 0.0;
        lhs[11] = 0.0;
        let rhs = vec![1.0; 20];
        let probs = vec![0.05; 20];
        let phi = max_phi(&lhs, &rhs, &probs);
        let brute: f64 = probs
            .iter()
            .enumerate()
            .filter(|(s, _)| lhs[*s] >= rhs[*s])
            .map(|(_, p)| p)
            .sum();
        assert_eq!(phi, brute, "phi must equal the brute-force fraction");
        assert!((phi - 0.90).abs() < 1e-12);

        for (eps, expect_connected) in [(0.05, false), (0.20, true)] {
            // bound from the coupling row: theta <= phi + eps
            let bound = phi - (1.0 - eps) + 1.0;
            assert_eq!(bound >= 1.0, expect_connected, "eps={}", eps);
        }
    }

    #[test]
    fn gated_theta_in_program() {
        // integrate the coupling row and check the binary outcome
        for (eps, expect) in [(0.05, 0.0), (0.20, 1.0)] {
            let mut prog = Program::new(Sense::Maximize);
            let mut lhs = vec![5.0; 20];
            lhs[0] = 0.0;
            lhs[1] = 0.0;
            let lhs_e: Vec<LinExpr> = lhs.iter().map(|&v| LinExpr::constant(v)).collect();
            let rhs_e: Vec<LinExpr> = (0..20).map(|_| LinExpr::constant(1.0)).collect();
            let probs = vec![0.05; 20];
            let cc = add_chance_indicator(&mut prog, &lhs_e, &rhs_e, &probs, 2.0, "ng").unwrap();
            let theta = prog.add_binary("theta", 1.0);
            // -phi <= -(1-eps) + 1 - theta  <=>  theta - phi <= eps
            let mut e = LinExpr::var(theta);
            e.add_expr(&cc.phi, -1.0);
            prog.add_row("gate", e, RowOp::Le, eps).unwrap();
            let sol = BranchAndBound
                .solve(&prog, &SolveOptions::default())
                .unwrap();
            assert_eq!(sol.status, SolStatus::Optimal);
            assert!(
                (sol.value(theta) - expect).abs() < 1e-9,
                "eps={} theta={}",
                eps,
                sol.value(theta)
            );
        }
    }

    #[test]
    fn nonpositive_big_m_rejected() {
        let mut prog = Program::new(Sense::Maximize);
        let lhs = vec![LinExpr::constant(1.0)];
        let rhs = vec![LinExpr::constant(1.0)];
        let e = add_chance_indicator(&mut prog, &lhs, &rhs, &[1.0], 0.0, "t");
        assert!(matches!(e, Err(OptError::NonpositiveBigM(_))));
    }

    /// For random fixed candidate solutions, phi always equals the exact
    /// satisfied-scenario fraction (summed in the same order).
    #[test]
    fn phi_matches_brute_force_on_random_solutions() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = 20;
            let lhs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
            let rhs: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
            let probs = vec![0.05; n];
            let phi = max_phi(&lhs, &rhs, &probs);
            let brute: f64 = (0..n).filter(|&s| lhs[s] >= rhs[s]).map(|s| probs[s]).sum();
            assert_eq!(phi, brute);
        }
    }
}
