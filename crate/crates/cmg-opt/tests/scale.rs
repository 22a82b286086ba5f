//! Scale check: a synthetic program shaped like the hourly scheduling
//! stage must solve within the runtime budget.

use std::time::Instant;

use cmg_opt::{BranchAndBound, SolStatus, SolveOptions, SolverBackend};

include!("scale_build.rs");

#[test]
fn eds_shaped_program_solves_fast() {
    let prog = build_synthetic(24, 10, 3);
    eprintln!(
        "synthetic program: {} vars ({} binary), {} rows",
        prog.num_vars(),
        prog.num_binaries(),
        prog.num_rows()
    );
    let t0 = Instant::now();
    let sol = BranchAndBound
        .solve(&prog, &SolveOptions::default())
        .expect("solve");
    let dt = t0.elapsed();
    eprintln!(
        "status {} obj {:.1} nodes {} in {:?}",
        sol.status, sol.objective, sol.nodes, dt
    );
    assert_eq!(sol.status, SolStatus::Optimal);
    assert!(sol.max_residual <= 1e-6);
    assert!(dt.as_secs_f64() < 60.0, "took {:?}", dt);
}
