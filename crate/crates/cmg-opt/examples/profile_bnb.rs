//! Branch-and-bound progress probe on the scheduling-shaped synthetic.
include!("../tests/scale_build.rs");

use cmg_opt::{BranchAndBound, SolveOptions, SolverBackend};
use std::time::{Duration, Instant};

fn main() {
    let prog = build_synthetic(24, 10, 3);
    eprintln!(
        "program: {} vars ({} binary), {} rows",
        prog.num_vars(),
        prog.num_binaries(),
        prog.num_rows()
    );
    let opts = SolveOptions {
        verbose: true,
        time_limit: Some(Duration::from_secs(60)),
        ..Default::default()
    };
    let t0 = Instant::now();
    let sol = BranchAndBound.solve(&prog, &opts).expect("solve");
    eprintln!(
        "status {} obj {:.1} nodes {} gap {:.6} in {:?}",
        sol.status,
        sol.objective,
        sol.nodes,
        sol.gap,
        t0.elapsed()
    );
}
