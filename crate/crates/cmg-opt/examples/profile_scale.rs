//! Relaxation timing probe for the scheduling-shaped synthetic program.
include!("../tests/scale_build.rs");

fn main() {
    for (t, s) in [(6usize, 4usize), (12, 10), (24, 10), (24, 20)] {
        let prog = build_synthetic(t, s, 3);
        match cmg_opt::relaxation_probe(&prog, 500_000) {
            Ok((obj, iters, dt)) => eprintln!(
                "T={} S={}: {} vars {} rows -> obj {:.1}, {} simplex iters, {:?}",
                t,
                s,
                prog.num_vars(),
                prog.num_rows(),
                obj,
                iters,
                dt
            ),
            Err(e) => eprintln!("T={} S={}: error {}", t, s, e),
        }
    }
}
