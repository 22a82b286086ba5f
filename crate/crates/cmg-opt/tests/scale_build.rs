use cmg_opt::{
    add_chance_indicator, add_connectivity_gate, add_hexagon, LinExpr, Program, Quadrants, RowOp,
    Sense,
};

fn build_synthetic(horizon: usize, scenarios: usize, ngs: usize) -> Program {
    let mut p = Program::new(Sense::Maximize);
    let t_count = horizon;
    let s_count = scenarios;

    // connectivity binaries per (ng, t); ng 0 fixed on
    let mut theta = vec![vec![]; ngs];
    for (n, th) in theta.iter_mut().enumerate() {
        for t in 0..t_count {
            let v = p.add_binary(format!("theta_{}_{}", n, t), 0.0);
            if n == 0 {
                p.fix_var(v, 1.0);
            }
            th.push(v);
        }
    }
    // ancestry: theta_n >= theta_{n+1}
    for n in 1..ngs {
        for t in 0..t_count {
            let mut e = LinExpr::var(theta[n - 1][t]);
            e.add_term(theta[n][t], -1.0);
            p.add_row(format!("anc_{}_{}", n, t), e, RowOp::Ge, 0.0)
                .unwrap();
        }
    }

    let es_units = 3;
    let pv_units = 2;
    let cap = [5500.0, 1000.0, 1000.0];
    let rating = [2750.0, 500.0, 500.0];
    let gamma = 1.2;

    for s in 0..s_count {
        let mut socs: Vec<Option<cmg_opt::VarId>> = vec![None; es_units];
        for t in 0..t_count {
            let mut balance = LinExpr::new();
            let demand_scale = 1.0 + 0.15 * ((s as f64) / (s_count as f64) - 0.5);
            // loads per ng: bounded by theta * forecast
            for n in 0..ngs {
                let fc = demand_scale * (400.0 + 100.0 * ((t as f64 * 0.7).sin()));
                let d = p.add_continuous(format!("d_{}_{}_{}", n, t, s), 0.0, f64::INFINITY, 10.0);
                let mut row = LinExpr::var(d);
                row.add_term(theta[n][t], -fc);
                p.add_row(format!("dub_{}_{}_{}", n, t, s), row, RowOp::Le, 0.0)
                    .unwrap();
                balance.add_term(d, -1.0);
            }
            // PV with hexagon
            for u in 0..pv_units {
                let avail = 700.0 * (((t % 24) as f64 - 6.0) / 12.0 * std::f64::consts::PI)
                    .sin()
                    .max(0.0);
                let pv =
                    p.add_continuous(format!("pv_{}_{}_{}", u, t, s), 0.0, avail.max(0.0), 0.0);
                let qv = p.add_continuous(format!("pvq_{}_{}_{}", u, t, s), 0.0, 400.0, 0.0);
                add_hexagon(
                    &mut p,
                    &LinExpr::var(pv),
                    &LinExpr::var(qv),
                    750.0,
                    1.1,
                    Quadrants::Q1,
                    &format!("pv_{}_{}_{}", u, t, s),
                )
                .unwrap();
                balance.add_term(pv, 1.0);
            }
            // storage with recursion and theta-coupled dispatch bounds
            for u in 0..es_units {
                let pe = p.add_continuous(
                    format!("es_{}_{}_{}", u, t, s),
                    f64::NEG_INFINITY,
                    f64::INFINITY,
                    0.0,
                );
                let mut up = LinExpr::term(pe, gamma);
                up.add_term(theta[u % ngs][t], -rating[u]);
                p.add_row(format!("esub_{}_{}_{}", u, t, s), up, RowOp::Le, 0.0)
                    .unwrap();
                let mut lo = LinExpr::term(pe, gamma);
                lo.add_term(theta[u % ngs][t], rating[u]);
                p.add_row(format!("eslb_{}_{}_{}", u, t, s), lo, RowOp::Ge, 0.0)
                    .unwrap();
                let soc =
                    p.add_continuous(format!("soc_{}_{}_{}", u, t, s), 20.0, 80.0, 0.0);
                let mut rec = LinExpr::var(soc);
                match socs[u] {
                    None => {
                        rec.add_term(pe, 100.0 / cap[u]);
                        p.add_row(format!("socrec_{}_{}_{}", u, t, s), rec, RowOp::Eq, 75.0)
                            .unwrap();
                    }
                    Some(prev) => {
                        rec.add_term(prev, -1.0);
                        rec.add_term(pe, 100.0 / cap[u]);
                        p.add_row(format!("socrec_{}_{}_{}", u, t, s), rec, RowOp::Eq, 0.0)
                            .unwrap();
                    }
                }
                socs[u] = Some(soc);
                balance.add_term(pe, 1.0);
            }
            p.add_row(format!("bal_{}_{}", t, s), balance, RowOp::Eq, 0.0)
                .unwrap();
        }
    }

    // chance coupling per external ng and hour over scenario demands
    for n in 1..ngs {
        for t in 0..t_count {
            let mut lhs = Vec::new();
            let mut rhs = Vec::new();
            for s in 0..s_count {
                // find the demand var by name reconstruction is awkward;
                // approximate the shape with constants on rhs and theta rows
                lhs.push(LinExpr::constant(300.0 + (s as f64) * 10.0));
                rhs.push(LinExpr::constant(350.0));
            }
            let probs = vec![1.0 / s_count as f64; s_count];
            let cc = add_chance_indicator(
                &mut p,
                &lhs,
                &rhs,
                &probs,
                1000.0,
                &format!("{}_{}", n, t),
            )
            .unwrap();
            add_connectivity_gate(&mut p, theta[n][t], &cc, 0.05, &format!("{}_{}", n, t))
                .unwrap();
        }
    }
    p
}

