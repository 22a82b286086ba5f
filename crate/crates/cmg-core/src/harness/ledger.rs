//! Append-only run ledger: every interval's plans, realizations,
//! recourse terms, and events as line-delimited `key=value` records.
//! Rows are flushed as they are written so a crash leaves a readable
//! prefix; any prefix of complete lines parses back into a ledger.

use std::collections::BTreeMap;
use std::fmt::Write as FmtWrite;
use std::io::{BufRead, Write};

use crate::grid::{GenId, NgId, NodeId, Phase, ZoneId};

#[derive(Debug, Clone, PartialEq)]
pub enum LedgerRow {
    /// Model facts the metrics engine needs to interpret the run.
    Meta {
        key: String,
        value: String,
    },
    EdsSolve {
        t: usize,
        status: String,
        objective: f64,
        solve_ms: f64,
        residual: f64,
        relaxed_cl: bool,
        relaxed_dg: bool,
    },
    EdsTheta {
        t: usize,
        ng: NgId,
        on: bool,
    },
    EdsExpected {
        t: usize,
        expected_load_kw: f64,
        gf_expected_soc: f64,
    },
    NrtSolve {
        t: usize,
        status: String,
        objective: f64,
        solve_ms: f64,
        residual: f64,
        equity_dropped: bool,
        voltage_relaxed: bool,
        cut_rhs_kw: f64,
        cut_slack_kw: f64,
        gf_soc_end: f64,
        planned_kw: f64,
    },
    /// Hourly connectivity per node-phase (demand-response decision).
    Conn {
        t: usize,
        node: NodeId,
        phase: Phase,
        on: bool,
    },
    RtSolve {
        t: usize,
        h: usize,
        k: usize,
        status: String,
        solve_ms: f64,
        residual: f64,
        curtailed_kw: f64,
        dg_relaxed: bool,
    },
    SimStep {
        t: usize,
        h: usize,
        k: usize,
        cmg_on: bool,
        served_cl_kw: f64,
        served_ncl_kw: f64,
        demand_cl_kw: f64,
        demand_ncl_kw: f64,
        clpu_kw: f64,
        pv_avail_kw: f64,
        pv_used_kw: f64,
        phase_a_kw: f64,
        phase_b_kw: f64,
        phase_c_kw: f64,
        gf_p_kw: f64,
        gf_soc: f64,
        losses_kw: f64,
        v_min: f64,
        v_max: f64,
        lin_err: f64,
        residual_kw: f64,
    },
    SimSoc {
        t: usize,
        h: usize,
        k: usize,
        gen: GenId,
        soc: f64,
    },
    SimFuel {
        t: usize,
        h: usize,
        k: usize,
        gen: GenId,
        fuel_l: f64,
    },
    Recourse {
        t: usize,
        raw_kwh: f64,
        scaled: f64,
        slope: f64,
        extrapolated_kwh: f64,
    },
    Event {
        t: usize,
        h: usize,
        k: usize,
        kind: String,
        detail: String,
    },
    Terminal {
        reason: String,
    },
}

#[derive(Debug, Default)]
pub struct RunLedger {
    pub rows: Vec<LedgerRow>,
}

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {0}: {1}")]
    Parse(usize, String),
}

fn esc(s: &str) -> String {
    s.replace(' ', "_").replace('=', ":")
}

impl LedgerRow {
    /// One-line serialization; stable field order, shortest float form.
    pub fn to_line(&self) -> String {
        let mut s = String::new();
        match self {
            LedgerRow::Meta { key, value } => {
                write!(s, "meta key={} value={}", esc(key), esc(value)).unwrap()
            }
            LedgerRow::EdsSolve {
                t,
                status,
                objective,
                solve_ms,
                residual,
                relaxed_cl,
                relaxed_dg,
            } => write!(
                s,
                "eds_solve t={} status={} objective={} solve_ms={} residual={} relaxed_cl={} relaxed_dg={}",
                t, status, objective, solve_ms, residual, relaxed_cl, relaxed_dg
            )
            .unwrap(),
            LedgerRow::EdsTheta { t, ng, on } => {
                write!(s, "eds_theta t={} ng={} on={}", t, ng, on).unwrap()
            }
            LedgerRow::EdsExpected {
                t,
                expected_load_kw,
                gf_expected_soc,
            } => write!(
                s,
                "eds_expected t={} expected_load_kw={} gf_expected_soc={}",
                t, expected_load_kw, gf_expected_soc
            )
            .unwrap(),
            LedgerRow::NrtSolve {
                t,
                status,
                objective,
                solve_ms,
                residual,
                equity_dropped,
                voltage_relaxed,
                cut_rhs_kw,
                cut_slack_kw,
                gf_soc_end,
                planned_kw,
            } => write!(
                s,
                "nrt_solve t={} status={} objective={} solve_ms={} residual={} equity_dropped={} voltage_relaxed={} cut_rhs_kw={} cut_slack_kw={} gf_soc_end={} planned_kw={}",
                t,
                status,
                objective,
                solve_ms,
                residual,
                equity_dropped,
                voltage_relaxed,
                cut_rhs_kw,
                cut_slack_kw,
                gf_soc_end,
                planned_kw
            )
            .unwrap(),
            LedgerRow::Conn { t, node, phase, on } => {
                write!(s, "conn t={} node={} phase={} on={}", t, node, phase, on).unwrap()
            }
            LedgerRow::RtSolve {
                t,
                h,
                k,
                status,
                solve_ms,
                residual,
                curtailed_kw,
                dg_relaxed,
            } => write!(
                s,
                "rt_solve t={} h={} k={} status={} solve_ms={} residual={} curtailed_kw={} dg_relaxed={}",
                t, h, k, status, solve_ms, residual, curtailed_kw, dg_relaxed
            )
            .unwrap(),
            LedgerRow::SimStep {
                t,
                h,
                k,
                cmg_on,
                served_cl_kw,
                served_ncl_kw,
                demand_cl_kw,
                demand_ncl_kw,
                clpu_kw,
                pv_avail_kw,
                pv_used_kw,
                phase_a_kw,
                phase_b_kw,
                phase_c_kw,
                gf_p_kw,
                gf_soc,
                losses_kw,
                v_min,
                v_max,
                lin_err,
                residual_kw,
            } => write!(
                s,
                "sim_step t={} h={} k={} cmg_on={} served_cl_kw={} served_ncl_kw={} demand_cl_kw={} demand_ncl_kw={} clpu_kw={} pv_avail_kw={} pv_used_kw={} phase_a_kw={} phase_b_kw={} phase_c_kw={} gf_p_kw={} gf_soc={} losses_kw={} v_min={} v_max={} lin_err={} residual_kw={}",
                t,
                h,
                k,
                cmg_on,
                served_cl_kw,
                served_ncl_kw,
                demand_cl_kw,
                demand_ncl_kw,
                clpu_kw,
                pv_avail_kw,
                pv_used_kw,
                phase_a_kw,
                phase_b_kw,
                phase_c_kw,
                gf_p_kw,
                gf_soc,
                losses_kw,
                v_min,
                v_max,
                lin_err,
                residual_kw
            )
            .unwrap(),
            LedgerRow::SimSoc { t, h, k, gen, soc } => {
                write!(s, "sim_soc t={} h={} k={} gen={} soc={}", t, h, k, gen, soc).unwrap()
            }
            LedgerRow::SimFuel { t, h, k, gen, fuel_l } => write!(
                s,
                "sim_fuel t={} h={} k={} gen={} fuel_l={}",
                t, h, k, gen, fuel_l
            )
            .unwrap(),
            LedgerRow::Recourse {
                t,
                raw_kwh,
                scaled,
                slope,
                extrapolated_kwh,
            } => write!(
                s,
                "recourse t={} raw_kwh={} scaled={} slope={} extrapolated_kwh={}",
                t, raw_kwh, scaled, slope, extrapolated_kwh
            )
            .unwrap(),
            LedgerRow::Event {
                t,
                h,
                k,
                kind,
                detail,
            } => write!(
                s,
                "event t={} h={} k={} kind={} detail={}",
                t,
                h,
                k,
                esc(kind),
                esc(detail)
            )
            .unwrap(),
            LedgerRow::Terminal { reason } => {
                write!(s, "terminal reason={}", esc(reason)).unwrap()
            }
        }
        s
    }

    pub fn parse_line(line: &str) -> Result<LedgerRow, String> {
        let mut parts = line.split_whitespace();
        let kind = parts.next().ok_or("empty line")?;
        let mut kv: BTreeMap<&str, &str> = BTreeMap::new();
        for p in parts {
            let (k, v) = p.split_once('=').ok_or_else(|| format!("bad field {:?}", p))?;
            kv.insert(k, v);
        }
        let get = |k: &str| -> Result<&str, String> {
            kv.get(k).copied().ok_or_else(|| format!("missing {}", k))
        };
        let getf = |k: &str| -> Result<f64, String> {
            get(k)?.parse().map_err(|_| format!("bad float {}", k))
        };
        let getu = |k: &str| -> Result<usize, String> {
            get(k)?.parse().map_err(|_| format!("bad int {}", k))
        };
        let getb = |k: &str| -> Result<bool, String> {
            get(k)?.parse().map_err(|_| format!("bad bool {}", k))
        };
        let phase = |k: &str| -> Result<Phase, String> {
            match get(k)? {
                "a" => Ok(Phase::A),
                "b" => Ok(Phase::B),
                "c" => Ok(Phase::C),
                other => Err(format!("bad phase {}", other)),
            }
        };
        Ok(match kind {
            "meta" => LedgerRow::Meta {
                key: get("key")?.to_string(),
                value: get("value")?.to_string(),
            },
            "eds_solve" => LedgerRow::EdsSolve {
                t: getu("t")?,
                status: get("status")?.to_string(),
                objective: getf("objective")?,
                solve_ms: getf("solve_ms")?,
                residual: getf("residual")?,
                relaxed_cl: getb("relaxed_cl")?,
                relaxed_dg: getb("relaxed_dg")?,
            },
            "eds_theta" => LedgerRow::EdsTheta {
                t: getu("t")?,
                ng: NgId(getu("ng")? as u32),
                on: getb("on")?,
            },
            "eds_expected" => LedgerRow::EdsExpected {
                t: getu("t")?,
                expected_load_kw: getf("expected_load_kw")?,
                gf_expected_soc: getf("gf_expected_soc")?,
            },
            "nrt_solve" => LedgerRow::NrtSolve {
                t: getu("t")?,
                status: get("status")?.to_string(),
                objective: getf("objective")?,
                solve_ms: getf("solve_ms")?,
                residual: getf("residual")?,
                equity_dropped: getb("equity_dropped")?,
                voltage_relaxed: getb("voltage_relaxed")?,
                cut_rhs_kw: getf("cut_rhs_kw")?,
                cut_slack_kw: getf("cut_slack_kw")?,
                gf_soc_end: getf("gf_soc_end")?,
                planned_kw: getf("planned_kw")?,
            },
            "conn" => LedgerRow::Conn {
                t: getu("t")?,
                node: NodeId(getu("node")? as u32),
                phase: phase("phase")?,
                on: getb("on")?,
            },
            "rt_solve" => LedgerRow::RtSolve {
                t: getu("t")?,
                h: getu("h")?,
                k: getu("k")?,
                status: get("status")?.to_string(),
                solve_ms: getf("solve_ms")?,
                residual: getf("residual")?,
                curtailed_kw: getf("curtailed_kw")?,
                dg_relaxed: getb("dg_relaxed")?,
            },
            "sim_step" => LedgerRow::SimStep {
                t: getu("t")?,
                h: getu("h")?,
                k: getu("k")?,
                cmg_on: getb("cmg_on")?,
                served_cl_kw: getf("served_cl_kw")?,
                served_ncl_kw: getf("served_ncl_kw")?,
                demand_cl_kw: getf("demand_cl_kw")?,
                demand_ncl_kw: getf("demand_ncl_kw")?,
                clpu_kw: getf("clpu_kw")?,
                pv_avail_kw: getf("pv_avail_kw")?,
                pv_used_kw: getf("pv_used_kw")?,
                phase_a_kw: getf("phase_a_kw")?,
                phase_b_kw: getf("phase_b_kw")?,
                phase_c_kw: getf("phase_c_kw")?,
                gf_p_kw: getf("gf_p_kw")?,
                gf_soc: getf("gf_soc")?,
                losses_kw: getf("losses_kw")?,
                v_min: getf("v_min")?,
                v_max: getf("v_max")?,
                lin_err: getf("lin_err")?,
                residual_kw: getf("residual_kw")?,
            },
            "sim_soc" => LedgerRow::SimSoc {
                t: getu("t")?,
                h: getu("h")?,
                k: getu("k")?,
                gen: GenId(getu("gen")? as u32),
                soc: getf("soc")?,
            },
            "sim_fuel" => LedgerRow::SimFuel {
                t: getu("t")?,
                h: getu("h")?,
                k: getu("k")?,
                gen: GenId(getu("gen")? as u32),
                fuel_l: getf("fuel_l")?,
            },
            "recourse" => LedgerRow::Recourse {
                t: getu("t")?,
                raw_kwh: getf("raw_kwh")?,
                scaled: getf("scaled")?,
                slope: getf("slope")?,
                extrapolated_kwh: getf("extrapolated_kwh")?,
            },
            "event" => LedgerRow::Event {
                t: getu("t")?,
                h: getu("h")?,
                k: getu("k")?,
                kind: get("kind")?.to_string(),
                detail: get("detail")?.to_string(),
            },
            "terminal" => LedgerRow::Terminal {
                reason: get("reason")?.to_string(),
            },
            other => return Err(format!("unknown row kind {:?}", other)),
        })
    }
}

impl RunLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, row: LedgerRow) {
        self.rows.push(row);
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), LedgerError> {
        for (i, row) in self.rows.iter().enumerate() {
            writeln!(w, "{} {}", i, row.to_line())?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<RunLedger, LedgerError> {
        let mut rows = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let body = match line.split_once(' ') {
                Some((_seq, rest)) => rest,
                None => return Err(LedgerError::Parse(i + 1, "missing sequence".into())),
            };
            rows.push(
                LedgerRow::parse_line(body).map_err(|e| LedgerError::Parse(i + 1, e))?,
            );
        }
        Ok(RunLedger { rows })
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.rows.iter().find_map(|r| match r {
            LedgerRow::Meta { key: k, value } if k == key => Some(value.as_str()),
            _ => None,
        })
    }

    /// FNV-1a digest of the serialized ledger, for reproducibility checks.
    pub fn digest(&self) -> String {
        let mut hash: u64 = 0xcbf29ce484222325;
        for row in &self.rows {
            for b in row.to_line().as_bytes() {
                hash ^= *b as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
            hash ^= b'\n' as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        format!("{:016x}", hash)
    }
}

/// Incremental writer used by the runner: every appended row reaches the
/// file before the next stage starts.
pub struct LedgerWriter<W: Write> {
    out: W,
    seq: usize,
    pub ledger: RunLedger,
}

impl<W: Write> LedgerWriter<W> {
    pub fn new(out: W) -> Self {
        LedgerWriter {
            out,
            seq: 0,
            ledger: RunLedger::new(),
        }
    }

    pub fn append(&mut self, row: LedgerRow) -> Result<(), LedgerError> {
        writeln!(self.out, "{} {}", self.seq, row.to_line())?;
        self.out.flush()?;
        self.seq += 1;
        self.ledger.push(row);
        Ok(())
    }

    pub fn into_ledger(self) -> RunLedger {
        self.ledger
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_rows() -> Vec<LedgerRow> {
        vec![
            LedgerRow::Meta {
                key: "horizon_hours".into(),
                value: "3".into(),
            },
            LedgerRow::EdsTheta {
                t: 0,
                ng: NgId(2),
                on: true,
            },
            LedgerRow::Conn {
                t: 0,
                node: NodeId(4),
                phase: Phase::B,
                on: false,
            },
            LedgerRow::SimStep {
                t: 0,
                h: 1,
                k: 2,
                cmg_on: true,
                served_cl_kw: 12.25,
                served_ncl_kw: 100.0,
                demand_cl_kw: 12.25,
                demand_ncl_kw: 120.5,
                clpu_kw: 0.0,
                pv_avail_kw: 55.0,
                pv_used_kw: 54.0,
                phase_a_kw: 37.0,
                phase_b_kw: 38.0,
                phase_c_kw: 37.25,
                gf_p_kw: 60.0,
                gf_soc: 71.25,
                losses_kw: 0.4,
                v_min: 1.01,
                v_max: 1.04,
                lin_err: 0.0004,
                residual_kw: 0.0,
            },
            LedgerRow::Event {
                t: 1,
                h: 0,
                k: 0,
                kind: "CMG_OFF".into(),
                detail: "soc below threshold".into(),
            },
        ]
    }

    #[test]
    fn round_trip() {
        let mut ledger = RunLedger::new();
        for r in sample_rows() {
            ledger.push(r);
        }
        let mut buf = Vec::new();
        ledger.write_to(&mut buf).unwrap();
        let back = RunLedger::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.rows, ledger.rows);
        assert_eq!(back.digest(), ledger.digest());
    }

    #[test]
    fn any_row_prefix_parses() {
        let mut ledger = RunLedger::new();
        for r in sample_rows() {
            ledger.push(r);
        }
        let mut buf = Vec::new();
        ledger.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        for n in 0..=lines.len() {
            let prefix = lines[..n].join("\n");
            let back = RunLedger::read_from(prefix.as_bytes()).unwrap();
            assert_eq!(back.rows.len(), n);
        }
    }

    #[test]
    fn digest_changes_with_content() {
        let mut a = RunLedger::new();
        let mut b = RunLedger::new();
        for r in sample_rows() {
            a.push(r.clone());
            b.push(r);
        }
        assert_eq!(a.digest(), b.digest());
        b.push(LedgerRow::Terminal {
            reason: "done".into(),
        });
        assert_ne!(a.digest(), b.digest());
    }
}
