//! Forecast profiles at the three stage timescales, scenario sampling
//! for the hourly stochastic stage, and controlled forecast-error
//! injection for real-time realization (uniform-bias and random-error
//! cases).

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::grid::{GenId, GenKind, NetworkModel, NodeId, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Resolution {
    Hourly,
    QuarterHour,
    FiveMin,
}

impl Resolution {
    pub fn steps_per_hour(self) -> usize {
        match self {
            Resolution::Hourly => 1,
            Resolution::QuarterHour => 4,
            Resolution::FiveMin => 12,
        }
    }

    pub fn minutes(self) -> u32 {
        60 / self.steps_per_hour() as u32
    }
}

/// Real/reactive series for one node-phase.
#[derive(Debug, Clone, Default)]
pub struct PqSeries {
    pub p_kw: Vec<f64>,
    pub q_kvar: Vec<f64>,
}

/// Time series of load and PV availability at one resolution. Values are
/// nonnegative; PV availability never exceeds the unit rating.
#[derive(Debug, Clone)]
pub struct Profile {
    /// Hour-of-day of the first sample (shapes the daily pattern).
    pub start_hour: u32,
    pub resolution: Resolution,
    pub steps: usize,
    pub load: BTreeMap<(NodeId, Phase), PqSeries>,
    /// Available (maximum) PV output per unit, total kW across its phases.
    pub pv: BTreeMap<GenId, Vec<f64>>,
}

#[derive(Debug, thiserror::Error)]
pub enum ForecastError {
    #[error("profiles have mismatched shape")]
    ShapeMismatch,
    #[error("bias must lie in [-30, 30], got {0}")]
    BiasOutOfRange(f64),
    #[error("target error must lie in (0, 30], got {0}")]
    TargetOutOfRange(f64),
    #[error("target error {0}% unreachable after scaling iterations (achieved {1}%)")]
    TargetUnreachable(f64, f64),
    #[error("csv: {0}")]
    Csv(String),
}

impl Profile {
    pub fn hours(&self) -> usize {
        self.steps / self.resolution.steps_per_hour()
    }

    /// Linear interpolation onto a finer (or equal) resolution; the last
    /// sample is held flat past the final anchor.
    pub fn resample(&self, to: Resolution) -> Profile {
        if to == self.resolution {
            return self.clone();
        }
        let ratio = to.steps_per_hour() as f64 / self.resolution.steps_per_hour() as f64;
        let new_steps = (self.steps as f64 * ratio).round() as usize;
        let lerp = |src: &[f64], k: usize| -> f64 {
            let pos = k as f64 / ratio;
            let i = pos.floor() as usize;
            let frac = pos - i as f64;
            if i + 1 < src.len() {
                src[i] * (1.0 - frac) + src[i + 1] * frac
            } else {
                src[src.len() - 1]
            }
        };
        let remap = |src: &[f64]| (0..new_steps).map(|k| lerp(src, k)).collect::<Vec<f64>>();
        Profile {
            start_hour: self.start_hour,
            resolution: to,
            steps: new_steps,
            load: self
                .load
                .iter()
                .map(|(k, s)| {
                    (
                        *k,
                        PqSeries {
                            p_kw: remap(&s.p_kw),
                            q_kvar: remap(&s.q_kvar),
                        },
                    )
                })
                .collect(),
            pv: self.pv.iter().map(|(k, s)| (*k, remap(s))).collect(),
        }
    }

    /// Convex blend toward another profile of identical shape:
    /// `(1-w)*self + w*toward`.
    pub fn blend_toward(&self, toward: &Profile, w: f64) -> Result<Profile, ForecastError> {
        if self.steps != toward.steps || self.resolution != toward.resolution {
            return Err(ForecastError::ShapeMismatch);
        }
        let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
            a.iter()
                .zip(b)
                .map(|(x, y)| (1.0 - w) * x + w * y)
                .collect()
        };
        let mut out = self.clone();
        for (k, s) in &mut out.load {
            let other = toward.load.get(k).ok_or(ForecastError::ShapeMismatch)?;
            s.p_kw = mix(&s.p_kw, &other.p_kw);
            s.q_kvar = mix(&s.q_kvar, &other.q_kvar);
        }
        for (k, s) in &mut out.pv {
            let other = toward.pv.get(k).ok_or(ForecastError::ShapeMismatch)?;
            *s = mix(s, other);
        }
        Ok(out)
    }

    /// Slice out `count` hours starting at hour `from` (same resolution).
    pub fn slice_hours(&self, from: usize, count: usize) -> Profile {
        let sph = self.resolution.steps_per_hour();
        let a = (from * sph).min(self.steps);
        let b = ((from + count) * sph).min(self.steps);
        let cut = |s: &[f64]| s[a..b].to_vec();
        Profile {
            start_hour: (self.start_hour + from as u32) % 24,
            resolution: self.resolution,
            steps: b - a,
            load: self
                .load
                .iter()
                .map(|(k, s)| {
                    (
                        *k,
                        PqSeries {
                            p_kw: cut(&s.p_kw),
                            q_kvar: cut(&s.q_kvar),
                        },
                    )
                })
                .collect(),
            pv: self.pv.iter().map(|(k, s)| (*k, cut(s))).collect(),
        }
    }

    /// Scale every PV series in place (hosting-capacity sweeps).
    pub fn scale_pv(&mut self, factor: f64) {
        for s in self.pv.values_mut() {
            for v in s.iter_mut() {
                *v *= factor;
            }
        }
    }

    /// Total system load at a step (kW).
    pub fn total_load_kw(&self, step: usize) -> f64 {
        self.load.values().map(|s| s.p_kw[step]).sum()
    }

    pub fn node_load(&self, node: NodeId, phase: Phase, step: usize) -> (f64, f64) {
        self.load
            .get(&(node, phase))
            .map(|s| (s.p_kw[step], s.q_kvar[step]))
            .unwrap_or((0.0, 0.0))
    }

    pub fn pv_avail(&self, gen: GenId, step: usize) -> f64 {
        self.pv.get(&gen).map(|s| s[step]).unwrap_or(0.0)
    }

    fn map_values(&self, mut f: impl FnMut(bool, usize, f64) -> f64) -> Profile {
        let mut out = self.clone();
        for s in out.load.values_mut() {
            for (k, v) in s.p_kw.iter_mut().enumerate() {
                *v = f(false, k, *v);
            }
            for (k, v) in s.q_kvar.iter_mut().enumerate() {
                *v = f(false, k, *v);
            }
        }
        for s in out.pv.values_mut() {
            for (k, v) in s.iter_mut().enumerate() {
                *v = f(true, k, *v);
            }
        }
        out
    }

    fn clip_nonneg_and_ratings(&mut self, model: &NetworkModel) {
        for s in self.load.values_mut() {
            for v in s.p_kw.iter_mut().chain(s.q_kvar.iter_mut()) {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        for (gid, s) in self.pv.iter_mut() {
            let rating = model.gen(*gid).s_kva;
            for v in s.iter_mut() {
                *v = v.clamp(0.0, rating);
            }
        }
    }
}

/// Scenario model for the hourly stochastic stage.
#[derive(Debug, Clone)]
pub enum ErrorModel {
    /// Degenerate: every scenario equals the base forecast.
    Zero,
    /// Mean-one multiplicative lognormal factors, one per hour applied
    /// system-wide (loads and PV drawn from independent streams).
    Lognormal { sigma: f64 },
}

#[derive(Debug, Clone)]
pub struct ScenarioSet {
    pub scenarios: Vec<Profile>,
    pub probabilities: Vec<f64>,
}

impl ScenarioSet {
    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }
}

/// Monte-Carlo scenario sampling around a base forecast. Deterministic
/// for a fixed seed; scenario values are clipped to nonnegative and to
/// PV ratings.
pub fn sample_scenarios(
    base: &Profile,
    model: &NetworkModel,
    error_model: &ErrorModel,
    count: usize,
    seed: u64,
) -> ScenarioSet {
    assert!(count >= 1, "scenario count must be at least 1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scenarios = Vec::with_capacity(count);
    for _ in 0..count {
        let scen = match error_model {
            ErrorModel::Zero => base.clone(),
            ErrorModel::Lognormal { sigma } => {
                let normal = Normal::new(0.0, 1.0).expect("unit normal");
                let hours = base.hours().max(1);
                let sph = base.resolution.steps_per_hour();
                let mu = -sigma * sigma / 2.0;
                let load_f: Vec<f64> = (0..hours)
                    .map(|_| (mu + sigma * normal.sample(&mut rng)).exp())
                    .collect();
                let pv_f: Vec<f64> = (0..hours)
                    .map(|_| (mu + sigma * normal.sample(&mut rng)).exp())
                    .collect();
                let mut s = base.map_values(|is_pv, step, v| {
                    let h = (step / sph).min(hours - 1);
                    v * if is_pv { pv_f[h] } else { load_f[h] }
                });
                s.clip_nonneg_and_ratings(model);
                s
            }
        };
        scenarios.push(scen);
    }
    let p = 1.0 / count as f64;
    ScenarioSet {
        scenarios,
        probabilities: vec![p; count],
    }
}

/// Forecast-error case selector for realization generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FeCase {
    /// Uniformly biased forecasts; the signed error equals the resulting
    /// forecast-vs-actual error percentage (positive: forecast high).
    Fe1 { bias_pct: f64 },
    /// Random over/under-estimation scaled to a target error percentage.
    Fe2 { target_mape_pct: f64 },
    /// Realization equals the forecast.
    None,
}

/// Produce the realization profile the simulator treats as ground truth.
pub fn inject_error(
    base: &Profile,
    model: &NetworkModel,
    case: FeCase,
    seed: u64,
) -> Result<Profile, ForecastError> {
    match case {
        FeCase::None => Ok(base.clone()),
        FeCase::Fe1 { bias_pct } => {
            if !(-30.0..=30.0).contains(&bias_pct) {
                return Err(ForecastError::BiasOutOfRange(bias_pct));
            }
            let factor = 1.0 / (1.0 + 0.01 * bias_pct);
            let mut out = base.map_values(|_, _, v| v * factor);
            out.clip_nonneg_and_ratings(model);
            Ok(out)
        }
        FeCase::Fe2 { target_mape_pct } => {
            if !(0.0..=30.0).contains(&target_mape_pct) || target_mape_pct == 0.0 {
                return Err(ForecastError::TargetOutOfRange(target_mape_pct));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, 1.0).expect("unit normal");
            let hours = base.hours().max(1);
            let sph = base.resolution.steps_per_hour();
            let shocks: Vec<f64> = (0..hours).map(|_| normal.sample(&mut rng)).collect();
            let pv_shocks: Vec<f64> = (0..hours).map(|_| normal.sample(&mut rng)).collect();
            let build = |theta: f64| -> Profile {
                let mut out = base.map_values(|is_pv, step, v| {
                    let h = (step / sph).min(hours - 1);
                    let e = if is_pv { pv_shocks[h] } else { shocks[h] };
                    v * (1.0 + theta * e)
                });
                out.clip_nonneg_and_ratings(model);
                out
            };
            // bisection on the shock scale until the achieved error hits the
            // target window
            let (mut lo, mut hi) = (0.0_f64, 1.5_f64);
            let mut best = build(hi);
            let mut achieved = mape(base, &best).map(|m| m.0).unwrap_or(0.0);
            if achieved < target_mape_pct - 0.5 {
                return Err(ForecastError::TargetUnreachable(target_mape_pct, achieved));
            }
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let cand = build(mid);
                achieved = mape(base, &cand).map(|m| m.0).unwrap_or(0.0);
                if (achieved - target_mape_pct).abs() <= 0.5 {
                    return Ok(cand);
                }
                if achieved > target_mape_pct {
                    hi = mid;
                } else {
                    lo = mid;
                }
                best = cand;
            }
            let final_m = mape(base, &best).map(|m| m.0).unwrap_or(0.0);
            if (final_m - target_mape_pct).abs() <= 0.5 {
                Ok(best)
            } else {
                Err(ForecastError::TargetUnreachable(target_mape_pct, final_m))
            }
        }
    }
}

/// Mean absolute percent error between forecast and actual load series
/// (real power). Entries with zero actual are excluded; the count of
/// exclusions is reported.
pub fn mape(forecast: &Profile, actual: &Profile) -> Result<(f64, usize), ForecastError> {
    if forecast.steps != actual.steps || forecast.resolution != actual.resolution {
        return Err(ForecastError::ShapeMismatch);
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut excluded = 0usize;
    for (key, fs) in &forecast.load {
        let Some(as_) = actual.load.get(key) else {
            return Err(ForecastError::ShapeMismatch);
        };
        for (f, a) in fs.p_kw.iter().zip(&as_.p_kw) {
            if *a > 0.0 {
                sum += (f - a).abs() / a;
                n += 1;
            } else {
                excluded += 1;
            }
        }
    }
    if n == 0 {
        return Ok((0.0, excluded));
    }
    Ok((100.0 * sum / n as f64, excluded))
}

// ---------------------------------------------------------------------
// base-shape synthesis
// ---------------------------------------------------------------------

/// Normalized residential double-peak daily load shape.
fn load_shape(hour_of_day: f64) -> f64 {
    let h = hour_of_day.rem_euclid(24.0);
    let morning = 0.35 * (-((h - 8.0) * (h - 8.0)) / 8.0).exp();
    let evening = 0.55 * (-((h - 19.0) * (h - 19.0)) / 10.0).exp();
    0.45 + morning + evening
}

/// Clear-sky PV availability fraction of rating.
fn pv_shape(hour_of_day: f64) -> f64 {
    let h = hour_of_day.rem_euclid(24.0);
    if !(6.0..=20.0).contains(&h) {
        return 0.0;
    }
    let x = (h - 6.0) / 14.0 * std::f64::consts::PI;
    0.9 * x.sin().max(0.0)
}

/// Deterministic hourly base forecast over `hours`, starting at
/// `start_hour` on the daily clock, scaled by node peaks and PV ratings.
pub fn synthesize_base(model: &NetworkModel, start_hour: u32, hours: usize) -> Profile {
    let mut load = BTreeMap::new();
    for node in &model.nodes {
        if !node.has_load() {
            continue;
        }
        for phase in node.phases.iter() {
            let pk = node.peak_kw[phase.index()];
            let qk = node.peak_kvar[phase.index()];
            if pk == 0.0 && qk == 0.0 {
                continue;
            }
            let mut p = Vec::with_capacity(hours);
            let mut q = Vec::with_capacity(hours);
            for h in 0..hours {
                let s = load_shape((start_hour as usize + h) as f64);
                p.push(pk * s);
                q.push(qk * s);
            }
            load.insert((node.id, phase), PqSeries { p_kw: p, q_kvar: q });
        }
    }
    let mut pv = BTreeMap::new();
    for gen in &model.gens {
        if matches!(gen.kind, GenKind::PvControllable | GenKind::PvBtm) {
            let series = (0..hours)
                .map(|h| gen.s_kva * pv_shape((start_hour as usize + h) as f64))
                .collect();
            pv.insert(gen.id, series);
        }
    }
    Profile {
        start_hour: start_hour % 24,
        resolution: Resolution::Hourly,
        steps: hours,
        load,
        pv,
    }
}

// ---------------------------------------------------------------------
// CSV interchange
// ---------------------------------------------------------------------

/// Export the load series as CSV rows (timestamp, node_id, phase, p_kw,
/// q_kvar); timestamps are minutes from the profile start.
pub fn write_load_csv(profile: &Profile, w: impl Write) -> Result<(), ForecastError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["timestamp", "node_id", "phase", "p_kw", "q_kvar"])
        .map_err(|e| ForecastError::Csv(e.to_string()))?;
    let minutes = profile.resolution.minutes();
    for ((node, phase), s) in &profile.load {
        for k in 0..profile.steps {
            wtr.write_record([
                (k as u32 * minutes).to_string(),
                node.to_string(),
                phase.to_string(),
                format!("{}", s.p_kw[k]),
                format!("{}", s.q_kvar[k]),
            ])
            .map_err(|e| ForecastError::Csv(e.to_string()))?;
        }
    }
    wtr.flush().map_err(|e| ForecastError::Csv(e.to_string()))
}

/// Import a load CSV produced by [`write_load_csv`]. PV series are left
/// empty; resolution is inferred from the timestamp stride.
pub fn read_load_csv(r: impl Read, start_hour: u32) -> Result<Profile, ForecastError> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut raw: BTreeMap<(NodeId, Phase), Vec<(u32, f64, f64)>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| ForecastError::Csv(e.to_string()))?;
        let ts: u32 = rec[0]
            .parse()
            .map_err(|_| ForecastError::Csv(format!("bad timestamp {:?}", &rec[0])))?;
        let node: u32 = rec[1]
            .parse()
            .map_err(|_| ForecastError::Csv(format!("bad node {:?}", &rec[1])))?;
        let phase = match &rec[2] {
            "a" => Phase::A,
            "b" => Phase::B,
            "c" => Phase::C,
            other => return Err(ForecastError::Csv(format!("bad phase {:?}", other))),
        };
        let p: f64 = rec[3]
            .parse()
            .map_err(|_| ForecastError::Csv("bad p_kw".into()))?;
        let q: f64 = rec[4]
            .parse()
            .map_err(|_| ForecastError::Csv("bad q_kvar".into()))?;
        raw.entry((NodeId(node), phase)).or_default().push((ts, p, q));
    }
    let mut stride = 60u32;
    for series in raw.values_mut() {
        series.sort_by_key(|e| e.0);
        if series.len() >= 2 {
            stride = series[1].0 - series[0].0;
        }
    }
    let resolution = match stride {
        60 => Resolution::Hourly,
        15 => Resolution::QuarterHour,
        5 => Resolution::FiveMin,
        other => {
            return Err(ForecastError::Csv(format!(
                "unsupported timestamp stride {} min",
                other
            )))
        }
    };
    let steps = raw.values().map(Vec::len).max().unwrap_or(0);
    let load = raw
        .into_iter()
        .map(|(k, series)| {
            let mut p = vec![0.0; steps];
            let mut q = vec![0.0; steps];
            for (i, (_, pv, qv)) in series.into_iter().enumerate() {
                p[i] = pv;
                q[i] = qv;
            }
            (k, PqSeries { p_kw: p, q_kvar: q })
        })
        .collect();
    Ok(Profile {
        start_hour,
        resolution,
        steps,
        load,
        pv: BTreeMap::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::load_network;

    fn model() -> NetworkModel {
        let text = r#"
schema_version = 1

[base]
kva = 1000.0
kv_ll = 4.16

[[node]]
id = 1
phases = "abc"

[[node]]
id = 2
phases = "abc"
load_class = "ncl"
peak_kw = [30.0, 30.0, 30.0]
peak_kvar = [9.0, 9.0, 9.0]

[[edge]]
id = 1
from = 1
to = 2
phases = "abc"
r = [[0.2, 0.0, 0.0], [0.0, 0.2, 0.0], [0.0, 0.0, 0.2]]
x = [[0.4, 0.0, 0.0], [0.0, 0.4, 0.0], [0.0, 0.0, 0.4]]

[[generator]]
id = 1
node = 1
kind = "es"
phases = "abc"
s_kva = 250.0
e_kwh = 500.0
grid_forming = true

[[generator]]
id = 2
node = 1
kind = "pv_c"
phases = "abc"
s_kva = 100.0

[[node_group]]
id = 1
nodes = [1, 2]
"#;
        load_network(text).unwrap()
    }

    fn constant_profile(m: &NetworkModel, kw: f64, hours: usize) -> Profile {
        let mut base = synthesize_base(m, 0, hours);
        for s in base.load.values_mut() {
            for v in s.p_kw.iter_mut() {
                *v = kw;
            }
            for v in s.q_kvar.iter_mut() {
                *v = kw * 0.3;
            }
        }
        base
    }

    #[test]
    fn mape_identical_is_zero() {
        let m = model();
        let p = synthesize_base(&m, 0, 24);
        let (v, _) = mape(&p, &p).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn mape_constant_ten_percent() {
        let m = model();
        let a = constant_profile(&m, 100.0, 4);
        let mut f = a.clone();
        for s in f.load.values_mut() {
            for v in s.p_kw.iter_mut() {
                *v = 110.0;
            }
        }
        let (v, _) = mape(&f, &a).unwrap();
        assert!((v - 10.0).abs() < 1e-12);
    }

    #[test]
    fn mape_hand_average() {
        // f=(90,120) vs a=(100,100) -> mean(10%, 20%) = 15%
        let m = model();
        let mut a = constant_profile(&m, 100.0, 2);
        a.load.retain(|k, _| k.1 == Phase::A);
        let mut f = a.clone();
        for s in f.load.values_mut() {
            s.p_kw = vec![90.0, 120.0];
        }
        let (v, _) = mape(&f, &a).unwrap();
        assert!((v - 15.0).abs() < 1e-12);
    }

    #[test]
    fn fe1_zero_bias_is_identity() {
        let m = model();
        let base = synthesize_base(&m, 0, 24);
        let real = inject_error(&base, &m, FeCase::Fe1 { bias_pct: 0.0 }, 7).unwrap();
        let (v, _) = mape(&base, &real).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn fe1_positive_bias_shrinks_realization() {
        // +30% bias on constant 100 kW forecast: realization 100/1.3
        let m = model();
        let base = constant_profile(&m, 100.0, 6);
        let real = inject_error(&base, &m, FeCase::Fe1 { bias_pct: 30.0 }, 7).unwrap();
        let got = real.load.values().next().unwrap().p_kw[0];
        // oracle: direct evaluation of the error definition
        let expect = 100.0 / 1.3;
        assert!((got - expect).abs() < 1e-9, "{} vs {}", got, expect);
        assert!((expect - 76.923).abs() < 1e-3);
        let (v, _) = mape(&base, &real).unwrap();
        assert!((v - 30.0).abs() < 1e-9, "signed error magnitude {}", v);
    }

    #[test]
    fn fe1_linear_in_bias_for_constant_profiles() {
        let m = model();
        let base = constant_profile(&m, 100.0, 6);
        let mut last = 0.0;
        for bias in [5.0, 10.0, 20.0, 30.0] {
            let real = inject_error(&base, &m, FeCase::Fe1 { bias_pct: bias }, 7).unwrap();
            let (v, _) = mape(&base, &real).unwrap();
            assert!((v - bias).abs() < 1e-9);
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn fe2_hits_target_window() {
        let m = model();
        let base = synthesize_base(&m, 0, 48);
        let real = inject_error(
            &base,
            &m,
            FeCase::Fe2 {
                target_mape_pct: 10.0,
            },
            42,
        )
        .unwrap();
        let (v, _) = mape(&base, &real).unwrap();
        assert!((9.5..=10.5).contains(&v), "achieved {}", v);
    }

    #[test]
    fn scenarios_zero_model_all_equal_base() {
        let m = model();
        let base = synthesize_base(&m, 0, 24);
        let set = sample_scenarios(&base, &m, &ErrorModel::Zero, 7, 1);
        assert_eq!(set.len(), 7);
        for s in &set.scenarios {
            assert_eq!(s.total_load_kw(12), base.total_load_kw(12));
        }
    }

    #[test]
    fn scenario_probabilities_uniform() {
        let m = model();
        let base = synthesize_base(&m, 0, 24);
        let set = sample_scenarios(&base, &m, &ErrorModel::Lognormal { sigma: 0.1 }, 20, 3);
        assert_eq!(set.probabilities, vec![0.05; 20]);
    }

    #[test]
    fn scenario_sampling_deterministic() {
        let m = model();
        let base = synthesize_base(&m, 0, 24);
        let a = sample_scenarios(&base, &m, &ErrorModel::Lognormal { sigma: 0.15 }, 5, 99);
        let b = sample_scenarios(&base, &m, &ErrorModel::Lognormal { sigma: 0.15 }, 5, 99);
        for (x, y) in a.scenarios.iter().zip(&b.scenarios) {
            for (kx, sx) in &x.load {
                assert_eq!(sx.p_kw, y.load[kx].p_kw);
            }
        }
    }

    #[test]
    fn scenario_mean_converges_to_base() {
        let m = model();
        let base = constant_profile(&m, 100.0, 2);
        let set = sample_scenarios(&base, &m, &ErrorModel::Lognormal { sigma: 0.1 }, 10_000, 5);
        let mean: f64 = set
            .scenarios
            .iter()
            .map(|s| s.total_load_kw(0))
            .sum::<f64>()
            / set.len() as f64;
        let expect = base.total_load_kw(0);
        assert!(
            (mean - expect).abs() / expect < 0.02,
            "mean {} vs base {}",
            mean,
            expect
        );
    }

    #[test]
    fn pv_clipped_to_rating_and_nonneg() {
        let m = model();
        let base = synthesize_base(&m, 0, 24);
        let real = inject_error(&base, &m, FeCase::Fe1 { bias_pct: -30.0 }, 7).unwrap();
        for (gid, s) in &real.pv {
            let rating = m.gen(*gid).s_kva;
            for v in s {
                assert!(*v >= 0.0 && *v <= rating + 1e-9);
            }
        }
    }

    #[test]
    fn resample_and_blend() {
        let m = model();
        let base = synthesize_base(&m, 0, 24);
        let q = base.resample(Resolution::QuarterHour);
        assert_eq!(q.steps, 96);
        // anchors preserved
        let k = (NodeId(2), Phase::A);
        assert!((q.load[&k].p_kw[0] - base.load[&k].p_kw[0]).abs() < 1e-12);
        assert!((q.load[&k].p_kw[4] - base.load[&k].p_kw[1]).abs() < 1e-12);
        let blended = base.blend_toward(&base, 0.5).unwrap();
        assert_eq!(blended.total_load_kw(3), base.total_load_kw(3));
    }

    #[test]
    fn csv_round_trip() {
        let m = model();
        let base = synthesize_base(&m, 0, 4);
        let mut buf = Vec::new();
        write_load_csv(&base, &mut buf).unwrap();
        let back = read_load_csv(buf.as_slice(), 0).unwrap();
        assert_eq!(back.steps, base.steps);
        for (k, s) in &base.load {
            assert_eq!(back.load[k].p_kw, s.p_kw);
        }
    }
}
