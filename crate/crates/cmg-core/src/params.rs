//! Shared stage parameterization with the reference defaults used across
//! the test system.

use serde::Deserialize;

/// Which connectivity chance rows the hourly stage instantiates: one per
/// external node group (default) or one summed over all external groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChanceScope {
    PerNg,
    Summed,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageParams {
    /// Reserve factor applied to storage dispatch and diesel bounds.
    pub gamma: f64,
    /// Exactness coefficient of the apparent-power polygon.
    pub tau: f64,
    /// Minimum service duration, hours (node groups and load zones).
    pub msd_hours: usize,
    /// Minimum supply fraction for group connectivity, by group kind.
    pub eta_cl: f64,
    pub eta_ncl: f64,
    /// Chance violation thresholds, by group kind.
    pub eps_cl: f64,
    pub eps_ncl: f64,
    pub chance_scope: ChanceScope,
    /// Scheduling SOC band (percent); operational limits live on the unit.
    pub soc_sched_min: f64,
    pub soc_sched_max: f64,
    /// Critical-load minimum must-supply as a fraction of forecast.
    pub cl_must_supply_frac: f64,
    /// Knots per squared objective term.
    pub pwl_knots: usize,
    /// Cold-load pickup multiplier parameters: 1 + k(1 - exp(-lambda h)).
    pub clpu_k: f64,
    pub clpu_lambda: f64,
    /// Service-duration equity weight parameters.
    pub equity_kappa: f64,
    pub equity_window: usize,
    pub equity_enabled: bool,
    /// ANSI voltage band (per-unit magnitudes).
    pub v_min_pu: f64,
    pub v_max_pu: f64,
    /// Diesel per-phase imbalance limit as a fraction of per-phase rating.
    pub dg_imbalance_frac: f64,
    /// Line-flow limit fallback: factor on feeder peak.
    pub line_limit_factor: f64,
    /// Max tolerable hourly forecast-error energy for recourse scaling,
    /// as a fraction of grid-forming storage capacity.
    pub recourse_emax_frac: f64,
    /// Recourse history depth (hours).
    pub recourse_n: usize,
    pub recourse_enabled: bool,
    /// Fit the error trend without an intercept.
    pub recourse_zero_intercept: bool,
    /// Forecast blending toward the realization for the two lower stages.
    pub nrt_blend: f64,
    pub rt_blend: f64,
    /// Reserve-violation band for the grid-forming unit (percent SOC).
    pub rl_band_pct: f64,
    /// Relative weights of the load and deviation objective groups.
    pub w_load: f64,
    pub w_dev: f64,
    /// Solver controls.
    pub mip_gap: f64,
    pub solver: String,
    pub eds_time_limit_s: f64,
    pub nrt_time_limit_s: f64,
    pub rt_time_limit_s: f64,
    /// CMG shutdown threshold and restart hysteresis (percent SOC).
    pub shutdown_soc_pct: f64,
    pub restart_margin_pct: f64,
}

impl Default for StageParams {
    fn default() -> Self {
        Self {
            gamma: 1.2,
            tau: 1.1,
            msd_hours: 2,
            eta_cl: 0.50,
            eta_ncl: 0.75,
            eps_cl: 0.20,
            eps_ncl: 0.05,
            chance_scope: ChanceScope::PerNg,
            soc_sched_min: 20.0,
            soc_sched_max: 80.0,
            cl_must_supply_frac: 0.5,
            pwl_knots: 17,
            clpu_k: 0.5,
            clpu_lambda: 0.3,
            equity_kappa: 0.5,
            equity_window: 24,
            equity_enabled: true,
            v_min_pu: 0.95,
            v_max_pu: 1.05,
            dg_imbalance_frac: 0.10,
            line_limit_factor: 1.5,
            recourse_emax_frac: 0.10,
            recourse_n: 10,
            recourse_enabled: true,
            recourse_zero_intercept: false,
            nrt_blend: 0.5,
            rt_blend: 0.8,
            rl_band_pct: 25.0,
            w_load: 1.0,
            w_dev: 1.0,
            mip_gap: 1e-4,
            solver: "bnb".to_string(),
            eds_time_limit_s: 55.0,
            nrt_time_limit_s: 55.0,
            rt_time_limit_s: 2.0,
            shutdown_soc_pct: 20.0,
            restart_margin_pct: 2.0,
        }
    }
}

impl StageParams {
    /// Chance parameters for a group: stricter for groups without
    /// critical load.
    pub fn chance_for(&self, has_critical: bool) -> (f64, f64) {
        if has_critical {
            (self.eta_cl, self.eps_cl)
        } else {
            (self.eta_ncl, self.eps_ncl)
        }
    }
}
