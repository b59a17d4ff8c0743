//! Four-box AMOC surrogate.
//!
//! Three surface boxes (north, south, low latitudes) sit on a single deep
//! box. The low-latitude box has a prognostic thickness `d_low` set by a
//! mass balance between Ekman inflow, diffusive upwelling, the eddy return
//! flow and the northern overturning `m_n`. Temperatures and salinities are
//! prognostic in all four boxes, giving nine state variables.
//!
//! Internally the integrator advances tracer *contents* (volume × tracer),
//! which makes total salt a linear invariant of the ODE. RK4 preserves
//! linear invariants, so salt is conserved to round-off.

mod integrate;
mod params;
mod sweep;

pub use integrate::{integrate, integrate_with, IntegrationOptions};
pub use params::{ModelParams, PARAMS_FORMAT_VERSION, SECONDS_PER_YEAR, SV};
pub use sweep::{hysteresis_sweep, SweepPoint, SweepResult};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explorer::{Bounds, Config};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoxModelError {
    #[error("degenerate state: `{field}` is not finite")]
    DegenerateState { field: &'static str },
    #[error("state left its sanity bounds at step {step}: {detail}")]
    StateBlowUp { step: usize, detail: String },
    #[error("config {config:?} is outside the search bounds")]
    OutOfBounds { config: Config },
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error("parameter file: {0}")]
    ParamFile(String),
    #[error("invalid integration request: {0}")]
    InvalidRequest(String),
}

/// Box indices used by the tracer bookkeeping.
const NORTH: usize = 0;
const SOUTH: usize = 1;
const LOW: usize = 2;
const DEEP: usize = 3;

/// The nine prognostic variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    /// Low-latitude pycnocline depth, m.
    pub d_low: f64,
    pub t_n: f64,
    pub t_s: f64,
    pub t_l: f64,
    pub t_d: f64,
    pub s_n: f64,
    pub s_s: f64,
    pub s_l: f64,
    pub s_d: f64,
}

/// Time derivative of a [`ModelState`], per year, field for field.
pub type ModelStateDerivative = ModelState;

impl ModelState {
    /// Initial-condition template used for oracle runs: a salty deep box and
    /// fresh north box, temperatures at the restoring targets.
    pub fn template(params: &ModelParams) -> Self {
        Self {
            d_low: 400.0,
            t_n: params.t_star_n,
            t_s: params.t_star_s,
            t_l: params.t_star_l,
            t_d: TEMPLATE_DEEP_T,
            s_n: TEMPLATE_S_N,
            s_s: TEMPLATE_S_S,
            s_l: TEMPLATE_S_L,
            s_d: TEMPLATE_S_D,
        }
    }

    pub fn to_array(&self) -> [f64; 9] {
        [self.d_low, self.t_n, self.t_s, self.t_l, self.t_d, self.s_n, self.s_s, self.s_l, self.s_d]
    }

    pub fn from_array(a: [f64; 9]) -> Self {
        Self {
            d_low: a[0],
            t_n: a[1],
            t_s: a[2],
            t_l: a[3],
            t_d: a[4],
            s_n: a[5],
            s_s: a[6],
            s_l: a[7],
            s_d: a[8],
        }
    }

    fn temperatures(&self) -> [f64; 4] {
        [self.t_n, self.t_s, self.t_l, self.t_d]
    }

    fn salinities(&self) -> [f64; 4] {
        [self.s_n, self.s_s, self.s_l, self.s_d]
    }

    /// Box volumes (north, south, low, deep) in m³.
    pub fn volumes(&self, params: &ModelParams) -> [f64; 4] {
        volumes(params, self.d_low)
    }

    /// Volume-weighted salt content Σ V_b·S_b.
    pub fn total_salt(&self, params: &ModelParams) -> f64 {
        let v = self.volumes(params);
        v.iter().zip(self.salinities()).map(|(v, s)| v * s).sum()
    }

    /// Checks the integration sanity bounds; returns a description of the
    /// first violation.
    pub fn check_bounds(&self, params: &ModelParams) -> Result<(), String> {
        let a = self.to_array();
        const NAMES: [&str; 9] = ["d_low", "t_n", "t_s", "t_l", "t_d", "s_n", "s_s", "s_l", "s_d"];
        if let Some(i) = a.iter().position(|x| !x.is_finite()) {
            return Err(format!("{} is not finite", NAMES[i]));
        }
        if !(self.d_low > 0.0 && self.d_low < params.depth_total) {
            return Err(format!("d_low = {} outside (0, {})", self.d_low, params.depth_total));
        }
        for i in 1..5 {
            if !(a[i] > T_MIN && a[i] < T_MAX) {
                return Err(format!("{} = {} outside ({T_MIN}, {T_MAX})", NAMES[i], a[i]));
            }
        }
        for i in 5..9 {
            if !(a[i] > S_MIN && a[i] < S_MAX) {
                return Err(format!("{} = {} outside ({S_MIN}, {S_MAX})", NAMES[i], a[i]));
            }
        }
        Ok(())
    }
}

const TEMPLATE_DEEP_T: f64 = 3.0;
const TEMPLATE_S_N: f64 = 34.01;
const TEMPLATE_S_S: f64 = 34.3;
const TEMPLATE_S_L: f64 = 35.5;
const TEMPLATE_S_D: f64 = 35.92;

const T_MIN: f64 = -4.0;
const T_MAX: f64 = 40.0;
const S_MIN: f64 = 0.0;
const S_MAX: f64 = 60.0;

fn volumes(params: &ModelParams, d_low: f64) -> [f64; 4] {
    let v_n = params.area_n * params.depth_n;
    let v_s = params.area_s * params.depth_s;
    let v_l = params.area_low * d_low;
    [v_n, v_s, v_l, params.total_volume() - v_n - v_s - v_l]
}

/// Volume fluxes in Sv.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fluxes {
    /// Northern overturning; positive in the "on" sense.
    pub m_n: f64,
    pub m_ek: f64,
    pub m_eddy: f64,
    pub m_upw: f64,
    pub m_sl: f64,
    pub m_nl: f64,
    pub m_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    On,
    Off,
}

impl Label {
    /// On iff the overturning is strictly positive.
    pub fn from_overturning(m_n: f64) -> Self {
        if m_n > 0.0 {
            Label::On
        } else {
            Label::Off
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Label::On => "on",
            Label::Off => "off",
        }
    }

    /// 1 for On, 0 for Off.
    pub fn as_target(&self) -> f64 {
        match self {
            Label::On => 1.0,
            Label::Off => 0.0,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "on" => Some(Label::On),
            "off" => Some(Label::Off),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimOutcome {
    pub final_state: ModelState,
    pub final_m_n: f64,
    pub label: Label,
    pub converged: bool,
    pub years_integrated: f64,
}

/// Linear equation of state.
#[inline]
fn density(params: &ModelParams, t: f64, s: f64) -> f64 {
    params.rho0 - params.alpha_t * t + params.beta_s * s
}

pub fn compute_fluxes(params: &ModelParams, state: &ModelState) -> Result<Fluxes, BoxModelError> {
    let rho_n = density(params, state.t_n, state.s_n);
    if !rho_n.is_finite() {
        return Err(BoxModelError::DegenerateState { field: "rho_n" });
    }
    let rho_l = density(params, state.t_l, state.s_l);
    if !rho_l.is_finite() {
        return Err(BoxModelError::DegenerateState { field: "rho_low" });
    }
    let d = state.d_low;
    let fluxes = Fluxes {
        m_n: params.lambda_hyd * (rho_n - rho_l) * d * d / SV,
        m_ek: params.m_ek,
        m_eddy: params.a_gm * d * params.lx_s / params.ly_s / SV,
        m_upw: params.kappa_v * params.area_low / d / SV,
        m_sl: params.k_sl * d * params.lx_s / SV,
        m_nl: params.k_nl * d * params.lx_n / SV,
        m_s: params.m_s,
    };
    let named = [
        ("m_n", fluxes.m_n),
        ("m_eddy", fluxes.m_eddy),
        ("m_upw", fluxes.m_upw),
        ("m_sl", fluxes.m_sl),
        ("m_nl", fluxes.m_nl),
    ];
    for (field, value) in named {
        if !value.is_finite() {
            return Err(BoxModelError::DegenerateState { field });
        }
    }
    Ok(fluxes)
}

/// Rates of change of `[d_low, V·T (n,s,l,d), V·S (n,s,l,d)]` in SI units
/// per second.
fn content_rates(params: &ModelParams, state: &ModelState) -> Result<(Fluxes, [f64; 9]), BoxModelError> {
    let fl = compute_fluxes(params, state)?;
    let vols = volumes(params, state.d_low);
    let t = state.temperatures();
    let s = state.salinities();
    let mut heat = [0.0_f64; 4];
    let mut salt = [0.0_f64; 4];

    // Donor-cell transport of volume `q` (m³/s, q >= 0) from one box to another.
    let mut advect = |from: usize, to: usize, q: f64| {
        heat[from] -= q * t[from];
        heat[to] += q * t[from];
        salt[from] -= q * s[from];
        salt[to] += q * s[from];
    };

    let q_n = fl.m_n * SV;
    if q_n > 0.0 {
        advect(LOW, NORTH, q_n);
        advect(NORTH, DEEP, q_n);
    } else if q_n < 0.0 {
        advect(DEEP, NORTH, -q_n);
        advect(NORTH, LOW, -q_n);
    }
    let q_ek = fl.m_ek * SV;
    let q_eddy = fl.m_eddy * SV;
    advect(SOUTH, LOW, q_ek);
    advect(LOW, SOUTH, q_eddy);
    advect(DEEP, LOW, fl.m_upw * SV);
    // The south box has fixed volume; its net Ekman/eddy imbalance is
    // drawn from (or returned to) the deep box.
    let q_ds = q_ek - q_eddy;
    if q_ds > 0.0 {
        advect(DEEP, SOUTH, q_ds);
    } else if q_ds < 0.0 {
        advect(SOUTH, DEEP, -q_ds);
    }
    for (a, b, q) in [(SOUTH, LOW, fl.m_sl), (NORTH, LOW, fl.m_nl), (SOUTH, DEEP, fl.m_s)] {
        advect(a, b, q * SV);
        advect(b, a, q * SV);
    }

    let t_star = [params.t_star_n, params.t_star_s, params.t_star_l];
    for b in [NORTH, SOUTH, LOW] {
        heat[b] += vols[b] * (t_star[b] - t[b]) / params.tau_restore;
    }

    // Virtual salt fluxes: freshwater leaving the low latitudes is
    // equivalent to salt moving from the high latitudes into the low box.
    let salt_n = params.fw_n * SV * params.s_ref;
    let salt_s = params.fw_s * SV * params.s_ref;
    salt[NORTH] -= salt_n;
    salt[SOUTH] -= salt_s;
    salt[LOW] += salt_n + salt_s;

    let dv_low = (fl.m_ek + fl.m_upw - fl.m_eddy - fl.m_n) * SV;
    Ok((
        fl,
        [
            dv_low / params.area_low,
            heat[0],
            heat[1],
            heat[2],
            heat[3],
            salt[0],
            salt[1],
            salt[2],
            salt[3],
        ],
    ))
}

/// Converts content rates into per-year tracer tendencies.
fn state_rates(params: &ModelParams, state: &ModelState, content: &[f64; 9]) -> ModelStateDerivative {
    let vols = volumes(params, state.d_low);
    let dv_low = content[0] * params.area_low;
    let dv = [0.0, 0.0, dv_low, -dv_low];
    let t = state.temperatures();
    let s = state.salinities();
    let mut out = [0.0; 9];
    out[0] = content[0] * SECONDS_PER_YEAR;
    for b in 0..4 {
        out[1 + b] = (content[1 + b] - t[b] * dv[b]) / vols[b] * SECONDS_PER_YEAR;
        out[5 + b] = (content[5 + b] - s[b] * dv[b]) / vols[b] * SECONDS_PER_YEAR;
    }
    ModelState::from_array(out)
}

/// d(state)/dt, per year.
pub fn tendency(params: &ModelParams, state: &ModelState) -> Result<ModelStateDerivative, BoxModelError> {
    let (_, content) = content_rates(params, state)?;
    Ok(state_rates(params, state, &content))
}

/// Oracle entry point: overrides `m_ek`, `fw_n` and the initial `d_low`
/// with the config's values and integrates with default options.
pub fn run_config(config: &Config, base: &ModelParams, init_template: &ModelState) -> Result<SimOutcome, BoxModelError> {
    run_config_with(config, base, init_template, &IntegrationOptions::default())
}

pub fn run_config_with(
    config: &Config,
    base: &ModelParams,
    init_template: &ModelState,
    options: &IntegrationOptions,
) -> Result<SimOutcome, BoxModelError> {
    if !Bounds::TABLE1.contains(config) {
        return Err(BoxModelError::OutOfBounds { config: *config });
    }
    let params = ModelParams { m_ek: config.m_ek, fw_n: config.fw_n, ..*base };
    let initial = ModelState { d_low: config.d_low0, ..*init_template };
    integrate_with(&params, &initial, options)
}
