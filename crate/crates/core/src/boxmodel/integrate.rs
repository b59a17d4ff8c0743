use serde::{Deserialize, Serialize};

use super::{
    content_rates, state_rates, volumes, BoxModelError, Label, ModelParams, ModelState, SimOutcome,
    SECONDS_PER_YEAR,
};

/// Fixed-step RK4 settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationOptions {
    /// Step size, years.
    pub dt_years: f64,
    /// Integration horizon, years.
    pub horizon_years: f64,
    /// Steady when every |tendency| (per year) is below
    /// `steady_tol * max(|value|, 1)`.
    pub steady_tol: f64,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        Self { dt_years: DEFAULT_DT_YEARS, horizon_years: DEFAULT_HORIZON_YEARS, steady_tol: DEFAULT_STEADY_TOL }
    }
}

pub const DEFAULT_DT_YEARS: f64 = 0.5;
pub const DEFAULT_HORIZON_YEARS: f64 = 4000.0;
pub const DEFAULT_STEADY_TOL: f64 = 1e-10;

/// Integrates from `initial` for `horizon` years with the default step and
/// steady tolerance.
pub fn integrate(params: &ModelParams, initial: &ModelState, horizon: f64) -> Result<SimOutcome, BoxModelError> {
    integrate_with(params, initial, &IntegrationOptions { horizon_years: horizon, ..Default::default() })
}

type Content = [f64; 9];

fn to_content(params: &ModelParams, st: &ModelState) -> Content {
    let v = volumes(params, st.d_low);
    [
        st.d_low,
        v[0] * st.t_n,
        v[1] * st.t_s,
        v[2] * st.t_l,
        v[3] * st.t_d,
        v[0] * st.s_n,
        v[1] * st.s_s,
        v[2] * st.s_l,
        v[3] * st.s_d,
    ]
}

fn from_content(params: &ModelParams, y: &Content) -> ModelState {
    let v = volumes(params, y[0]);
    ModelState {
        d_low: y[0],
        t_n: y[1] / v[0],
        t_s: y[2] / v[1],
        t_l: y[3] / v[2],
        t_d: y[4] / v[3],
        s_n: y[5] / v[0],
        s_s: y[6] / v[1],
        s_l: y[7] / v[2],
        s_d: y[8] / v[3],
    }
}

#[inline]
fn axpy(y: &Content, h: f64, k: &Content) -> Content {
    let mut out = *y;
    for i in 0..9 {
        out[i] += h * k[i];
    }
    out
}

fn is_steady(state: &ModelState, rates: &ModelState, tol: f64) -> bool {
    let x = state.to_array();
    let r = rates.to_array();
    x.iter().zip(r.iter()).all(|(x, r)| r.abs() < tol * x.abs().max(1.0))
}

pub fn integrate_with(
    params: &ModelParams,
    initial: &ModelState,
    options: &IntegrationOptions,
) -> Result<SimOutcome, BoxModelError> {
    let horizon = options.horizon_years;
    let dt = options.dt_years;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(BoxModelError::InvalidRequest(format!("horizon must be > 0, got {horizon}")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(BoxModelError::InvalidRequest(format!("dt must be > 0, got {dt}")));
    }
    initial
        .check_bounds(params)
        .map_err(|detail| BoxModelError::StateBlowUp { step: 0, detail })?;

    let n_steps = (horizon / dt).ceil() as usize;
    let mut y = to_content(params, initial);
    let mut state = *initial;
    let mut years = 0.0;
    let mut converged = false;

    for step in 0..n_steps {
        let (_, k1) = content_rates(params, &state)?;
        if is_steady(&state, &state_rates(params, &state, &k1), options.steady_tol) {
            converged = true;
            break;
        }
        let h_years = dt.min(horizon - years);
        let h = h_years * SECONDS_PER_YEAR;
        let (_, k2) = content_rates(params, &from_content(params, &axpy(&y, 0.5 * h, &k1)))?;
        let (_, k3) = content_rates(params, &from_content(params, &axpy(&y, 0.5 * h, &k2)))?;
        let (_, k4) = content_rates(params, &from_content(params, &axpy(&y, h, &k3)))?;
        for i in 0..9 {
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        state = from_content(params, &y);
        years = if step + 1 == n_steps { horizon } else { years + h_years };
        state
            .check_bounds(params)
            .map_err(|detail| BoxModelError::StateBlowUp { step: step + 1, detail })?;
    }

    let (fluxes, k) = content_rates(params, &state)?;
    if !converged {
        converged = is_steady(&state, &state_rates(params, &state, &k), options.steady_tol);
    }
    Ok(SimOutcome {
        final_state: state,
        final_m_n: fluxes.m_n,
        label: Label::from_overturning(fluxes.m_n),
        converged,
        years_integrated: years,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxmodel::SV;

    #[test]
    fn rejects_bad_requests() {
        let p = ModelParams::base();
        let st = ModelState::template(&p);
        assert!(matches!(integrate(&p, &st, 0.0), Err(BoxModelError::InvalidRequest(_))));
        let opts = IntegrationOptions { dt_years: -1.0, ..Default::default() };
        assert!(matches!(integrate_with(&p, &st, &opts), Err(BoxModelError::InvalidRequest(_))));
    }

    #[test]
    fn exact_fixed_point_converges_immediately() {
        let t = 8.0;
        let d = 500.0;
        let mut p = ModelParams {
            fw_n: 0.0,
            fw_s: 0.0,
            kappa_v: 0.0,
            t_star_n: t,
            t_star_s: t,
            t_star_l: t,
            ..ModelParams::base()
        };
        p.a_gm = p.m_ek * SV * p.ly_s / (d * p.lx_s);
        let st = ModelState { d_low: d, t_n: t, t_s: t, t_l: t, t_d: t, s_n: 35.0, s_s: 35.0, s_l: 35.0, s_d: 35.0 };
        let out = integrate(&p, &st, 100.0).unwrap();
        assert!(out.converged);
        assert_eq!(out.years_integrated, 0.0);
        assert_eq!(out.final_state, st);
        assert_eq!(out.label, Label::Off);
    }

    #[test]
    fn blow_up_reports_the_step() {
        // A huge virtual salt flux drives the north box fresh within a few steps.
        let p = ModelParams { fw_n: 5000.0, ..ModelParams::base() };
        let err = integrate(&p, &ModelState::template(&p), 100.0).unwrap_err();
        match err {
            BoxModelError::StateBlowUp { step, detail } => {
                assert!(step > 0);
                assert!(detail.contains("outside"), "{detail}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn partial_final_step_lands_on_horizon() {
        let p = ModelParams::base();
        let opts = IntegrationOptions { dt_years: 0.3, horizon_years: 1.0, steady_tol: 0.0 };
        let out = integrate_with(&p, &ModelState::template(&p), &opts).unwrap();
        assert_eq!(out.years_integrated, 1.0);
        assert!(!out.converged);
    }
}
