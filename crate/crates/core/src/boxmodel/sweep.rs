//! Quasi-static freshwater sweeps for locating the two fold points.

use serde::{Deserialize, Serialize};

use super::{integrate_with, BoxModelError, IntegrationOptions, Label, ModelParams, ModelState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub fw_n: f64,
    pub m_n: f64,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub m_ek: f64,
    /// Ascending fw_n, starting from the "on" branch.
    pub up: Vec<SweepPoint>,
    /// Descending fw_n, starting from wherever the up-sweep ended.
    pub down: Vec<SweepPoint>,
    /// First fw_n on the up-sweep labelled Off.
    pub up_transition: Option<f64>,
    /// First fw_n on the down-sweep labelled On.
    pub down_transition: Option<f64>,
}

impl SweepResult {
    pub fn has_hysteresis(&self) -> bool {
        matches!((self.up_transition, self.down_transition), (Some(u), Some(d)) if u > d)
    }
}

/// Steps `fw_n` through `fw_grid` (ascending) and back, letting the model
/// settle for `options.horizon_years` at each value and carrying the state
/// forward between values.
pub fn hysteresis_sweep(
    params: &ModelParams,
    initial: &ModelState,
    fw_grid: &[f64],
    options: &IntegrationOptions,
) -> Result<SweepResult, BoxModelError> {
    if fw_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(BoxModelError::InvalidRequest("fw_n grid must be strictly ascending".into()));
    }
    let mut state = *initial;
    let settle = |fw_n: f64, state: &mut ModelState| -> Result<SweepPoint, BoxModelError> {
        let p = ModelParams { fw_n, ..*params };
        let out = integrate_with(&p, state, options)?;
        *state = out.final_state;
        Ok(SweepPoint { fw_n, m_n: out.final_m_n, label: out.label })
    };

    let up = fw_grid.iter().map(|&fw| settle(fw, &mut state)).collect::<Result<Vec<_>, _>>()?;
    let down = fw_grid.iter().rev().map(|&fw| settle(fw, &mut state)).collect::<Result<Vec<_>, _>>()?;
    let up_transition = up.iter().find(|p| p.label == Label::Off).map(|p| p.fw_n);
    let down_transition = down.iter().find(|p| p.label == Label::On).map(|p| p.fw_n);
    Ok(SweepResult { m_ek: params.m_ek, up, down, up_transition, down_transition })
}
