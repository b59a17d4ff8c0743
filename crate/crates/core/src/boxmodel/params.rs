//! Physical parameterization of the four-box overturning model and its
//! flat `name = value` file format.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BoxModelError;

/// One Sverdrup in m³/s.
pub const SV: f64 = 1.0e6;
/// Seconds in a model year (365 days).
pub const SECONDS_PER_YEAR: f64 = 365.0 * 86_400.0;

/// Version tag written at the top of every parameter file.
pub const PARAMS_FORMAT_VERSION: &str = "boxmodel-params/1";

const BASE_PARAMS_FILE: &str = include_str!("../../params/base.params");

/// Full parameterization of the four-box model.
///
/// Volume fluxes (`m_ek`, `m_s`, `fw_n`, `fw_s`) are stored in Sv; everything
/// else is SI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Ekman upwelling in the Southern Ocean, Sv.
    pub m_ek: f64,
    /// Southern deep-water formation (south/deep exchange), Sv.
    pub m_s: f64,
    /// Northern atmospheric freshwater transport, Sv.
    pub fw_n: f64,
    /// Southern atmospheric freshwater transport, Sv.
    pub fw_s: f64,
    /// Overturning coefficient, m³/s per (kg/m³ · m²).
    pub lambda_hyd: f64,
    /// Diapycnal diffusivity, m²/s.
    pub kappa_v: f64,
    /// Eddy transfer coefficient, m²/s.
    pub a_gm: f64,
    /// South/low lateral mixing velocity, m/s.
    pub k_sl: f64,
    /// North/low lateral mixing velocity, m/s.
    pub k_nl: f64,
    pub area_low: f64,
    pub area_n: f64,
    pub area_s: f64,
    pub depth_n: f64,
    pub depth_s: f64,
    pub depth_total: f64,
    /// Southern Ocean zonal extent, m.
    pub lx_s: f64,
    /// Southern Ocean eddy length scale, m.
    pub ly_s: f64,
    /// Width of the north/low exchange section, m.
    pub lx_n: f64,
    /// Thermal expansion, kg/m³ per °C.
    pub alpha_t: f64,
    /// Haline contraction, kg/m³ per psu.
    pub beta_s: f64,
    pub t_star_n: f64,
    pub t_star_s: f64,
    pub t_star_l: f64,
    /// Surface temperature restoring timescale, s.
    pub tau_restore: f64,
    /// Reference salinity of the virtual salt flux, psu.
    pub s_ref: f64,
    /// Reference density of the linear equation of state, kg/m³.
    pub rho0: f64,
}

macro_rules! param_fields {
    ($mac:ident) => {
        $mac!(
            m_ek, m_s, fw_n, fw_s, lambda_hyd, kappa_v, a_gm, k_sl, k_nl, area_low, area_n,
            area_s, depth_n, depth_s, depth_total, lx_s, ly_s, lx_n, alpha_t, beta_s, t_star_n,
            t_star_s, t_star_l, tau_restore, s_ref, rho0
        )
    };
}

impl ModelParams {
    /// The calibrated base parameter set shipped with the crate.
    pub fn base() -> Self {
        Self::parse(BASE_PARAMS_FILE).expect("bundled base parameter file is valid")
    }

    /// Raw text of the bundled base parameter file.
    pub fn base_file_contents() -> &'static str {
        BASE_PARAMS_FILE
    }

    /// Surface area of all three surface boxes combined.
    pub fn total_area(&self) -> f64 {
        self.area_low + self.area_n + self.area_s
    }

    /// Total ocean volume, held fixed.
    pub fn total_volume(&self) -> f64 {
        self.total_area() * self.depth_total
    }

    pub fn validate(&self) -> Result<(), BoxModelError> {
        macro_rules! check_finite {
            ($($f:ident),*) => {
                $(
                    if !self.$f.is_finite() {
                        return Err(BoxModelError::InvalidParams(format!("{} is not finite", stringify!($f))));
                    }
                )*
            };
        }
        param_fields!(check_finite);

        let positive = [
            ("area_low", self.area_low),
            ("area_n", self.area_n),
            ("area_s", self.area_s),
            ("depth_n", self.depth_n),
            ("depth_s", self.depth_s),
            ("depth_total", self.depth_total),
            ("tau_restore", self.tau_restore),
            ("ly_s", self.ly_s),
            ("alpha_t", self.alpha_t),
            ("beta_s", self.beta_s),
            ("rho0", self.rho0),
        ];
        for (name, value) in positive {
            if value <= 0.0 {
                return Err(BoxModelError::InvalidParams(format!("{name} must be > 0, got {value}")));
            }
        }
        let non_negative = [
            ("m_ek", self.m_ek),
            ("m_s", self.m_s),
            ("lambda_hyd", self.lambda_hyd),
            ("kappa_v", self.kappa_v),
            ("a_gm", self.a_gm),
            ("k_sl", self.k_sl),
            ("k_nl", self.k_nl),
            ("lx_s", self.lx_s),
            ("lx_n", self.lx_n),
        ];
        for (name, value) in non_negative {
            if value < 0.0 {
                return Err(BoxModelError::InvalidParams(format!("{name} must be >= 0, got {value}")));
            }
        }
        if self.depth_total <= self.depth_n.max(self.depth_s) {
            return Err(BoxModelError::InvalidParams(
                "depth_total must exceed both high-latitude box depths".into(),
            ));
        }
        Ok(())
    }

    /// Parse the flat key-value format. Blank lines and `#` comments are
    /// ignored; every field must appear exactly once.
    pub fn parse(text: &str) -> Result<Self, BoxModelError> {
        let mut values = std::collections::BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                BoxModelError::ParamFile(format!("line {}: expected `name = value`", lineno + 1))
            })?;
            let key = key.trim();
            let value: f64 = value.trim().parse().map_err(|_| {
                BoxModelError::ParamFile(format!("line {}: `{}` is not a number", lineno + 1, value.trim()))
            })?;
            if values.insert(key.to_string(), value).is_some() {
                return Err(BoxModelError::ParamFile(format!("duplicate key `{key}`")));
            }
        }

        macro_rules! build {
            ($($f:ident),*) => {
                ModelParams {
                    $(
                        $f: values.remove(stringify!($f)).ok_or_else(|| {
                            BoxModelError::ParamFile(format!("missing key `{}`", stringify!($f)))
                        })?,
                    )*
                }
            };
        }
        let params = param_fields!(build);
        if let Some(extra) = values.keys().next() {
            return Err(BoxModelError::ParamFile(format!("unknown key `{extra}`")));
        }
        params.validate()?;
        Ok(params)
    }

    /// Serialize to the flat key-value format. Values use Rust's shortest
    /// round-trip float formatting, so `parse(to_file_string(p)) == p`.
    pub fn to_file_string(&self) -> String {
        let mut out = format!("# {PARAMS_FORMAT_VERSION}\n");
        macro_rules! emit {
            ($($f:ident),*) => {
                $( let _ = writeln!(out, "{} = {:?}", stringify!($f), self.$f); )*
            };
        }
        param_fields!(emit);
        out
    }

    /// Mutable access to a field by its file key.
    pub fn field_mut(&mut self, name: &str) -> Option<&mut f64> {
        macro_rules! lookup {
            ($($f:ident),*) => {
                match name {
                    $( stringify!($f) => Some(&mut self.$f), )*
                    _ => None,
                }
            };
        }
        param_fields!(lookup)
    }

    pub fn load(path: &Path) -> Result<Self, BoxModelError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BoxModelError::ParamFile(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base_file_round_trips() {
        let base = ModelParams::base();
        let again = ModelParams::parse(&base.to_file_string()).unwrap();
        assert_eq!(base, again);
    }

    #[test]
    fn parse_rejects_missing_and_unknown_keys() {
        let text = ModelParams::base().to_file_string();
        let missing: String = text.lines().filter(|l| !l.starts_with("kappa_v")).map(|l| format!("{l}\n")).collect();
        assert!(matches!(ModelParams::parse(&missing), Err(BoxModelError::ParamFile(m)) if m.contains("kappa_v")));

        let extra = format!("{text}bogus = 1\n");
        assert!(matches!(ModelParams::parse(&extra), Err(BoxModelError::ParamFile(m)) if m.contains("bogus")));
    }

    #[test]
    fn validate_rejects_shallow_total_depth() {
        let mut p = ModelParams::base();
        p.depth_total = p.depth_n;
        assert!(p.validate().is_err());
        let mut p = ModelParams::base();
        p.alpha_t = 0.0;
        assert!(p.validate().is_err());
    }
}
