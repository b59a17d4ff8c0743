//! The surrogate model viewed as a labeling oracle.

use std::collections::HashMap;
use std::sync::Mutex;

use crate::boxmodel::{run_config_with, BoxModelError, IntegrationOptions, Label, ModelParams, ModelState};
use crate::explorer::Config;

/// Oracle verdict for one configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub label: Label,
    pub final_m_n: f64,
    pub converged: bool,
    pub years: f64,
}

/// Anything that can label a configuration as On/Off. Implementations must
/// be pure: the verdict depends only on the config.
pub trait Oracle: Sync {
    fn evaluate(&self, config: &Config) -> Result<Verdict, BoxModelError>;
}

impl<O: Oracle + ?Sized> Oracle for &O {
    fn evaluate(&self, config: &Config) -> Result<Verdict, BoxModelError> {
        (**self).evaluate(config)
    }
}

/// Runs the four-box model for each config.
#[derive(Debug, Clone, PartialEq)]
pub struct SurrogateOracle {
    pub base: ModelParams,
    pub template: ModelState,
    pub options: IntegrationOptions,
}

impl SurrogateOracle {
    pub fn new(base: ModelParams) -> Self {
        Self { template: ModelState::template(&base), base, options: IntegrationOptions::default() }
    }
}

impl Oracle for SurrogateOracle {
    fn evaluate(&self, config: &Config) -> Result<Verdict, BoxModelError> {
        let out = run_config_with(config, &self.base, &self.template, &self.options)?;
        Ok(Verdict { label: out.label, final_m_n: out.final_m_n, converged: out.converged, years: out.years_integrated })
    }
}

/// Memoizing wrapper. Configs are snapped to a `quantum` grid before the
/// inner oracle runs, so the cached verdict is a function of the key alone
/// and evaluation order cannot change any result.
pub struct CachedOracle<O> {
    inner: O,
    quantum: f64,
    cache: Mutex<HashMap<[i64; 3], Verdict>>,
    hits: std::sync::atomic::AtomicU64,
}

pub const DEFAULT_CACHE_QUANTUM: f64 = 1e-6;

impl<O: Oracle> CachedOracle<O> {
    pub fn new(inner: O) -> Self {
        Self::with_quantum(inner, DEFAULT_CACHE_QUANTUM)
    }

    pub fn with_quantum(inner: O, quantum: f64) -> Self {
        assert!(quantum > 0.0, "cache quantum must be positive");
        Self { inner, quantum, cache: Mutex::new(HashMap::new()), hits: Default::default() }
    }

    fn key(&self, c: &Config) -> [i64; 3] {
        [c.d_low0, c.m_ek, c.fw_n].map(|x| (x / self.quantum).round() as i64)
    }

    pub fn len(&self) -> usize {
        self.cache.lock().expect("oracle cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(std::sync::atomic::Ordering::Relaxed)
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: Oracle> Oracle for CachedOracle<O> {
    fn evaluate(&self, config: &Config) -> Result<Verdict, BoxModelError> {
        let key = self.key(config);
        if let Some(v) = self.cache.lock().expect("oracle cache poisoned").get(&key) {
            self.hits.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            return Ok(*v);
        }
        let [d, m, f] = key.map(|k| k as f64 * self.quantum);
        // Snapping can push a boundary value a hair outside the box.
        let b = crate::explorer::Bounds::TABLE1;
        let snapped = Config {
            d_low0: d.clamp(b.d_low0.0, b.d_low0.1),
            m_ek: m.clamp(b.m_ek.0, b.m_ek.1),
            fw_n: f.clamp(b.fw_n.0, b.fw_n.1),
        };
        let verdict = self.inner.evaluate(&snapped)?;
        self.cache.lock().expect("oracle cache poisoned").insert(key, verdict);
        Ok(verdict)
    }
}
