//! Sampling of the perturbed-parameter box, oracle-labeled datasets, the
//! bistability atlas and uncertainty-region membership.

mod atlas;
mod dataset;

pub use atlas::{bistability_atlas, linspace, Atlas, AtlasAnomaly, BistabilityCell, Regime, SEPARATRIX_TOLERANCE};
pub use dataset::{label_dataset, Dataset, DatasetMeta, LabeledConfig, Split, DATASET_CSV_HEADER};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxmodel::BoxModelError;

#[derive(Debug, Error)]
pub enum ExplorerError {
    #[error("invalid bounds: {0}")]
    InvalidBounds(String),
    #[error("sample count must be positive")]
    EmptyCount,
    #[error("oracle failed on {config:?}: {source}")]
    Oracle { config: Config, source: BoxModelError },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A point in the perturbed-parameter space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Config {
    /// Initial low-latitude pycnocline depth, m.
    pub d_low0: f64,
    /// Southern Ocean Ekman flux, Sv.
    pub m_ek: f64,
    /// Northern freshwater flux, Sv.
    pub fw_n: f64,
}

impl Config {
    pub fn to_array(&self) -> [f64; 3] {
        [self.d_low0, self.m_ek, self.fw_n]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self { d_low0: a[0], m_ek: a[1], fw_n: a[2] }
    }
}

/// Axis-aligned box of admissible configs (inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub d_low0: (f64, f64),
    pub m_ek: (f64, f64),
    pub fw_n: (f64, f64),
}

impl Bounds {
    /// The perturbation ranges of the uncertainty experiment.
    pub const TABLE1: Bounds = Bounds { d_low0: (100.0, 400.0), m_ek: (15.0, 35.0), fw_n: (0.05, 1.55) };

    pub fn axes(&self) -> [(f64, f64); 3] {
        [self.d_low0, self.m_ek, self.fw_n]
    }

    pub fn contains(&self, c: &Config) -> bool {
        c.to_array().iter().zip(self.axes()).all(|(&x, (lo, hi))| x >= lo && x <= hi)
    }

    pub fn validate(&self) -> Result<(), ExplorerError> {
        for (name, (lo, hi)) in ["d_low0", "m_ek", "fw_n"].iter().zip(self.axes()) {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(ExplorerError::InvalidBounds(format!("{name}: [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// Maps a config to the unit cube.
    pub fn normalize(&self, c: &Config) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (i, (x, (lo, hi))) in c.to_array().into_iter().zip(self.axes()).enumerate() {
            out[i] = if hi > lo { (x - lo) / (hi - lo) } else { 0.0 };
        }
        out
    }

    /// Inverse of [`Bounds::normalize`]; results are clamped into the box.
    pub fn denormalize(&self, u: [f64; 3]) -> Config {
        let mut out = [0.0; 3];
        for (i, (u, (lo, hi))) in u.into_iter().zip(self.axes()).enumerate() {
            out[i] = (lo + u * (hi - lo)).clamp(lo, hi);
        }
        Config::from_array(out)
    }
}

/// `count` i.i.d. uniform draws from `bounds`, deterministic per seed.
pub fn sample_uniform(bounds: &Bounds, count: usize, seed: u64) -> Result<Vec<Config>, ExplorerError> {
    bounds.validate()?;
    if count == 0 {
        return Err(ExplorerError::EmptyCount);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axes = bounds.axes();
    Ok((0..count)
        .map(|_| {
            let mut x = [0.0; 3];
            for (v, (lo, hi)) in x.iter_mut().zip(axes) {
                *v = lo + (hi - lo) * rng.gen::<f64>();
            }
            Config::from_array(x)
        })
        .collect())
}

/// Which notion of "inside the uncertainty region" a report uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Membership {
    /// The cell of the computed atlas is bistable.
    Atlas,
    /// `fw_n` lies in the fixed reference band.
    ReferenceBand,
}

/// Reference freshwater band of the uncertainty region, Sv.
pub const REFERENCE_BAND: (f64, f64) = (0.348, 0.848);

/// Atlas variant: nearest-cell regime is Bistable.
pub fn in_uncertainty_region(config: &Config, atlas: &Atlas) -> bool {
    atlas.regime_at(config.m_ek, config.fw_n) == Regime::Bistable
}

/// Band variant: `0.348 <= fw_n <= 0.848`.
pub fn in_reference_band(config: &Config) -> bool {
    config.fw_n >= REFERENCE_BAND.0 && config.fw_n <= REFERENCE_BAND.1
}

pub fn in_region(config: &Config, atlas: &Atlas, membership: Membership) -> bool {
    match membership {
        Membership::Atlas => in_uncertainty_region(config, atlas),
        Membership::ReferenceBand => in_reference_band(config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_seeded_and_bounded() {
        let a = sample_uniform(&Bounds::TABLE1, 500, 7).unwrap();
        let b = sample_uniform(&Bounds::TABLE1, 500, 7).unwrap();
        let c = sample_uniform(&Bounds::TABLE1, 500, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|x| Bounds::TABLE1.contains(x)));
    }

    #[test]
    fn paper_sized_draws() {
        assert_eq!(sample_uniform(&Bounds::TABLE1, 10_774, 1).unwrap().len(), 10_774);
        assert_eq!(sample_uniform(&Bounds::TABLE1, 2_694, 2).unwrap().len(), 2_694);
    }

    #[test]
    fn degenerate_box_repeats_its_point() {
        let b = Bounds { d_low0: (250.0, 250.0), m_ek: (20.0, 20.0), fw_n: (0.6, 0.6) };
        let xs = sample_uniform(&b, 4, 3).unwrap();
        assert_eq!(xs, vec![Config { d_low0: 250.0, m_ek: 20.0, fw_n: 0.6 }; 4]);
    }

    #[test]
    fn invalid_requests_are_rejected() {
        assert!(matches!(sample_uniform(&Bounds::TABLE1, 0, 1), Err(ExplorerError::EmptyCount)));
        let inverted = Bounds { fw_n: (1.0, 0.5), ..Bounds::TABLE1 };
        assert!(matches!(sample_uniform(&inverted, 3, 1), Err(ExplorerError::InvalidBounds(_))));
    }

    #[test]
    fn normalize_round_trips() {
        let c = Config { d_low0: 130.0, m_ek: 31.0, fw_n: 0.9 };
        let back = Bounds::TABLE1.denormalize(Bounds::TABLE1.normalize(&c));
        for (x, y) in back.to_array().iter().zip(c.to_array()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_band_membership() {
        assert!(!in_reference_band(&Config { d_low0: 200.0, m_ek: 25.0, fw_n: 0.05 }));
        assert!(in_reference_band(&Config { d_low0: 200.0, m_ek: 25.0, fw_n: 0.6 }));
        assert!(in_reference_band(&Config { d_low0: 200.0, m_ek: 25.0, fw_n: 0.848 }));
    }
}
