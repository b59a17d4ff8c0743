use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Bounds, Config, ExplorerError};
use crate::boxmodel::Label;
use crate::oracle::Oracle;

pub const DATASET_CSV_HEADER: &str = "d_low0,m_ek,fw_n,label,final_m_n";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledConfig {
    pub config: Config,
    pub label: Label,
    pub final_m_n: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub samples: Vec<LabeledConfig>,
    pub split: Split,
    pub seed: u64,
    pub bounds: Bounds,
}

/// JSON sidecar written next to every dataset CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub split: Split,
    pub seed: u64,
    pub count: usize,
    pub bounds: Bounds,
    /// SHA-256 of the parameter file the oracle ran with.
    pub calibration_hash: String,
}

/// Labels every config with the oracle. Evaluation may run in parallel;
/// the output keeps input order, and on failure the first failing config
/// (in input order) is reported.
pub fn label_dataset<O: Oracle>(
    configs: &[Config],
    oracle: &O,
    split: Split,
    seed: u64,
    bounds: Bounds,
) -> Result<Dataset, ExplorerError> {
    if let Some(c) = configs.iter().find(|c| !bounds.contains(c)) {
        return Err(ExplorerError::InvalidBounds(format!("config {c:?} outside {bounds:?}")));
    }
    let results: Vec<_> = configs.par_iter().map(|c| oracle.evaluate(c)).collect();
    let mut samples = Vec::with_capacity(configs.len());
    for (config, res) in configs.iter().zip(results) {
        let v = res.map_err(|source| ExplorerError::Oracle { config: *config, source })?;
        samples.push(LabeledConfig { config: *config, label: v.label, final_m_n: v.final_m_n });
    }
    Ok(Dataset { samples, split, seed, bounds })
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn configs(&self) -> Vec<Config> {
        self.samples.iter().map(|s| s.config).collect()
    }

    pub fn meta(&self, calibration_hash: &str) -> DatasetMeta {
        DatasetMeta {
            split: self.split,
            seed: self.seed,
            count: self.samples.len(),
            bounds: self.bounds,
            calibration_hash: calibration_hash.to_string(),
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(48 * (self.samples.len() + 1));
        out.push_str(DATASET_CSV_HEADER);
        out.push('\n');
        for s in &self.samples {
            let c = s.config;
            let _ = writeln!(out, "{},{},{},{},{}", c.d_low0, c.m_ek, c.fw_n, s.label.as_str(), s.final_m_n);
        }
        out
    }

    /// Parses the CSV body; `split`, `seed` and `bounds` come from the sidecar.
    pub fn parse_csv(text: &str, meta: &DatasetMeta, origin: &str) -> Result<Self, ExplorerError> {
        let bad = |message: String| ExplorerError::Format { path: origin.to_string(), message };
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == DATASET_CSV_HEADER => {}
            other => return Err(bad(format!("expected header `{DATASET_CSV_HEADER}`, found {other:?}"))),
        }
        let mut samples = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(bad(format!("row {}: expected 5 fields", i + 1)));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("row {}: bad number `{s}`", i + 1)));
            let config = Config { d_low0: num(fields[0])?, m_ek: num(fields[1])?, fw_n: num(fields[2])? };
            let label = Label::parse(fields[3].trim()).ok_or_else(|| bad(format!("row {}: bad label", i + 1)))?;
            let final_m_n = num(fields[4])?;
            if Label::from_overturning(final_m_n) != label {
                return Err(bad(format!("row {}: label disagrees with final_m_n", i + 1)));
            }
            samples.push(LabeledConfig { config, label, final_m_n });
        }
        if samples.len() != meta.count {
            return Err(bad(format!("sidecar says {} rows, found {}", meta.count, samples.len())));
        }
        Ok(Self { samples, split: meta.split, seed: meta.seed, bounds: meta.bounds })
    }

    /// Sidecar path for a dataset CSV.
    pub fn meta_path(csv: &Path) -> std::path::PathBuf {
        csv.with_extension("json")
    }

    pub fn load(csv: &Path) -> Result<Self, ExplorerError> {
        let meta_path = Self::meta_path(csv);
        let meta: DatasetMeta = serde_json::from_str(&std::fs::read_to_string(&meta_path)?).map_err(|e| {
            ExplorerError::Format { path: meta_path.display().to_string(), message: e.to_string() }
        })?;
        Self::parse_csv(&std::fs::read_to_string(csv)?, &meta, &csv.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boxmodel::BoxModelError;
    use crate::oracle::Verdict;

    struct Threshold;

    impl Oracle for Threshold {
        fn evaluate(&self, c: &Config) -> Result<Verdict, BoxModelError> {
            if c.fw_n > 1.5 {
                return Err(BoxModelError::StateBlowUp { step: 3, detail: "synthetic".into() });
            }
            let m_n = 0.7 - c.fw_n + (c.d_low0 - 250.0) * 1e-3;
            Ok(Verdict { label: Label::from_overturning(m_n), final_m_n: m_n, converged: true, years: 1.0 })
        }
    }

    #[test]
    fn empty_input_gives_empty_dataset() {
        let d = label_dataset(&[], &Threshold, Split::Train, 0, Bounds::TABLE1).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn labels_preserve_order_and_round_trip_through_csv() {
        let configs = super::super::sample_uniform(&Bounds { fw_n: (0.05, 1.4), ..Bounds::TABLE1 }, 200, 5).unwrap();
        let d = label_dataset(&configs, &Threshold, Split::Test, 5, Bounds::TABLE1).unwrap();
        assert_eq!(d.configs(), configs);
        let text = d.to_csv_string();
        let back = Dataset::parse_csv(&text, &d.meta("abc"), "mem").unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn oracle_failure_names_the_first_bad_config() {
        let configs = vec![
            Config { d_low0: 200.0, m_ek: 20.0, fw_n: 0.5 },
            Config { d_low0: 210.0, m_ek: 20.0, fw_n: 1.52 },
            Config { d_low0: 220.0, m_ek: 20.0, fw_n: 1.53 },
        ];
        match label_dataset(&configs, &Threshold, Split::Train, 0, Bounds::TABLE1) {
            Err(ExplorerError::Oracle { config, .. }) => assert_eq!(config, configs[1]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_rejects_inconsistent_rows() {
        let meta = DatasetMeta { split: Split::Train, seed: 0, count: 1, bounds: Bounds::TABLE1, calibration_hash: String::new() };
        let text = format!("{DATASET_CSV_HEADER}\n200,20,0.5,on,-1.0\n");
        assert!(Dataset::parse_csv(&text, &meta, "mem").is_err());
        let text = format!("{DATASET_CSV_HEADER}\n200,20,0.5,on,1.0\n200,20,0.5,on,1.0\n");
        assert!(Dataset::parse_csv(&text, &meta, "mem").is_err());
    }
}
