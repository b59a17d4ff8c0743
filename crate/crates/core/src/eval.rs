//! Region occupancy, stratified classification metrics and histogram
//! overlays for generated versus real configurations.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxmodel::Label;
use crate::explorer::{in_reference_band, in_uncertainty_region, Atlas, Bounds, Config};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("input is empty")]
    EmptyInput,
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Occupancy {
    pub count: usize,
    /// Percent inside the atlas's bistable cells.
    pub percent_atlas: f64,
    /// Percent with fw_n inside the reference band.
    pub percent_band: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub dataset: String,
    pub pooled: Occupancy,
    /// One entry per generator when the samples came from several.
    pub per_generator: Vec<Occupancy>,
}

fn occupancy(samples: &[Config], atlas: &Atlas) -> Result<Occupancy, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = samples.len() as f64;
    let atlas_hits = samples.iter().filter(|c| in_uncertainty_region(c, atlas)).count() as f64;
    let band_hits = samples.iter().filter(|c| in_reference_band(c)).count() as f64;
    Ok(Occupancy { count: samples.len(), percent_atlas: 100.0 * atlas_hits / n, percent_band: 100.0 * band_hits / n })
}

pub fn region_occupancy(dataset: &str, samples: &[Config], atlas: &Atlas) -> Result<RegionReport, EvalError> {
    Ok(RegionReport { dataset: dataset.to_string(), pooled: occupancy(samples, atlas)?, per_generator: Vec::new() })
}

/// Pooled occupancy over all groups plus a breakdown per group.
pub fn region_occupancy_by_generator(
    dataset: &str,
    groups: &[Vec<Config>],
    atlas: &Atlas,
) -> Result<RegionReport, EvalError> {
    let pooled: Vec<Config> = groups.iter().flatten().copied().collect();
    let per_generator = groups.iter().map(|g| occupancy(g, atlas)).collect::<Result<_, _>>()?;
    Ok(RegionReport { dataset: dataset.to_string(), pooled: occupancy(&pooled, atlas)?, per_generator })
}

pub const REGION_CSV_HEADER: &str = "dataset,series,count,percent_atlas,percent_band";

pub fn region_reports_csv(reports: &[RegionReport]) -> String {
    let mut out = format!("{REGION_CSV_HEADER}\n");
    for r in reports {
        let mut row = |series: &str, o: &Occupancy| {
            let _ = writeln!(out, "{},{},{},{:.4},{:.4}", r.dataset, series, o.count, o.percent_atlas, o.percent_band);
        };
        row("pooled", &r.pooled);
        for (i, o) in r.per_generator.iter().enumerate() {
            row(&format!("g{}", i + 1), o);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stratum {
    InRegion,
    OutOfRegion,
}

impl Stratum {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stratum::InRegion => "in_region",
            Stratum::OutOfRegion => "out_of_region",
        }
    }
}

/// 2×2 confusion counts with On as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_on: usize,
    pub false_on: usize,
    pub false_off: usize,
    pub true_off: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.true_on + self.false_on + self.false_off + self.true_off
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.true_on, self.true_on + self.false_on)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.true_on, self.true_on + self.false_off)
    }

    /// Harmonic mean of precision and recall; absent when either is
    /// absent or both are zero.
    pub fn f1(&self) -> Option<f64> {
        ratio(2 * self.true_on, 2 * self.true_on + self.false_on + self.false_off)
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClfReport {
    pub stratum: Stratum,
    pub positive_class: Label,
    pub count: usize,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub confusion: Confusion,
}

/// Per-stratum metrics; `in_region[i]` selects the stratum of sample `i`.
pub fn classification_report(
    predictions: &[Label],
    labels: &[Label],
    in_region: &[bool],
) -> Result<Vec<ClfReport>, EvalError> {
    for len in [labels.len(), in_region.len()] {
        if len != predictions.len() {
            return Err(EvalError::LengthMismatch { expected: predictions.len(), got: len });
        }
    }
    let mut counts = [Confusion::default(); 2];
    for ((p, y), inside) in predictions.iter().zip(labels).zip(in_region) {
        let c = &mut counts[usize::from(!inside)];
        match (p, y) {
            (Label::On, Label::On) => c.true_on += 1,
            (Label::On, Label::Off) => c.false_on += 1,
            (Label::Off, Label::On) => c.false_off += 1,
            (Label::Off, Label::Off) => c.true_off += 1,
        }
    }
    Ok([Stratum::InRegion, Stratum::OutOfRegion]
        .into_iter()
        .zip(counts)
        .map(|(stratum, confusion)| ClfReport {
            stratum,
            positive_class: Label::On,
            count: confusion.total(),
            precision: confusion.precision(),
            recall: confusion.recall(),
            f1: confusion.f1(),
            confusion,
        })
        .collect())
}

pub const CLF_CSV_HEADER: &str = "model,stratum,count,true_on,false_on,false_off,true_off,precision,recall,f1";

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.6}"))
}

/// Absent ratios are empty cells. Positive class is On throughout.
pub fn clf_reports_csv(rows: &[(String, Vec<ClfReport>)]) -> String {
    let mut out = format!("{CLF_CSV_HEADER}\n");
    for (model, reports) in rows {
        for r in reports {
            let c = r.confusion;
            let _ = writeln!(
                out,
                "{model},{},{},{},{},{},{},{},{},{}",
                r.stratum.as_str(),
                r.count,
                c.true_on,
                c.false_on,
                c.false_off,
                c.true_off,
                opt(r.precision),
                opt(r.recall),
                opt(r.f1)
            );
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coordinate {
    DLow0,
    MEk,
    FwN,
}

impl Coordinate {
    pub const ALL: [Coordinate; 3] = [Coordinate::DLow0, Coordinate::MEk, Coordinate::FwN];

    pub fn as_str(&self) -> &'static str {
        match self {
            Coordinate::DLow0 => "d_low0",
            Coordinate::MEk => "m_ek",
            Coordinate::FwN => "fw_n",
        }
    }

    pub fn of(&self, c: &Config) -> f64 {
        match self {
            Coordinate::DLow0 => c.d_low0,
            Coordinate::MEk => c.m_ek,
            Coordinate::FwN => c.fw_n,
        }
    }

    fn range(&self, b: &Bounds) -> (f64, f64) {
        match self {
            Coordinate::DLow0 => b.d_low0,
            Coordinate::MEk => b.m_ek,
            Coordinate::FwN => b.fw_n,
        }
    }
}

pub const OVERLAY_BINS: usize = 50;

/// Fixed-bin density estimate (integrates to one over the range).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_centers: Vec<f64>,
    pub density: Vec<f64>,
}

impl Histogram {
    fn over(values: impl Iterator<Item = f64>, lo: f64, hi: f64, bins: usize) -> Self {
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins];
        let mut n = 0usize;
        for v in values {
            let i = if width > 0.0 { ((v - lo) / width).floor() } else { 0.0 };
            counts[(i.max(0.0) as usize).min(bins - 1)] += 1;
            n += 1;
        }
        let norm = if width > 0.0 { n as f64 * width } else { n as f64 };
        Self {
            bin_centers: (0..bins).map(|i| lo + (i as f64 + 0.5) * width).collect(),
            density: counts.iter().map(|&c| c as f64 / norm).collect(),
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("bin_center,density\n");
        for (c, d) in self.bin_centers.iter().zip(&self.density) {
            let _ = writeln!(out, "{c},{d}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub coordinate: Coordinate,
    pub generated: Histogram,
    pub real: Histogram,
}

/// Aligned 50-bin histograms over the coordinate's range in `bounds`.
pub fn distribution_overlay(
    generated: &[Config],
    real: &[Config],
    coordinate: Coordinate,
    bounds: &Bounds,
) -> Result<Overlay, EvalError> {
    if generated.is_empty() || real.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let (lo, hi) = coordinate.range(bounds);
    let hist = |s: &[Config]| Histogram::over(s.iter().map(|c| coordinate.of(c)), lo, hi, OVERLAY_BINS);
    Ok(Overlay { coordinate, generated: hist(generated), real: hist(real) })
}
