//! Ground-truth map of where the final state depends on the initial
//! pycnocline depth.
//!
//! Each `(m_ek, fw_n)` cell is probed from the shallowest and deepest
//! admissible `d_low0`. Equal labels mean the outcome is fixed by the
//! forcing; different labels mean the cell is bistable, and the separatrix
//! depth between the two basins is then bracketed by bisection.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Bounds, Config, ExplorerError};
use crate::boxmodel::Label;
use crate::oracle::Oracle;

/// Bisection stops once the bracket is this narrow, m.
pub const SEPARATRIX_TOLERANCE: f64 = 1.0;

/// Interior depths re-checked after bisection.
const PROBE_DEPTHS: [f64; 3] = [175.0, 250.0, 325.0];

pub const ATLAS_CSV_HEADER: &str = "m_ek,fw_n,regime,d_low_sep";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Regime {
    AlwaysOn,
    AlwaysOff,
    Bistable,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::AlwaysOn => "always_on",
            Regime::AlwaysOff => "always_off",
            Regime::Bistable => "bistable",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "always_on" => Some(Regime::AlwaysOn),
            "always_off" => Some(Regime::AlwaysOff),
            "bistable" => Some(Regime::Bistable),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BistabilityCell {
    pub m_ek: f64,
    pub fw_n: f64,
    pub regime: Regime,
    /// Separatrix depth; present only for cleanly bistable cells.
    pub d_low_sep: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum AtlasAnomaly {
    /// The label changes more than once along `d_low0`.
    NonMonotoneLabel { m_ek: f64, fw_n: f64, probes: Vec<(f64, Label)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atlas {
    pub m_ek_grid: Vec<f64>,
    pub fw_n_grid: Vec<f64>,
    /// Row-major: all `fw_n` values for the first `m_ek`, then the next.
    pub cells: Vec<BistabilityCell>,
    pub anomalies: Vec<AtlasAnomaly>,
}

/// `n` evenly spaced values from `lo` to `hi` inclusive.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

fn nearest_index(grid: &[f64], x: f64) -> usize {
    let i = grid.partition_point(|&g| g < x);
    if i == 0 {
        0
    } else if i == grid.len() {
        grid.len() - 1
    } else if (x - grid[i - 1]) <= (grid[i] - x) {
        i - 1
    } else {
        i
    }
}

struct CellResult {
    cell: BistabilityCell,
    anomaly: Option<AtlasAnomaly>,
}

fn probe_cell<O: Oracle>(oracle: &O, m_ek: f64, fw_n: f64) -> Result<CellResult, ExplorerError> {
    let (d_lo, d_hi) = Bounds::TABLE1.d_low0;
    let label = |d_low0: f64| {
        let config = Config { d_low0, m_ek, fw_n };
        oracle.evaluate(&config).map(|v| v.label).map_err(|source| ExplorerError::Oracle { config, source })
    };
    let shallow = label(d_lo)?;
    let deep = label(d_hi)?;
    let plain = |regime| CellResult { cell: BistabilityCell { m_ek, fw_n, regime, d_low_sep: None }, anomaly: None };
    if shallow == deep {
        return Ok(plain(if shallow == Label::On { Regime::AlwaysOn } else { Regime::AlwaysOff }));
    }

    let (mut lo, mut hi) = (d_lo, d_hi);
    while hi - lo > SEPARATRIX_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        if label(mid)? == shallow {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let sep = 0.5 * (lo + hi);

    let mut probes = vec![(d_lo, shallow)];
    let mut consistent = true;
    for &d in PROBE_DEPTHS.iter().filter(|&&d| (d - sep).abs() > SEPARATRIX_TOLERANCE) {
        let l = label(d)?;
        let expected = if d < sep { shallow } else { deep };
        consistent &= l == expected;
        probes.push((d, l));
    }
    probes.push((d_hi, deep));

    if consistent {
        Ok(CellResult {
            cell: BistabilityCell { m_ek, fw_n, regime: Regime::Bistable, d_low_sep: Some(sep) },
            anomaly: None,
        })
    } else {
        Ok(CellResult {
            cell: BistabilityCell { m_ek, fw_n, regime: Regime::Bistable, d_low_sep: None },
            anomaly: Some(AtlasAnomaly::NonMonotoneLabel { m_ek, fw_n, probes }),
        })
    }
}

/// Builds the atlas over the outer product of the two grids (each must be
/// strictly ascending and inside the search bounds).
pub fn bistability_atlas<O: Oracle>(m_ek_grid: &[f64], fw_n_grid: &[f64], oracle: &O) -> Result<Atlas, ExplorerError> {
    let b = Bounds::TABLE1;
    for (name, grid, (lo, hi)) in [("m_ek", m_ek_grid, b.m_ek), ("fw_n", fw_n_grid, b.fw_n)] {
        if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ExplorerError::InvalidBounds(format!("{name} grid must be non-empty and ascending")));
        }
        if grid.iter().any(|&x| x < lo || x > hi) {
            return Err(ExplorerError::InvalidBounds(format!("{name} grid leaves [{lo}, {hi}]")));
        }
    }
    let jobs: Vec<(f64, f64)> =
        m_ek_grid.iter().flat_map(|&m| fw_n_grid.iter().map(move |&f| (m, f))).collect();
    let results: Vec<_> = jobs.par_iter().map(|&(m, f)| probe_cell(oracle, m, f)).collect();
    let mut cells = Vec::with_capacity(jobs.len());
    let mut anomalies = Vec::new();
    for r in results {
        let r = r?;
        cells.push(r.cell);
        anomalies.extend(r.anomaly);
    }
    Ok(Atlas { m_ek_grid: m_ek_grid.to_vec(), fw_n_grid: fw_n_grid.to_vec(), cells, anomalies })
}

impl Atlas {
    /// 41 × 151 grid: 0.5 Sv in `m_ek`, 0.01 Sv in `fw_n`.
    pub fn default_grids() -> (Vec<f64>, Vec<f64>) {
        let b = Bounds::TABLE1;
        (linspace(b.m_ek.0, b.m_ek.1, 41), linspace(b.fw_n.0, b.fw_n.1, 151))
    }

    pub fn cell(&self, i_mek: usize, j_fw: usize) -> &BistabilityCell {
        &self.cells[i_mek * self.fw_n_grid.len() + j_fw]
    }

    pub fn row(&self, i_mek: usize) -> &[BistabilityCell] {
        let n = self.fw_n_grid.len();
        &self.cells[i_mek * n..(i_mek + 1) * n]
    }

    /// Regime of the nearest grid cell.
    pub fn regime_at(&self, m_ek: f64, fw_n: f64) -> Regime {
        let i = nearest_index(&self.m_ek_grid, m_ek);
        let j = nearest_index(&self.fw_n_grid, fw_n);
        self.cell(i, j).regime
    }

    /// Rows whose regimes along increasing `fw_n` are not of the form
    /// AlwaysOn* Bistable* AlwaysOff*.
    pub fn misordered_rows(&self) -> Vec<f64> {
        let rank = |r: Regime| match r {
            Regime::AlwaysOn => 0,
            Regime::Bistable => 1,
            Regime::AlwaysOff => 2,
        };
        (0..self.m_ek_grid.len())
            .filter(|&i| self.row(i).windows(2).any(|w| rank(w[1].regime) < rank(w[0].regime)))
            .map(|i| self.m_ek_grid[i])
            .collect()
    }

    pub fn bistable_cell_fraction(&self) -> f64 {
        self.cells.iter().filter(|c| c.regime == Regime::Bistable).count() as f64 / self.cells.len() as f64
    }

    /// `fw_n` values that are bistable for at least one `m_ek`.
    pub fn bistable_fw_values(&self) -> Vec<f64> {
        (0..self.fw_n_grid.len())
            .filter(|&j| (0..self.m_ek_grid.len()).any(|i| self.cell(i, j).regime == Regime::Bistable))
            .map(|j| self.fw_n_grid[j])
            .collect()
    }

    /// Share of the `fw_n` grid that is bistable for some `m_ek`.
    pub fn aggregate_band_fraction(&self) -> f64 {
        self.bistable_fw_values().len() as f64 / self.fw_n_grid.len() as f64
    }

    /// Lowest and highest bistable `fw_n` over all rows.
    pub fn aggregate_band(&self) -> Option<(f64, f64)> {
        let v = self.bistable_fw_values();
        Some((*v.first()?, *v.last()?))
    }

    /// Per-row bistable edges: where the on branch stops being the only
    /// outcome and where the off branch takes over.
    pub fn row_edges(&self) -> Vec<(f64, Option<(f64, f64)>)> {
        (0..self.m_ek_grid.len())
            .map(|i| {
                let bi: Vec<f64> = self.row(i).iter().filter(|c| c.regime == Regime::Bistable).map(|c| c.fw_n).collect();
                (self.m_ek_grid[i], bi.first().zip(bi.last()).map(|(a, b)| (*a, *b)))
            })
            .collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(ATLAS_CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            let sep = c.d_low_sep.map(|d| d.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{}", c.m_ek, c.fw_n, c.regime.as_str(), sep);
        }
        out
    }

    /// Rebuilds an atlas from its CSV. Grids are recovered from the rows;
    /// anomalies are not stored in the CSV.
    pub fn parse_csv(text: &str, origin: &str) -> Result<Self, ExplorerError> {
        let bad = |message: String| ExplorerError::Format { path: origin.to_string(), message };
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(ATLAS_CSV_HEADER) {
            return Err(bad(format!("expected header `{ATLAS_CSV_HEADER}`")));
        }
        let mut cells = Vec::new();
        for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad(format!("row {}: expected 4 fields", i + 1)));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(format!("row {}: bad number `{s}`", i + 1)));
            let regime = Regime::parse(f[2].trim()).ok_or_else(|| bad(format!("row {}: bad regime", i + 1)))?;
            let d_low_sep = if f[3].trim().is_empty() { None } else { Some(num(f[3])?) };
            cells.push(BistabilityCell { m_ek: num(f[0])?, fw_n: num(f[1])?, regime, d_low_sep });
        }
        let mut m_ek_grid: Vec<f64> = Vec::new();
        for c in &cells {
            if m_ek_grid.last() != Some(&c.m_ek) {
                m_ek_grid.push(c.m_ek);
            }
        }
        if m_ek_grid.is_empty() || cells.len() % m_ek_grid.len() != 0 {
            return Err(bad("rows do not form a rectangular grid".into()));
        }
        let n_fw = cells.len() / m_ek_grid.len();
        let fw_n_grid: Vec<f64> = cells[..n_fw].iter().map(|c| c.fw_n).collect();
        for (k, c) in cells.iter().enumerate() {
            if c.m_ek != m_ek_grid[k / n_fw] || c.fw_n != fw_n_grid[k % n_fw] {
                return Err(bad(format!("row {}: breaks the grid layout", k + 1)));
            }
        }
        Ok(Self { m_ek_grid, fw_n_grid, cells, anomalies: Vec::new() })
    }
}
