//! File-level pipeline stages: calibrate, dataset, atlas, train, eval and
//! plot-data export. Every stage writes into one run directory and leaves
//! a manifest with content hashes of what it read and wrote.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boxmodel::{BoxModelError, IntegrationOptions, ModelParams, ModelState};
use crate::calibrate::{calibrate, CalibrationError, CalibrationReport, SearchOptions};
use crate::eval::{
    classification_report, clf_reports_csv, distribution_overlay, region_occupancy, region_occupancy_by_generator,
    region_reports_csv, ClfReport, Coordinate, EvalError, RegionReport,
};
use crate::explorer::{
    bistability_atlas, in_uncertainty_region, label_dataset, linspace, sample_uniform, Atlas, Bounds, Dataset,
    ExplorerError, Split,
};
use crate::manifest::{sha256_hex, ManifestError, RunManifest};
use crate::oracle::{CachedOracle, Oracle, SurrogateOracle};
use crate::tipgan::{self, GanError, GanSpec, TipGan};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Model(#[from] BoxModelError),
    #[error(transparent)]
    Explorer(#[from] ExplorerError),
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Stable machine-readable error kind.
    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::Config(_) => "Config",
            PipelineError::Calibration(CalibrationError::CalibrationFailed(_)) => "CalibrationFailed",
            PipelineError::Calibration(_) => "Calibration",
            PipelineError::Model(BoxModelError::OutOfBounds { .. }) => "OutOfBounds",
            PipelineError::Model(_) => "Model",
            PipelineError::Explorer(_) => "Explorer",
            PipelineError::Gan(GanError::NonFiniteLoss { .. }) => "NonFiniteLoss",
            PipelineError::Gan(_) => "Gan",
            PipelineError::Eval(EvalError::EmptyInput) => "EmptyInput",
            PipelineError::Eval(_) => "Eval",
            PipelineError::Manifest(ManifestError::MissingArtifact(_)) => "MissingArtifact",
            PipelineError::Manifest(ManifestError::HashMismatch { .. }) => "HashMismatch",
            PipelineError::Manifest(_) => "Manifest",
            PipelineError::Io(_) => "Io",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub out_dir: PathBuf,
    /// Parameter file for the surrogate. When absent, the run directory's
    /// `calibrated.params` is used if present, else the bundled base set.
    pub params_file: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { out_dir: PathBuf::from("run"), params_file: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrateSection {
    pub iterations: usize,
    pub seed: u64,
    pub report_rows: usize,
}

impl Default for CalibrateSection {
    fn default() -> Self {
        let s = SearchOptions::default();
        Self { iterations: s.iterations, seed: s.seed, report_rows: s.report_rows }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub train_count: usize,
    pub test_count: usize,
    pub train_seed: u64,
    pub test_seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { train_count: 10_774, test_count: 2_694, train_seed: 1, test_seed: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AtlasSection {
    pub m_ek_points: usize,
    pub fw_n_points: usize,
}

impl Default for AtlasSection {
    fn default() -> Self {
        Self { m_ek_points: 41, fw_n_points: 151 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub generators: Vec<usize>,
    pub seeds: Vec<u64>,
    pub batch_size: usize,
    pub latent_dim: usize,
    pub steps: usize,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub generator_lr: f64,
    pub discriminator_lr: f64,
    pub mad_weight: f64,
    pub clf_weight: f64,
    pub checkpoint_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let g = GanSpec::default();
        Self {
            generators: vec![1, 2, 3],
            seeds: vec![0, 1, 2],
            batch_size: g.batch_size,
            latent_dim: g.latent_dim,
            steps: g.steps,
            generator_hidden: g.generator_hidden,
            discriminator_hidden: g.discriminator_hidden,
            generator_lr: g.generator_lr,
            discriminator_lr: g.discriminator_lr,
            mad_weight: g.mad_weight,
            clf_weight: g.clf_weight,
            checkpoint_every: g.checkpoint_every,
        }
    }
}

impl TrainSection {
    pub fn spec(&self, n_generators: usize, seed: u64) -> GanSpec {
        GanSpec {
            n_generators,
            batch_size: self.batch_size,
            latent_dim: self.latent_dim,
            steps: self.steps,
            seed,
            generator_hidden: self.generator_hidden.clone(),
            discriminator_hidden: self.discriminator_hidden.clone(),
            generator_lr: self.generator_lr,
            discriminator_lr: self.discriminator_lr,
            mad_weight: self.mad_weight,
            clf_weight: self.clf_weight,
            checkpoint_every: self.checkpoint_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Generated samples per model, split evenly over its generators.
    pub samples: usize,
    pub sample_seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { samples: 2_694, sample_seed: 100 }
    }
}

/// One run configuration, one section per stage.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub run: RunSection,
    pub calibrate: CalibrateSection,
    pub dataset: DatasetSection,
    pub atlas: AtlasSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Where a stage runs and which config produced it.
pub struct Context {
    pub config: PipelineConfig,
    pub config_path: Option<PathBuf>,
    pub params: ModelParams,
    pub params_sha256: String,
}

impl Context {
    pub fn new(config: PipelineConfig, config_path: Option<PathBuf>) -> Result<Self, PipelineError> {
        let calibrated = config.run.out_dir.join(CALIBRATED_PARAMS);
        let text = match &config.run.params_file {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| PipelineError::Config(format!("params file {}: {e}", p.display())))?,
            None if calibrated.exists() => {
                RunManifest::load(&config.run.out_dir, "calibrate")?.verify_output(&config.run.out_dir, CALIBRATED_PARAMS)?;
                std::fs::read_to_string(&calibrated)?
            }
            None => ModelParams::base_file_contents().to_string(),
        };
        let params = ModelParams::parse(&text)?;
        Ok(Self { config, config_path, params, params_sha256: sha256_hex(text.as_bytes()) })
    }

    pub fn out_dir(&self) -> &Path {
        &self.config.run.out_dir
    }

    fn manifest(&self, subcommand: &str) -> RunManifest {
        let mut m = RunManifest::new(subcommand, &self.params_sha256);
        if let Some(p) = &self.config_path {
            m.config_path = Some(p.display().to_string());
            m.config_sha256 = std::fs::read(p).ok().map(|b| sha256_hex(&b));
        }
        m
    }

    fn oracle(&self) -> SurrogateOracle {
        SurrogateOracle::new(self.params)
    }

    fn write(&self, rel: &str, contents: &str, manifest: &mut RunManifest) -> Result<(), PipelineError> {
        let path = self.out_dir().join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, contents)?;
        manifest.add_output(self.out_dir(), rel)?;
        Ok(())
    }

    /// Checks an upstream artifact against its stage manifest and records it.
    fn read_input(&self, stage: &str, rel: &str, manifest: &mut RunManifest) -> Result<String, PipelineError> {
        let upstream = RunManifest::load(self.out_dir(), stage)?;
        let record = upstream.verify_output(self.out_dir(), rel)?;
        manifest.inputs.push(record);
        Ok(std::fs::read_to_string(self.out_dir().join(rel))?)
    }

    fn finish(&self, manifest: RunManifest) -> Result<RunManifest, PipelineError> {
        manifest.save(self.out_dir())?;
        Ok(manifest)
    }
}

pub const CALIBRATED_PARAMS: &str = "calibrated.params";
pub const TRAIN_CSV: &str = "train.csv";
pub const TEST_CSV: &str = "test.csv";
pub const ATLAS_CSV: &str = "atlas.csv";

pub fn model_id(n_generators: usize, seed: u64) -> String {
    format!("gan-n{n_generators}-s{seed}")
}

pub fn stage_calibrate(ctx: &Context) -> Result<(RunManifest, CalibrationReport), PipelineError> {
    std::fs::create_dir_all(ctx.out_dir())?;
    let mut m = ctx.manifest("calibrate");
    let c = &ctx.config.calibrate;
    m.seeds = vec![c.seed];
    let search = SearchOptions { iterations: c.iterations, seed: c.seed, report_rows: c.report_rows, ..Default::default() };
    let options = IntegrationOptions::default();
    let start = match &ctx.config.run.params_file {
        Some(p) => ModelParams::load(p)?,
        None => ModelParams::base(),
    };
    let (params, report) = calibrate(&start, &ModelState::template(&start), &options, &search)?;
    ctx.write(CALIBRATED_PARAMS, &params.to_file_string(), &mut m)?;
    ctx.write("calibration.json", &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"), &mut m)?;
    ctx.write("calibration.txt", &report.to_text(), &mut m)?;
    Ok((ctx.finish(m)?, report))
}

fn write_dataset(ctx: &Context, rel: &str, d: &Dataset, m: &mut RunManifest) -> Result<(), PipelineError> {
    ctx.write(rel, &d.to_csv_string(), m)?;
    let meta = serde_json::to_string_pretty(&d.meta(&ctx.params_sha256)).expect("meta serializes") + "\n";
    let meta_rel = Dataset::meta_path(Path::new(rel)).display().to_string();
    ctx.write(&meta_rel, &meta, m)
}

pub fn stage_dataset(ctx: &Context) -> Result<RunManifest, PipelineError> {
    std::fs::create_dir_all(ctx.out_dir())?;
    let mut m = ctx.manifest("dataset");
    let c = &ctx.config.dataset;
    m.seeds = vec![c.train_seed, c.test_seed];
    let oracle = ctx.oracle();
    let b = Bounds::TABLE1;
    for (rel, count, seed, split) in
        [(TRAIN_CSV, c.train_count, c.train_seed, Split::Train), (TEST_CSV, c.test_count, c.test_seed, Split::Test)]
    {
        let configs = sample_uniform(&b, count, seed)?;
        let d = label_dataset(&configs, &oracle, split, seed, b)?;
        write_dataset(ctx, rel, &d, &mut m)?;
    }
    ctx.finish(m)
}

pub fn stage_atlas(ctx: &Context) -> Result<RunManifest, PipelineError> {
    std::fs::create_dir_all(ctx.out_dir())?;
    let mut m = ctx.manifest("atlas");
    let c = &ctx.config.atlas;
    let b = Bounds::TABLE1;
    let atlas = bistability_atlas(
        &linspace(b.m_ek.0, b.m_ek.1, c.m_ek_points),
        &linspace(b.fw_n.0, b.fw_n.1, c.fw_n_points),
        &ctx.oracle(),
    )?;
    ctx.write(ATLAS_CSV, &atlas.to_csv_string(), &mut m)?;
    let summary = serde_json::json!({
        "aggregate_band": atlas.aggregate_band(),
        "aggregate_band_percent": 100.0 * atlas.aggregate_band_fraction(),
        "bistable_cell_percent": 100.0 * atlas.bistable_cell_fraction(),
        "misordered_rows": atlas.misordered_rows(),
        "row_edges": atlas.row_edges(),
        "anomalies": atlas.anomalies,
    });
    ctx.write("atlas-summary.json", &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"), &mut m)?;
    ctx.finish(m)
}

fn load_dataset(ctx: &Context, rel: &str, m: &mut RunManifest) -> Result<Dataset, PipelineError> {
    let meta_rel = Dataset::meta_path(Path::new(rel)).display().to_string();
    let meta_text = ctx.read_input("dataset", &meta_rel, m)?;
    let meta = serde_json::from_str(&meta_text)
        .map_err(|e| ExplorerError::Format { path: meta_rel.clone(), message: e.to_string() })?;
    let text = ctx.read_input("dataset", rel, m)?;
    Ok(Dataset::parse_csv(&text, &meta, rel)?)
}

fn load_atlas(ctx: &Context, m: &mut RunManifest) -> Result<Atlas, PipelineError> {
    Ok(Atlas::parse_csv(&ctx.read_input("atlas", ATLAS_CSV, m)?, ATLAS_CSV)?)
}

/// Trains one model per (generators, seed) pair from the config.
pub fn stage_train(ctx: &Context) -> Result<Vec<RunManifest>, PipelineError> {
    let t = &ctx.config.train;
    if t.generators.is_empty() || t.seeds.is_empty() {
        return Err(PipelineError::Config("train.generators and train.seeds must be non-empty".into()));
    }
    let mut out = Vec::new();
    for &n in &t.generators {
        for &seed in &t.seeds {
            out.push(train_one(ctx, n, seed)?);
        }
    }
    Ok(out)
}

fn train_one(ctx: &Context, n: usize, seed: u64) -> Result<RunManifest, PipelineError> {
    let id = model_id(n, seed);
    let mut m = ctx.manifest(&format!("train-{id}"));
    m.seeds = vec![seed];
    let train = load_dataset(ctx, TRAIN_CSV, &mut m)?;
    let atlas = load_atlas(ctx, &mut m)?;
    let spec = ctx.config.train.spec(n, seed);
    let oracle = CachedOracle::new(ctx.oracle());
    let region = |c: &crate::explorer::Config| in_uncertainty_region(c, &atlas);
    let ckpt_rel = format!("{id}.json");
    let ckpt_path = ctx.out_dir().join(&ckpt_rel);
    let mut save = |model: &TipGan| model.save(&ckpt_path);
    let trained = match tipgan::train(&spec, Bounds::TABLE1, &train, &oracle, &region, &mut save) {
        Ok(t) => t,
        Err(GanError::NonFiniteLoss { step, last_checkpoint }) => {
            if let Some(last) = &last_checkpoint {
                last.save(&ckpt_path)?;
            }
            return Err(GanError::NonFiniteLoss { step, last_checkpoint }.into());
        }
        Err(e) => return Err(e.into()),
    };
    ctx.write(&ckpt_rel, &trained.model.to_json(), &mut m)?;
    ctx.write(&format!("{id}-stats.csv"), &trained.stats.to_csv_string(n), &mut m)?;
    if !trained.stats.failures.is_empty() {
        let text = serde_json::to_string_pretty(&trained.stats.failures).expect("failures serialize") + "\n";
        ctx.write(&format!("{id}-oracle-failures.json"), &text, &mut m)?;
    }
    ctx.finish(m)
}

/// Per-generator sample counts that add up to `total`.
pub fn sample_split(total: usize, generators: usize) -> Vec<usize> {
    (0..generators).map(|i| total / generators + usize::from(i < total % generators)).collect()
}

/// Generated samples of one model, grouped by generator.
pub fn model_samples(model: &TipGan, total: usize, base_seed: u64) -> Vec<Vec<crate::explorer::Config>> {
    let n = model.spec.n_generators;
    sample_split(total, n)
        .into_iter()
        .enumerate()
        .map(|(i, count)| model.generate(i, count, base_seed.wrapping_add(1000 * model.spec.seed + i as u64)))
        .collect()
}

pub const SAMPLES_CSV_HEADER: &str = "d_low0,m_ek,fw_n,label,final_m_n,origin";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEval {
    pub model: String,
    pub n_generators: usize,
    pub seed: u64,
    pub region: RegionReport,
    pub classification: Vec<ClfReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub train: RegionReport,
    pub test: RegionReport,
    pub models: Vec<ModelEval>,
    /// Median pooled atlas occupancy (percent) per generator count.
    pub median_occupancy: Vec<(usize, f64)>,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn stage_eval(ctx: &Context) -> Result<(RunManifest, EvalSummary), PipelineError> {
    let mut m = ctx.manifest("eval");
    let train = load_dataset(ctx, TRAIN_CSV, &mut m)?;
    let test = load_dataset(ctx, TEST_CSV, &mut m)?;
    let atlas = load_atlas(ctx, &mut m)?;
    let oracle = CachedOracle::new(ctx.oracle());
    let t = &ctx.config.train;
    let e = &ctx.config.eval;
    m.seeds = t.seeds.clone();
    let mut models = Vec::new();
    for &n in &t.generators {
        for &seed in &t.seeds {
            let id = model_id(n, seed);
            let model = TipGan::from_json(&ctx.read_input(&format!("train-{id}"), &format!("{id}.json"), &mut m)?)?;
            let groups = model_samples(&model, e.samples, e.sample_seed);
            let mut csv = format!("{SAMPLES_CSV_HEADER}\n");
            for (i, g) in groups.iter().enumerate() {
                for c in g {
                    let v = oracle.evaluate(c)?;
                    let _ = writeln!(csv, "{},{},{},{},{},g{}", c.d_low0, c.m_ek, c.fw_n, v.label.as_str(), v.final_m_n, i + 1);
                }
            }
            ctx.write(&format!("samples-n{n}-s{seed}.csv"), &csv, &mut m)?;
            let region = region_occupancy_by_generator(&id, &groups, &atlas)?;
            let preds: Vec<_> = test
                .samples
                .iter()
                .map(|s| model.predict_shutoff(&s.config).map(|p| crate::boxmodel::Label::from_overturning(p - 0.5)))
                .collect::<Result<_, _>>()?;
            let labels: Vec<_> = test.samples.iter().map(|s| s.label).collect();
            let strata: Vec<bool> = test.samples.iter().map(|s| in_uncertainty_region(&s.config, &atlas)).collect();
            let classification = classification_report(&preds, &labels, &strata)?;
            models.push(ModelEval { model: id, n_generators: n, seed, region, classification });
        }
    }
    let mut median_occupancy = Vec::new();
    for &n in &t.generators {
        let mut v: Vec<f64> =
            models.iter().filter(|x| x.n_generators == n).map(|x| x.region.pooled.percent_atlas).collect();
        median_occupancy.push((n, median(&mut v)));
    }
    let summary = EvalSummary {
        train: region_occupancy("train", &train.configs(), &atlas)?,
        test: region_occupancy("test", &test.configs(), &atlas)?,
        models,
        median_occupancy,
    };
    let mut regions = vec![summary.train.clone(), summary.test.clone()];
    regions.extend(summary.models.iter().map(|x| x.region.clone()));
    ctx.write("region.csv", &region_reports_csv(&regions), &mut m)?;
    let clf_rows: Vec<_> = summary.models.iter().map(|x| (x.model.clone(), x.classification.clone())).collect();
    ctx.write("classification.csv", &clf_reports_csv(&clf_rows), &mut m)?;
    ctx.write("eval.json", &(serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n"), &mut m)?;
    Ok((ctx.finish(m)?, summary))
}

fn parse_samples(text: &str, origin: &str) -> Result<Vec<crate::explorer::Config>, PipelineError> {
    let bad = |message: String| ExplorerError::Format { path: origin.to_string(), message };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(SAMPLES_CSV_HEADER) {
        return Err(bad(format!("expected header `{SAMPLES_CSV_HEADER}`")).into());
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            let num = |k: usize| {
                f.get(k)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| bad(format!("row {}: bad field {k}", i + 1)))
            };
            Ok(crate::explorer::Config { d_low0: num(0)?, m_ek: num(1)?, fw_n: num(2)? })
        })
        .collect()
}

/// Histogram overlays (generated vs. training marginals) for every model.
pub fn stage_export(ctx: &Context) -> Result<RunManifest, PipelineError> {
    let mut m = ctx.manifest("export-plots");
    let train = load_dataset(ctx, TRAIN_CSV, &mut m)?;
    let real = train.configs();
    let t = &ctx.config.train;
    for &n in &t.generators {
        for &seed in &t.seeds {
            let id = model_id(n, seed);
            let rel = format!("samples-n{n}-s{seed}.csv");
            let generated = parse_samples(&ctx.read_input("eval", &rel, &mut m)?, &rel)?;
            for coord in Coordinate::ALL {
                let o = distribution_overlay(&generated, &real, coord, &Bounds::TABLE1)?;
                let name = coord.as_str();
                ctx.write(&format!("plots/{id}-{name}-generated.csv"), &o.generated.to_csv_string(), &mut m)?;
                if n == t.generators[0] && seed == t.seeds[0] {
                    ctx.write(&format!("plots/real-{name}.csv"), &o.real.to_csv_string(), &mut m)?;
                }
            }
        }
    }
    ctx.finish(m)
}
