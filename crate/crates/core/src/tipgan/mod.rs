//! Multi-generator adversarial training against an oracle-labeled
//! discriminator.

mod loss;
mod network;

pub use loss::{loss_clf, loss_mad, ClfLoss, MadLoss};
pub use network::Discriminator;

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explorer::{Bounds, Config, Dataset};
use crate::neural::{Activation, AdamConfig, AdamState, Matrix, Mlp, NeuralError};
use crate::oracle::Oracle;
use network::{to_input, DiscriminatorAdam};

pub const CHECKPOINT_FORMAT: &str = "tipgan-checkpoint/1";

#[derive(Debug, Error)]
pub enum GanError {
    #[error("expected {expected} classes, got {got}")]
    ClassCountMismatch { expected: usize, got: usize },
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("label {0} is not 0 or 1")]
    LabelDomain(f64),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize, last_checkpoint: Option<Box<TipGan>> },
    #[error("config {0:?} outside the admissible box")]
    OutOfBounds(Config),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanSpec {
    pub n_generators: usize,
    /// Samples per origin per step (m).
    pub batch_size: usize,
    pub latent_dim: usize,
    pub steps: usize,
    pub seed: u64,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub generator_lr: f64,
    pub discriminator_lr: f64,
    pub mad_weight: f64,
    pub clf_weight: f64,
    /// Snapshot interval in steps; 0 keeps only the initial snapshot.
    pub checkpoint_every: usize,
}

impl Default for GanSpec {
    fn default() -> Self {
        Self {
            n_generators: 3,
            batch_size: 64,
            latent_dim: 8,
            steps: 1000,
            seed: 0,
            generator_hidden: vec![64, 64],
            discriminator_hidden: vec![64, 64],
            generator_lr: 1e-3,
            discriminator_lr: 1e-3,
            mad_weight: 1.0,
            clf_weight: 1.0,
            checkpoint_every: 500,
        }
    }
}

impl GanSpec {
    pub fn validate(&self) -> Result<(), GanError> {
        let bad = |m: &str| Err(GanError::InvalidSpec(m.to_string()));
        if self.n_generators == 0 {
            return bad("n_generators must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be >= 1");
        }
        if self.discriminator_hidden.is_empty() {
            return bad("discriminator needs at least one hidden layer");
        }
        for (name, v) in [
            ("generator_lr", self.generator_lr),
            ("discriminator_lr", self.discriminator_lr),
            ("mad_weight", self.mad_weight),
            ("clf_weight", self.clf_weight),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(GanError::InvalidSpec(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Configs seen by one discriminator update: m(n + 1).
    pub fn samples_per_step(&self) -> usize {
        self.batch_size * (self.n_generators + 1)
    }
}

/// One step's training data. Row order is real first, then generator 1..n.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainBatch {
    pub real_configs: Vec<Config>,
    pub real_labels: Vec<f64>,
    /// `generated_configs[i]` came from generator `i + 1`.
    pub generated_configs: Vec<Vec<Config>>,
    pub generated_labels: Vec<Vec<f64>>,
}

impl TrainBatch {
    pub fn len(&self) -> usize {
        self.real_configs.len() + self.generated_configs.iter().map(Vec::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Origin tag per row: 0 = real, i = generator i.
    pub fn origins(&self) -> Vec<usize> {
        let mut o = vec![0; self.real_configs.len()];
        for (i, g) in self.generated_configs.iter().enumerate() {
            o.extend(std::iter::repeat_n(i + 1, g.len()));
        }
        o
    }

    pub fn labels(&self) -> Vec<f64> {
        let mut y = self.real_labels.clone();
        for g in &self.generated_labels {
            y.extend_from_slice(g);
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: usize,
    /// Discriminator-side origin loss.
    pub l_mad: f64,
    /// Discriminator-side classification loss.
    pub l_clf: f64,
    pub l_tip: f64,
    /// Weighted objective of each generator.
    pub generator_loss: Vec<f64>,
    pub fraction_in_region: Vec<f64>,
    pub origin_accuracy: f64,
    pub state_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFailure {
    pub step: usize,
    pub config: Config,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub steps: Vec<StepStats>,
    /// Steps skipped because the oracle rejected a generated config.
    pub failures: Vec<OracleFailure>,
}

impl TrainStats {
    pub fn to_csv_string(&self, n_generators: usize) -> String {
        let mut out = String::from("step,l_mad,l_clf,l_tip,origin_accuracy,state_accuracy");
        for i in 1..=n_generators {
            let _ = write!(out, ",g{i}_loss");
        }
        for i in 1..=n_generators {
            let _ = write!(out, ",g{i}_in_region");
        }
        out.push('\n');
        for s in &self.steps {
            let _ = write!(out, "{},{},{},{},{},{}", s.step, s.l_mad, s.l_clf, s.l_tip, s.origin_accuracy, s.state_accuracy);
            for v in s.generator_loss.iter().chain(&s.fraction_in_region) {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }
}

/// Complete trainer state; doubles as the checkpoint format.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct TipGan {
    pub format: String,
    pub spec: GanSpec,
    pub bounds: Bounds,
    /// Completed steps.
    pub step: usize,
    pub generators: Vec<Mlp>,
    pub discriminator: Discriminator,
    generator_adam: Vec<AdamState>,
    discriminator_adam: DiscriminatorAdam,
    rng: ChaCha8Rng,
}

impl std::fmt::Debug for TipGan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TipGan")
            .field("spec", &self.spec)
            .field("step", &self.step)
            .field("generators", &self.generators.len())
            .finish_non_exhaustive()
    }
}

enum StepError {
    Oracle(OracleFailure),
    Fatal(GanError),
}

impl From<NeuralError> for StepError {
    fn from(e: NeuralError) -> Self {
        StepError::Fatal(e.into())
    }
}

fn generator_output_to_config(bounds: &Bounds, u: &[f64]) -> Config {
    bounds.denormalize([u[0], u[1], u[2]])
}

impl TipGan {
    /// Fresh networks, initialized deterministically from `spec.seed`.
    pub fn new(spec: GanSpec, bounds: Bounds) -> Result<Self, GanError> {
        spec.validate()?;
        bounds.validate().map_err(|e| GanError::InvalidSpec(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut g_sizes = vec![spec.latent_dim];
        g_sizes.extend_from_slice(&spec.generator_hidden);
        g_sizes.push(3);
        let generators = (0..spec.n_generators)
            .map(|_| Mlp::new(&g_sizes, Activation::LeakyRelu, Activation::Sigmoid, &mut rng))
            .collect::<Result<Vec<_>, _>>()?;
        let discriminator = Discriminator::new(spec.n_generators, &spec.discriminator_hidden, &mut rng)?;
        let g_cfg = AdamConfig::new(spec.generator_lr);
        let generator_adam = generators.iter().map(|g| AdamState::new(g_cfg.clone(), g)).collect();
        let discriminator_adam = DiscriminatorAdam::new(AdamConfig::new(spec.discriminator_lr), &discriminator);
        Ok(Self {
            format: CHECKPOINT_FORMAT.to_string(),
            spec,
            bounds,
            step: 0,
            generators,
            discriminator,
            generator_adam,
            discriminator_adam,
            rng,
        })
    }

    fn latent<R: Rng>(rng: &mut R, rows: usize, dim: usize) -> Matrix {
        Matrix::from_vec(rows, dim, (0..rows * dim).map(|_| rng.sample(StandardNormal)).collect())
    }

    /// `count` configs from generator `index` (0-based), deterministic per seed.
    pub fn generate(&self, index: usize, count: usize, seed: u64) -> Vec<Config> {
        generate(&self.generators[index], &self.bounds, count, seed)
    }

    /// Oracle-free probability that `config` ends in the On state.
    pub fn predict_shutoff(&self, config: &Config) -> Result<f64, GanError> {
        predict_shutoff(&self.discriminator, &self.bounds, config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trainer state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GanError> {
        let model: Self = serde_json::from_str(text).map_err(|e| GanError::Checkpoint(e.to_string()))?;
        if model.format != CHECKPOINT_FORMAT {
            return Err(GanError::Checkpoint(format!("unsupported format `{}`", model.format)));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), GanError> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GanError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    fn draw_batch<O: Oracle>(
        &mut self,
        dataset: &Dataset,
        oracle: &O,
    ) -> Result<(TrainBatch, Vec<crate::neural::ForwardCache>, Matrix), StepError> {
        let m = self.spec.batch_size;
        let n = self.spec.n_generators;
        let real: Vec<_> = (0..m).map(|_| dataset.samples[self.rng.gen_range(0..dataset.len())]).collect();
        let mut caches = Vec::with_capacity(n);
        let mut generated = Vec::with_capacity(n);
        let mut x = Matrix::zeros(m * (n + 1), 3);
        for (r, s) in real.iter().enumerate() {
            x.row_mut(r).copy_from_slice(&to_input(&self.bounds.normalize(&s.config)));
        }
        for (i, g) in self.generators.iter().enumerate() {
            let z = Self::latent(&mut self.rng, m, self.spec.latent_dim);
            let cache = g.forward_cached(&z)?;
            let u = cache.output();
            let configs: Vec<Config> = (0..m).map(|r| generator_output_to_config(&self.bounds, u.row(r))).collect();
            assert!(configs.iter().all(|c| self.bounds.contains(c)), "generator escaped the admissible box");
            for r in 0..m {
                let ur = u.row(r);
                x.row_mut((i + 1) * m + r).copy_from_slice(&to_input(&[ur[0], ur[1], ur[2]]));
            }
            generated.push(configs);
            caches.push(cache);
        }
        let flat: Vec<Config> = generated.iter().flatten().copied().collect();
        let verdicts: Vec<_> = flat.par_iter().map(|c| oracle.evaluate(c)).collect();
        let mut labels = Vec::with_capacity(flat.len());
        for (c, v) in flat.iter().zip(verdicts) {
            match v {
                Ok(v) => labels.push(v.label.as_target()),
                Err(e) => {
                    return Err(StepError::Oracle(OracleFailure { step: self.step, config: *c, message: e.to_string() }))
                }
            }
        }
        let batch = TrainBatch {
            real_configs: real.iter().map(|s| s.config).collect(),
            real_labels: real.iter().map(|s| s.label.as_target()).collect(),
            generated_labels: labels.chunks(m).map(<[f64]>::to_vec).collect(),
            generated_configs: generated,
        };
        Ok((batch, caches, x))
    }

    fn step_once<O: Oracle>(
        &mut self,
        dataset: &Dataset,
        oracle: &O,
        region: &(dyn Fn(&Config) -> bool + Sync),
    ) -> Result<StepStats, StepError> {
        let step = self.step;
        let (batch, caches, x) = self.draw_batch(dataset, oracle)?;
        let n = self.spec.n_generators;
        let m = self.spec.batch_size;
        let (w_mad, w_clf) = (self.spec.mad_weight, self.spec.clf_weight);
        let origins = batch.origins();
        let labels = batch.labels();
        debug_assert_eq!(origins.len(), self.spec.samples_per_step());
        let fatal = |e: GanError| StepError::Fatal(e);
        let non_finite = || StepError::Fatal(GanError::NonFiniteLoss { step, last_checkpoint: None });

        // Discriminator update over all m(n + 1) rows.
        let pass = self.discriminator.forward_cached(&x)?;
        let probs = pass.origin_probs();
        let p_on = pass.p_on();
        let mad = loss_mad(probs, &origins, n).map_err(fatal)?;
        let clf = loss_clf(&p_on, &labels, &origins, n).map_err(fatal)?;
        let (l_mad, l_clf) = (mad.discriminator, clf.discriminator);
        let l_tip = w_mad * l_mad + w_clf * l_clf;
        if !l_tip.is_finite() {
            return Err(non_finite());
        }
        let origin_correct = (0..origins.len())
            .filter(|&r| {
                let row = probs.row(r);
                let best = (0..row.len()).fold(0, |b, k| if row[k] > row[b] { k } else { b });
                best == origins[r]
            })
            .count();
        let state_correct = p_on.iter().zip(&labels).filter(|(p, y)| (**p >= 0.5) == (**y == 1.0)).count();
        let mut g_origin = mad.discriminator_grad;
        for v in g_origin.data_mut() {
            *v *= w_mad;
        }
        let g_state: Vec<f64> = clf.discriminator_grad.iter().map(|g| w_clf * g).collect();
        let (grads, _) = self.discriminator.backward(&pass, &g_origin, &g_state)?;
        self.discriminator_adam.step(&mut self.discriminator, &grads).map_err(|_| non_finite())?;

        // Generator updates against the refreshed discriminator.
        let gen_x = x.slice_rows(m, m * (n + 1));
        let gen_origins = &origins[m..];
        let pass = self.discriminator.forward_cached(&gen_x)?;
        let mad = loss_mad(pass.origin_probs(), gen_origins, n).map_err(fatal)?;
        let clf = loss_clf(&pass.p_on(), &labels[m..], gen_origins, n).map_err(fatal)?;
        let generator_loss: Vec<f64> =
            mad.generators.iter().zip(&clf.generators).map(|(a, b)| w_mad * a + w_clf * b).collect();
        if generator_loss.iter().any(|v| !v.is_finite()) {
            return Err(non_finite());
        }
        let mut g_origin = mad.generator_grad;
        for v in g_origin.data_mut() {
            *v *= w_mad;
        }
        let g_state: Vec<f64> = clf.generator_grad.iter().map(|g| w_clf * g).collect();
        let (_, x_grad) = self.discriminator.backward(&pass, &g_origin, &g_state)?;
        for (i, cache) in caches.iter().enumerate() {
            let mut u_grad = x_grad.slice_rows(i * m, (i + 1) * m);
            for v in u_grad.data_mut() {
                *v *= 2.0;
            }
            let (grads, _) = self.generators[i].backward(cache, &u_grad)?;
            self.generator_adam[i].step(&mut self.generators[i], &grads).map_err(|_| non_finite())?;
        }

        let fraction_in_region = batch
            .generated_configs
            .iter()
            .map(|g| g.iter().filter(|c| region(c)).count() as f64 / g.len() as f64)
            .collect();
        Ok(StepStats {
            step,
            l_mad,
            l_clf,
            l_tip,
            generator_loss,
            fraction_in_region,
            origin_accuracy: origin_correct as f64 / origins.len() as f64,
            state_accuracy: state_correct as f64 / labels.len() as f64,
        })
    }
}

/// Outcome of [`train`].
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: TipGan,
    pub stats: TrainStats,
}

/// Runs `spec.steps` alternating updates. `region` feeds the per-generator
/// occupancy statistic; `on_checkpoint` sees the initial state and every
/// `checkpoint_every`-th step.
pub fn train<O: Oracle>(
    spec: &GanSpec,
    bounds: Bounds,
    dataset: &Dataset,
    oracle: &O,
    region: &(dyn Fn(&Config) -> bool + Sync),
    on_checkpoint: &mut dyn FnMut(&TipGan) -> Result<(), GanError>,
) -> Result<Trained, GanError> {
    let model = TipGan::new(spec.clone(), bounds)?;
    resume(model, dataset, oracle, region, on_checkpoint)
}

/// Continues training `model` until it has completed `model.spec.steps`.
pub fn resume<O: Oracle>(
    mut model: TipGan,
    dataset: &Dataset,
    oracle: &O,
    region: &(dyn Fn(&Config) -> bool + Sync),
    on_checkpoint: &mut dyn FnMut(&TipGan) -> Result<(), GanError>,
) -> Result<Trained, GanError> {
    if dataset.is_empty() {
        return Err(GanError::EmptyDataset);
    }
    let mut stats = TrainStats::default();
    let mut last = model.clone();
    on_checkpoint(&model)?;
    while model.step < model.spec.steps {
        match model.step_once(dataset, oracle, region) {
            Ok(s) => stats.steps.push(s),
            Err(StepError::Oracle(f)) => stats.failures.push(f),
            Err(StepError::Fatal(GanError::NonFiniteLoss { step, .. })) => {
                return Err(GanError::NonFiniteLoss { step, last_checkpoint: Some(Box::new(last)) })
            }
            Err(StepError::Fatal(e)) => return Err(e),
        }
        model.step += 1;
        let every = model.spec.checkpoint_every;
        if every > 0 && model.step.is_multiple_of(every) {
            last = model.clone();
            on_checkpoint(&model)?;
        }
    }
    Ok(Trained { model, stats })
}

/// `count` configs from a generator with latent draws seeded by `seed`.
pub fn generate(generator: &Mlp, bounds: &Bounds, count: usize, seed: u64) -> Vec<Config> {
    if count == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = TipGan::latent(&mut rng, count, generator.input_dim());
    let u = generator.forward(&z).expect("latent width matches the generator");
    (0..count).map(|r| generator_output_to_config(bounds, u.row(r))).collect()
}

/// Probability of On from the state head; 0.5 is the decision threshold.
pub fn predict_shutoff(discriminator: &Discriminator, bounds: &Bounds, config: &Config) -> Result<f64, GanError> {
    if !bounds.contains(config) {
        return Err(GanError::OutOfBounds(*config));
    }
    Ok(discriminator.p_on(bounds, std::slice::from_ref(config))[0])
}
