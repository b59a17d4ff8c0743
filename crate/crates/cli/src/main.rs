use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tipgan_core::pipeline::{self, Context, PipelineConfig, PipelineError};

#[derive(Parser, Debug)]
#[command(name = "tipgan", version, about = "Tipping-point discovery pipeline for a four-box overturning model")]
struct Cli {
    /// Pipeline config (TOML, one section per stage). Flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory for all artifacts and manifests.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Model parameter file.
    #[arg(long, global = true)]
    params: Option<PathBuf>,
    /// Worker threads for oracle-heavy stages (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tune the surrogate parameters and write calibrated.params.
    Calibrate {
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample and label the training and test sets.
    Dataset {
        /// Training set size.
        #[arg(long)]
        count: Option<usize>,
        /// Training set seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        test_count: Option<usize>,
        #[arg(long)]
        test_seed: Option<u64>,
    },
    /// Map the bistable fw_n band over the m_ek range.
    Atlas {
        #[arg(long)]
        m_ek_points: Option<usize>,
        #[arg(long)]
        fw_n_points: Option<usize>,
    },
    /// Train one model per generator count and seed.
    Train(TrainArgs),
    /// Region occupancy and classification reports.
    Eval {
        #[arg(long, value_delimiter = ',')]
        generators: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Histogram data for generated vs. training marginals.
    ExportPlots {
        #[arg(long, value_delimiter = ',')]
        generators: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Generator counts, e.g. `--generators 1,2,3`.
    #[arg(long, value_delimiter = ',')]
    generators: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    error: &'a str,
    message: String,
    exit_code: u8,
}

fn report(kind: &str, message: String, code: u8) -> ExitCode {
    let record = ErrorRecord { error: kind, message, exit_code: code };
    eprintln!("{}", serde_json::to_string(&record).expect("error record serializes"));
    ExitCode::from(code)
}

fn apply_overrides(cli: &Cli, config: &mut PipelineConfig) {
    if let Some(d) = &cli.out_dir {
        config.run.out_dir = d.clone();
    }
    if let Some(p) = &cli.params {
        config.run.params_file = Some(p.clone());
    }
    macro_rules! set {
        ($target:expr, $value:expr) => {
            if let Some(v) = $value {
                $target = v.clone();
            }
        };
    }
    match &cli.command {
        Command::Calibrate { iterations, seed } => {
            set!(config.calibrate.iterations, iterations);
            set!(config.calibrate.seed, seed);
        }
        Command::Dataset { count, seed, test_count, test_seed } => {
            set!(config.dataset.train_count, count);
            set!(config.dataset.train_seed, seed);
            set!(config.dataset.test_count, test_count);
            set!(config.dataset.test_seed, test_seed);
        }
        Command::Atlas { m_ek_points, fw_n_points } => {
            set!(config.atlas.m_ek_points, m_ek_points);
            set!(config.atlas.fw_n_points, fw_n_points);
        }
        Command::Train(a) => {
            set!(config.train.generators, &a.generators);
            set!(config.train.seeds, &a.seeds);
            set!(config.train.steps, a.steps);
            set!(config.train.batch_size, a.batch_size);
            set!(config.train.checkpoint_every, a.checkpoint_every);
        }
        Command::Eval { generators, seeds, samples } => {
            set!(config.train.generators, generators);
            set!(config.train.seeds, seeds);
            set!(config.eval.samples, samples);
        }
        Command::ExportPlots { generators, seeds } => {
            set!(config.train.generators, generators);
            set!(config.train.seeds, seeds);
        }
    }
}

fn run(cli: &Cli, ctx: &Context) -> Result<(), PipelineError> {
    let dir = ctx.out_dir().display().to_string();
    match &cli.command {
        Command::Calibrate { .. } => {
            let (_, report) = pipeline::stage_calibrate(ctx)?;
            print!("{}", report.to_text());
        }
        Command::Dataset { .. } => {
            pipeline::stage_dataset(ctx)?;
            println!("datasets written to {dir}");
        }
        Command::Atlas { .. } => {
            pipeline::stage_atlas(ctx)?;
            println!("atlas written to {dir}");
        }
        Command::Train(_) => {
            for m in pipeline::stage_train(ctx)? {
                println!("{} done", m.subcommand);
            }
        }
        Command::Eval { .. } => {
            let (_, summary) = pipeline::stage_eval(ctx)?;
            for (n, pct) in &summary.median_occupancy {
                println!("N={n}: median region occupancy {pct:.1}%");
            }
        }
        Command::ExportPlots { .. } => {
            pipeline::stage_export(ctx)?;
            println!("plot data written to {dir}/plots");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return report("Usage", e.to_string().trim().to_string(), 2),
    };
    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
            return report("Usage", e.to_string(), 2);
        }
    }
    let mut config = match &cli.config {
        Some(p) => match PipelineConfig::load(p) {
            Ok(c) => c,
            Err(e) => return report(e.kind(), e.to_string(), 2),
        },
        None => PipelineConfig::default(),
    };
    apply_overrides(&cli, &mut config);
    let ctx = match Context::new(config, cli.config.clone()) {
        Ok(c) => c,
        Err(e @ PipelineError::Config(_)) => return report(e.kind(), e.to_string(), 2),
        Err(e) => return report(e.kind(), e.to_string(), 1),
    };
    match run(&cli, &ctx) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ PipelineError::Config(_)) => report(e.kind(), e.to_string(), 2),
        Err(e) => report(e.kind(), e.to_string(), 1),
    }
}
