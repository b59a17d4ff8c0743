//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Takes roughly an hour on one core, most of
//! it in GAN training against the box-model oracle.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use tipgan_core::boxmodel::{hysteresis_sweep, integrate_with, IntegrationOptions, ModelParams, ModelState};
use tipgan_core::calibrate::{step_response, SearchOptions};
use tipgan_core::eval::Stratum;
use tipgan_core::explorer::{in_reference_band, in_uncertainty_region, linspace, sample_uniform, Atlas, Bounds, Dataset};
use tipgan_core::manifest::RunManifest;
use tipgan_core::neural::Matrix;
use tipgan_core::pipeline::{self, Context, EvalSummary, PipelineConfig};
use tipgan_core::tipgan::{loss_clf, loss_mad};

const GAN_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Outcome {
    pass: bool,
    detail: String,
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("tipgan-acceptance-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn context(config: PipelineConfig) -> Context {
    Context::new(config, None).expect("pipeline context")
}

fn criterion_1() -> Outcome {
    let p = ModelParams::base();
    let (on, stepped) = step_response(&p, &ModelState::template(&p), &IntegrationOptions::default()).unwrap();

    let dir = scratch("calibrate");
    let mut config = PipelineConfig::default();
    config.run.out_dir = dir.clone();
    let started = Instant::now();
    let search = pipeline::stage_calibrate(&context(config));
    let secs = started.elapsed().as_secs_f64();
    let _ = std::fs::remove_dir_all(&dir);
    let (search_ok, search_detail) = match search {
        Ok((_, r)) => (r.all_met(), format!("search ({} iterations) m_n {:.2}, band {:.1}%", SearchOptions::default().iterations, r.on_m_n, r.band_share_percent)),
        Err(e) => (false, format!("search failed: {e}")),
    };
    Outcome {
        pass: (15.0..=20.0).contains(&on) && stepped < 0.0 && search_ok,
        detail: format!("base m_n(0.55) = {on:.2} Sv, m_n after step to 0.77 = {stepped:.2} Sv; {search_detail} in {secs:.0} s"),
    }
}

fn criterion_2(atlas: &Atlas) -> Outcome {
    let p = ModelParams::base();
    let options = IntegrationOptions::default();
    let grid = linspace(0.05, 1.55, 61);
    let mut parts = Vec::new();
    let mut pass = true;
    for m_ek in [15.0, 20.0, 25.0, 30.0, 35.0] {
        let params = ModelParams { m_ek, fw_n: grid[0], ..p };
        let on = integrate_with(&params, &ModelState::template(&p), &options).unwrap();
        let s = hysteresis_sweep(&params, &on.final_state, &grid, &options).unwrap();
        pass &= s.has_hysteresis();
        let fmt = |x: Option<f64>| x.map_or("none".to_string(), |v| format!("{v:.3}"));
        parts.push(format!("{m_ek}: up {} down {}", fmt(s.up_transition), fmt(s.down_transition)));
    }
    let misordered = atlas.misordered_rows();
    pass &= misordered.is_empty();
    Outcome {
        pass,
        detail: format!(
            "{}; misordered atlas rows {}, non-monotone cells {}",
            parts.join(", "),
            misordered.len(),
            atlas.anomalies.len()
        ),
    }
}

fn criterion_3(atlas: &Atlas, train: &Dataset, test: &Dataset) -> Outcome {
    let share = 100.0 * atlas.aggregate_band_fraction();
    let band = atlas.aggregate_band().map_or("none".to_string(), |(a, b)| format!("[{a:.3}, {b:.3}]"));
    let pct = |d: &Dataset| {
        100.0 * d.samples.iter().filter(|s| in_uncertainty_region(&s.config, atlas)).count() as f64 / d.len() as f64
    };
    let agree = test
        .samples
        .iter()
        .filter(|s| in_uncertainty_region(&s.config, atlas) == in_reference_band(&s.config))
        .count() as f64
        / test.len() as f64;
    Outcome {
        pass: (share - 33.0).abs() <= 10.0,
        detail: format!(
            "aggregate band {band} Sv = {share:.1}% of range; occupancy train {:.1}%, test {:.1}%; atlas/band agreement {:.1}%",
            pct(train),
            pct(test),
            100.0 * agree
        ),
    }
}

fn criterion_4() -> Outcome {
    let p = ModelParams::base();
    let t = ModelState::template(&p);
    let coarse = IntegrationOptions::default();
    let fine = IntegrationOptions { dt_years: coarse.dt_years / 2.0, ..coarse };
    let mut configs = sample_uniform(&Bounds::TABLE1, 20, 4).unwrap();
    configs.push(tipgan_core::explorer::Config { d_low0: t.d_low, m_ek: p.m_ek, fw_n: p.fw_n });
    let mut drift: f64 = 0.0;
    let mut dt_change: f64 = 0.0;
    for c in &configs {
        let params = ModelParams { m_ek: c.m_ek, fw_n: c.fw_n, ..p };
        let start = ModelState { d_low: c.d_low0, ..t };
        let a = integrate_with(&params, &start, &coarse).unwrap();
        let b = integrate_with(&params, &start, &fine).unwrap();
        let salt = start.total_salt(&params);
        drift = drift.max((a.final_state.total_salt(&params) - salt).abs() / salt);
        dt_change = dt_change.max((a.final_m_n - b.final_m_n).abs());
    }
    let grad = common::randomized_gradient_checks(2024, 100);
    Outcome {
        pass: drift < 1e-8 && dt_change < 0.1 && grad < 1e-4,
        detail: format!(
            "max salt drift {drift:.1e} over {} 4000-yr runs; max |dm_n| under dt halving {dt_change:.2e} Sv; worst gradient error {grad:.1e} over 100 checks",
            configs.len()
        ),
    }
}

fn criterion_5(summary: &EvalSummary) -> Outcome {
    let medians: BTreeMap<usize, f64> = summary.median_occupancy.iter().copied().collect();
    let m = |n: usize| medians.get(&n).copied().unwrap_or(f64::NAN);
    let per_seed: Vec<String> = [1, 2, 3]
        .iter()
        .map(|&n| {
            let v: Vec<String> = summary
                .models
                .iter()
                .filter(|x| x.n_generators == n)
                .map(|x| format!("{:.1}", x.region.pooled.percent_atlas))
                .collect();
            format!("N={n} [{}]", v.join(" "))
        })
        .collect();
    Outcome {
        pass: m(1) < m(2) && m(2) < m(3) && m(3) > 80.0 && m(1) > 50.0,
        detail: format!(
            "median occupancy over {} seeds: N=1 {:.1}%, N=2 {:.1}%, N=3 {:.1}%; {}",
            GAN_SEEDS.len(),
            m(1),
            m(2),
            m(3),
            per_seed.join(", ")
        ),
    }
}

fn criterion_6(summary: &EvalSummary) -> Outcome {
    let mut pass = true;
    let mut worst: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for model in &summary.models {
        let f1 = |s: Stratum| model.classification.iter().find(|r| r.stratum == s).and_then(|r| r.f1).unwrap_or(0.0);
        let (inside, outside) = (f1(Stratum::InRegion), f1(Stratum::OutOfRegion));
        pass &= inside >= 0.95 && outside >= 0.99;
        let e = worst.entry(model.n_generators).or_insert((1.0, 1.0));
        *e = (e.0.min(inside), e.1.min(outside));
    }
    let parts: Vec<String> =
        worst.iter().map(|(n, (i, o))| format!("N={n} min F1 in {i:.3}, out {o:.3}")).collect();
    Outcome { pass: pass && !summary.models.is_empty(), detail: format!("over all seeds: {}", parts.join("; ")) }
}

fn output_hashes(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let name = entry.unwrap().file_name().to_string_lossy().to_string();
        if let Some(sub) = name.strip_prefix("manifest-").and_then(|s| s.strip_suffix(".json")) {
            for r in RunManifest::load(dir, sub).unwrap().outputs {
                out.insert(r.path, r.sha256);
            }
        }
    }
    out
}

fn tiny_pipeline(dir: &Path) -> BTreeMap<String, String> {
    let mut c = PipelineConfig::default();
    c.run.out_dir = dir.to_path_buf();
    c.dataset.train_count = 60;
    c.dataset.test_count = 30;
    c.atlas.m_ek_points = 3;
    c.atlas.fw_n_points = 13;
    c.train.generators = vec![1, 2];
    c.train.seeds = vec![0];
    c.train.steps = 3;
    c.train.batch_size = 4;
    c.eval.samples = 20;
    let ctx = context(c);
    pipeline::stage_dataset(&ctx).unwrap();
    pipeline::stage_atlas(&ctx).unwrap();
    pipeline::stage_train(&ctx).unwrap();
    pipeline::stage_eval(&ctx).unwrap();
    pipeline::stage_export(&ctx).unwrap();
    output_hashes(dir)
}

fn criterion_7() -> Outcome {
    let (a, b) = (scratch("replay-a"), scratch("replay-b"));
    let (ha, hb) = (tiny_pipeline(&a), tiny_pipeline(&b));
    let _ = (std::fs::remove_dir_all(&a), std::fs::remove_dir_all(&b));

    let uniform = Matrix::from_vec(2, 4, vec![0.25; 8]);
    let mad = loss_mad(&uniform, &[0, 3], 3).unwrap();
    let ln4_err = (mad.discriminator - 4f64.ln()).abs();
    let clf = loss_clf(&[0.5; 4], &[1.0, 0.0, 1.0, 0.0], &[0, 0, 1, 1], 1).unwrap();
    let ln2_err = (clf.discriminator - 2f64.ln()).abs().max((clf.generators[0] - 2f64.ln()).abs());
    Outcome {
        pass: ha == hb && ha.len() > 10 && ln4_err < 1e-12 && ln2_err < 1e-12,
        detail: format!(
            "{} output files, identical hashes across replays: {}; |ln 4 case| err {ln4_err:.1e}, |ln 2 case| err {ln2_err:.1e}",
            ha.len(),
            ha == hb
        ),
    }
}

fn report(n: usize, o: &Outcome, started: Instant) -> bool {
    println!("criterion {n}: {} ({}; {:.0} s)", if o.pass { "PASS" } else { "FAIL" }, o.detail, started.elapsed().as_secs_f64());
    o.pass
}

fn main() -> ExitCode {
    let mut all = true;
    let t = Instant::now();
    all &= report(1, &criterion_1(), t);

    let dir = scratch("run");
    let mut config = PipelineConfig::default();
    config.run.out_dir = dir.clone();
    config.train.seeds = GAN_SEEDS.to_vec();
    let ctx = context(config);
    let t = Instant::now();
    pipeline::stage_dataset(&ctx).unwrap();
    pipeline::stage_atlas(&ctx).unwrap();
    eprintln!("datasets and atlas ready after {:.0} s", t.elapsed().as_secs_f64());
    let atlas = Atlas::parse_csv(&std::fs::read_to_string(dir.join(pipeline::ATLAS_CSV)).unwrap(), "atlas").unwrap();
    let train = Dataset::load(&dir.join(pipeline::TRAIN_CSV)).unwrap();
    let test = Dataset::load(&dir.join(pipeline::TEST_CSV)).unwrap();

    let t = Instant::now();
    all &= report(2, &criterion_2(&atlas), t);
    let t = Instant::now();
    all &= report(3, &criterion_3(&atlas, &train, &test), t);
    let t = Instant::now();
    all &= report(4, &criterion_4(), t);

    let t = Instant::now();
    pipeline::stage_train(&ctx).unwrap();
    let (_, summary) = pipeline::stage_eval(&ctx).unwrap();
    all &= report(5, &criterion_5(&summary), t);
    all &= report(6, &criterion_6(&summary), t);
    let _ = std::fs::remove_dir_all(&dir);

    let t = Instant::now();
    all &= report(7, &criterion_7(), t);

    if all {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: at least one criterion failed");
        ExitCode::FAILURE
    }
}
