use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{run_seed, Dataset, ExperimentConfig, HarnessError, RunManifest, TrainState, STREAM_PROBE};
use crate::corpus::{unigram, UnigramDistribution};
use crate::linalg::FitResult;
use crate::metrics::{MetricsReport, SimilarityBenchmark};
use crate::optim::OptimizerKind;
use crate::probe::{fit_probe, measure_conditionals, ProbeReport};
use crate::rng::SplitMix64;
use crate::stats::{metric_direction, sample_stats, ComparisonRow, SeedSample};

fn seed_dir(variant_dir: &Path, seed: u64) -> PathBuf {
    variant_dir.join(format!("seed-{seed}"))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

/// Writes `vocab.txt` and `unigram.csv` (over the full stream) to `out_dir`.
pub fn cmd_unigram(cfg: &ExperimentConfig) -> Result<UnigramDistribution, HarnessError> {
    let data = Dataset::prepare(cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let dist = unigram(&data.full);
    fs::write(cfg.out_dir.join("vocab.txt"), data.vocab.to_file_string())?;
    dist.write_csv(&data.vocab, BufWriter::new(File::create(cfg.out_dir.join("unigram.csv"))?))?;
    Ok(dist)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainOptions {
    /// Continue from an existing checkpoint in the seed directory.
    pub resume: bool,
    /// Stop after this many steps (the checkpoint can be resumed later).
    pub stop_at: Option<u64>,
}

/// Trains every seed of `cfg` (in parallel) and writes the variant
/// directory. Returns the manifests in seed order.
pub fn cmd_train(cfg: &ExperimentConfig, opts: TrainOptions) -> Result<Vec<RunManifest>, HarnessError> {
    cfg.validate()?;
    let data = Dataset::prepare(cfg)?;
    let variant_dir = cfg.out_dir.join(cfg.variant_name());
    fs::create_dir_all(&variant_dir)?;
    fs::write(variant_dir.join("config.json"), cfg.to_json() + "\n")?;
    fs::write(variant_dir.join("vocab.txt"), data.vocab.to_file_string())?;
    data.unigram.write_csv(&data.vocab, BufWriter::new(File::create(variant_dir.join("unigram.csv"))?))?;

    let run = |seed: u64| -> Result<RunManifest, HarnessError> {
        let dir = seed_dir(&variant_dir, seed);
        fs::create_dir_all(&dir)?;
        let ckpt = dir.join("checkpoint.json");
        let resume = if opts.resume && ckpt.exists() { Some(TrainState::load(&ckpt, cfg)?) } else { None };
        let (manifest, state) = run_seed(cfg, &data, seed, resume, opts.stop_at)?;
        state.save(&ckpt)?;
        write_json(&dir.join("manifest.json"), &manifest)?;
        manifest.write_snapshots_csv(BufWriter::new(File::create(dir.join("snapshots.csv"))?))?;
        log::info!(
            "{} seed {seed}: {} steps, final loss {:?}, {:.1}s",
            cfg.variant_name(),
            manifest.steps_completed,
            manifest.final_loss,
            manifest.wall_time_secs
        );
        Ok(manifest)
    };
    let results: Vec<Result<RunManifest, HarnessError>> = std::thread::scope(|s| {
        let handles: Vec<_> = cfg.seeds.iter().map(|&seed| s.spawn(move || run(seed))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(HarnessError::Runtime("training thread panicked".into()))))
            .collect()
    });
    results.into_iter().collect()
}

struct LoadedRun {
    cfg: ExperimentConfig,
    data: Dataset,
    state: TrainState,
}

fn require_dir(dir: &Path) -> Result<(), HarnessError> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(HarnessError::Config(format!("{} is not a directory", dir.display())))
    }
}

fn load_run(run_dir: &Path) -> Result<LoadedRun, HarnessError> {
    require_dir(run_dir)?;
    let variant_dir = run_dir
        .parent()
        .ok_or_else(|| HarnessError::Config(format!("{} is not a seed directory", run_dir.display())))?;
    let cfg = ExperimentConfig::load(&variant_dir.join("config.json"))?;
    let data = Dataset::prepare(&cfg)?;
    let state = TrainState::load(&run_dir.join("checkpoint.json"), &cfg)?;
    Ok(LoadedRun { cfg, data, state })
}

/// Metrics of a trained seed directory, written to `metrics.json` and
/// `metrics.csv` inside it. Extra benchmark files add to the configured ones.
pub fn cmd_metrics(run_dir: &Path, extra_benchmarks: &[PathBuf]) -> Result<MetricsReport, HarnessError> {
    let LoadedRun { mut data, state, .. } = load_run(run_dir)?;
    for path in extra_benchmarks {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read benchmark {}: {e}", path.display())))?;
        let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        data.benchmarks.push(SimilarityBenchmark::parse_tsv(&name, &text)?);
    }
    let report = data.metrics(&state.params)?;
    write_json(&run_dir.join("metrics.json"), &report)?;
    report.write_csv(BufWriter::new(File::create(run_dir.join("metrics.csv"))?))?;
    Ok(report)
}

/// Fit results plus the check of the second-moment decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub examples: u64,
    pub fit_true: Option<FitResult>,
    pub fit_false: Option<FitResult>,
    pub fit_v: Option<FitResult>,
    pub a: Option<f64>,
    /// Tokens with at least `min_target_count` target observations.
    pub checked_tokens: usize,
    pub min_target_count: u64,
    /// Largest relative error of the predicted against the measured `E[gᵢ²]`.
    pub max_rel_error: Option<f64>,
}

impl ProbeSummary {
    pub fn new(report: &ProbeReport, min_target_count: u64) -> Self {
        let mut worst: Option<f64> = None;
        let mut checked = 0;
        for ((pred, &g2), &count) in report.predicted_g2().iter().zip(&report.g2).zip(&report.target_count) {
            if count < min_target_count {
                continue;
            }
            if let Some(p) = pred {
                checked += 1;
                let rel = (p - g2).abs() / g2.abs().max(f64::MIN_POSITIVE);
                worst = Some(worst.map_or(rel, |w| w.max(rel)));
            }
        }
        Self {
            examples: report.examples,
            fit_true: report.fit_true,
            fit_false: report.fit_false,
            fit_v: report.fit_v,
            a: report.a,
            checked_tokens: checked,
            min_target_count,
            max_rel_error: worst,
        }
    }
}

/// Forward-only probe of a trained seed directory. Writes `probe.csv` and
/// `probe_fit.json` inside it.
pub fn cmd_probe(run_dir: &Path, batches: Option<usize>) -> Result<(ProbeReport, ProbeSummary), HarnessError> {
    let LoadedRun { cfg, data, state } = load_run(run_dir)?;
    let n = batches.unwrap_or(cfg.probe_batches);
    let rng = SplitMix64::derive(state.seed, STREAM_PROBE);
    let raw = measure_conditionals(&state.params, &data.train, cfg.batch_size, n, rng)?;
    let vhat = state.vhat_mean();
    let report = fit_probe(raw, &data.unigram.probs, vhat.as_deref())?;
    let summary = ProbeSummary::new(&report, 100);
    report.write_csv(&data.unigram.probs, vhat.as_deref(), BufWriter::new(File::create(run_dir.join("probe.csv"))?))?;
    write_json(&run_dir.join("probe_fit.json"), &summary)?;
    Ok((report, summary))
}

/// Manifests of every `seed-*` directory under a variant directory, keyed
/// by seed.
pub fn load_manifests(variant_dir: &Path) -> Result<BTreeMap<u64, RunManifest>, HarnessError> {
    require_dir(variant_dir)?;
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(variant_dir)? {
        let path = entry?.path();
        let is_seed = path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("seed-"));
        if is_seed && path.join("manifest.json").exists() {
            let m: RunManifest = serde_json::from_str(&fs::read_to_string(path.join("manifest.json"))?)?;
            out.insert(m.seed, m);
        }
    }
    if out.is_empty() {
        return Err(HarnessError::Config(format!("no manifests under {}", variant_dir.display())));
    }
    Ok(out)
}

/// Per-metric comparison of two variant directories; variant 1 is tested for
/// improvement over variant 0. Writes `csv_out` when given.
pub fn cmd_compare(dir0: &Path, dir1: &Path, csv_out: Option<&Path>) -> Result<Vec<ComparisonRow>, HarnessError> {
    let m0 = load_manifests(dir0)?;
    let m1 = load_manifests(dir1)?;
    if m0.keys().ne(m1.keys()) {
        return Err(HarnessError::Mismatch(format!(
            "seed sets differ: {:?} vs {:?}",
            m0.keys().collect::<Vec<_>>(),
            m1.keys().collect::<Vec<_>>()
        )));
    }
    let names = |m: &RunManifest| m.results().iter().map(|(n, _)| *n).collect::<Vec<_>>();
    let reference = names(m0.values().next().expect("non-empty"));
    if let Some(bad) = m0.values().chain(m1.values()).find(|m| names(m) != reference) {
        return Err(HarnessError::Mismatch(format!(
            "metric sets differ: {:?} vs {:?} (seed {})",
            reference,
            names(bad),
            bad.seed
        )));
    }
    let collect = |ms: &BTreeMap<u64, RunManifest>, k: usize| -> Vec<f64> { ms.values().map(|m| m.results()[k].1).collect() };
    let mut rows = Vec::new();
    for (k, name) in reference.iter().enumerate() {
        let Some(direction) = metric_direction(name) else { continue };
        let s0 = SeedSample { metric: name.to_string(), direction, values: collect(&m0, k) };
        let s1 = SeedSample { metric: name.to_string(), direction, values: collect(&m1, k) };
        rows.push(ComparisonRow::new(&s0, &s1)?);
    }
    if let Some(path) = csv_out {
        crate::stats::write_comparison_csv(&rows, BufWriter::new(File::create(path)?))?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblateMode {
    /// Scaled Coupled Adam over `scale_grid`, against `n = 0`.
    Scale,
    /// SGD embeddings over `sgd_factor_grid`, against Coupled Adam.
    Sgd,
}

impl std::str::FromStr for AblateMode {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "scale" => Ok(Self::Scale),
            "sgd" => Ok(Self::Sgd),
            _ => Err(HarnessError::Config(format!("unknown ablation mode {s:?} (expected scale or sgd)"))),
        }
    }
}

/// One grid point: seed means of the results and their differences to the
/// baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub grid_value: String,
    pub variant: String,
    pub seeds: usize,
    pub means: Vec<(String, f64)>,
    pub deltas: Vec<(String, f64)>,
}

fn seed_means(manifests: &[RunManifest]) -> Result<Vec<(String, f64)>, HarnessError> {
    let first = manifests.first().ok_or_else(|| HarnessError::Runtime("no runs".into()))?;
    let names: Vec<&str> = first.results().iter().map(|(n, _)| *n).collect();
    let mut out = Vec::new();
    for (k, name) in names.iter().enumerate() {
        let values: Vec<f64> = manifests
            .iter()
            .map(|m| m.results().get(k).map(|r| r.1).unwrap_or(f64::NAN))
            .collect();
        let mean = sample_stats(&values).map(|s| s.mean).unwrap_or(f64::NAN);
        out.push((name.to_string(), mean));
    }
    Ok(out)
}

/// Runs the grid of `mode` plus its baseline and writes `summary.csv` and
/// `summary.json` into `out_dir`.
pub fn cmd_ablate(cfg: &ExperimentConfig, mode: AblateMode) -> Result<Vec<AblationRow>, HarnessError> {
    cfg.validate()?;
    let mut points: Vec<(String, ExperimentConfig)> = Vec::new();
    let baseline = match mode {
        AblateMode::Scale => {
            let mut grid = cfg.scale_grid.clone();
            if !grid.contains(&0) {
                grid.push(0);
            }
            grid.sort_unstable();
            grid.dedup();
            for n in grid {
                let c = ExperimentConfig { optimizer: OptimizerKind::ScaledCoupled, scale_exponent: n, ..cfg.clone() };
                points.push((n.to_string(), c));
            }
            "0".to_string()
        }
        AblateMode::Sgd => {
            points.push(("baseline".into(), ExperimentConfig { optimizer: OptimizerKind::Coupled, ..cfg.clone() }));
            for &f in &cfg.sgd_factor_grid {
                let c = ExperimentConfig { optimizer: OptimizerKind::Sgd, sgd_lr_factor: f, ..cfg.clone() };
                points.push((f.to_string(), c));
            }
            "baseline".to_string()
        }
    };
    let mut runs = Vec::new();
    for (label, c) in &points {
        let manifests = cmd_train(c, TrainOptions::default())?;
        runs.push((label.clone(), c.variant_name(), manifests.len(), seed_means(&manifests)?));
    }
    let base = runs.iter().find(|r| r.0 == baseline).map(|r| r.3.clone()).expect("baseline is part of the grid");
    let rows: Vec<AblationRow> = runs
        .into_iter()
        .map(|(grid_value, variant, seeds, means)| {
            let deltas = means
                .iter()
                .map(|(name, v)| {
                    let b = base.iter().find(|(n, _)| n == name).map_or(f64::NAN, |(_, b)| *b);
                    (name.clone(), v - b)
                })
                .collect();
            AblationRow { grid_value, variant, seeds, means, deltas }
        })
        .collect();

    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(cfg.out_dir.join("summary.csv"))?));
    let metric_names: Vec<String> = rows[0].means.iter().map(|(n, _)| n.clone()).collect();
    let mut header = vec!["grid_value".to_string(), "variant".to_string(), "seeds".to_string()];
    for n in &metric_names {
        header.push(n.clone());
        header.push(format!("{n}_delta"));
    }
    w.write_record(&header)?;
    for r in &rows {
        let mut rec = vec![r.grid_value.clone(), r.variant.clone(), r.seeds.to_string()];
        for (k, _) in metric_names.iter().enumerate() {
            rec.push(r.means.get(k).map(|m| format!("{:?}", m.1)).unwrap_or_default());
            rec.push(r.deltas.get(k).map(|d| format!("{:?}", d.1)).unwrap_or_default());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    write_json(&cfg.out_dir.join("summary.json"), &rows)?;
    Ok(rows)
}
