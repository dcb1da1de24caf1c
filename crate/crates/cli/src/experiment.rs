//! Experiment execution: per-seed training runs, metrics CSV and summary
//! JSON emission, parameter sweeps, and the baseline-ladder suite.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use vbda_core::data::{
    generate_digits_proxy, generate_nuisance_task, generate_rotated_moons, load_idx,
    LabeledDataset, TaskKind,
};
use vbda_core::rng::RngStream;
use vbda_core::training::{evaluate, train, MetricsRecord, TrainConfig};

use crate::config::{DigitsSource, ExperimentSpec, Method, Task, TaskSpec};

pub const METRICS_CSV_HEADER: &str =
    "step,l_cls,l_adv,l_ce,kl_s,kl_t,total,i_u_s,i_u_t,i_l_s,i_l_t_oracle,src_acc,tgt_acc,ms";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SeedOutcome {
    pub seed: u64,
    pub tgt_acc: f64,
    pub src_acc: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentSummary {
    pub method: String,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<SeedOutcome>,
    /// Mean target accuracy over seeds.
    pub mean: f64,
    /// Sample standard deviation (n-1) of target accuracy over seeds.
    pub std: f64,
    #[serde(skip)]
    pub csv_paths: Vec<PathBuf>,
}

pub fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, std)
}

/// Materialize the (source, target) pair for one run. Generated tasks
/// derive their data seed from both the spec's data seed and the run seed;
/// file-backed digits are the same bytes for every seed.
pub fn load_datasets(
    spec: &ExperimentSpec,
    run_seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    match &spec.task_spec {
        TaskSpec::Synthetic(s) => {
            let mut s = s.clone();
            s.seed = RngStream::new(s.seed).derive(run_seed).seed();
            match s.kind {
                TaskKind::NuisanceCorrelation => {
                    let pair = generate_nuisance_task(&s)?;
                    Ok((pair.source, pair.target))
                }
                TaskKind::RotatedMoons => Ok(generate_rotated_moons(&s)?),
            }
        }
        TaskSpec::Digits(DigitsSource::Proxy(d)) => {
            let mut d = d.clone();
            d.seed = RngStream::new(d.seed).derive(run_seed).seed();
            let (source, target) = generate_digits_proxy(&d)?;
            // The 28x28 source goes through the same area-average resample
            // load_idx applies, landing both domains at 16x16.
            Ok((source.to_dataset_16()?, target.to_dataset()?))
        }
        TaskSpec::Digits(DigitsSource::Idx {
            images_source,
            labels_source,
            images_target,
            labels_target,
            downsample_source,
            downsample_target,
            limit,
        }) => {
            let src = load_idx(images_source, labels_source, *downsample_source, *limit)?;
            let tgt = load_idx(images_target, labels_target, *downsample_target, *limit)?;
            Ok((src, tgt))
        }
    }
}

fn format_float(v: f64) -> String {
    // Shortest round-trip rendering keeps CSV aggregates recomputable
    // exactly.
    format!("{v}")
}

pub fn metrics_to_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for r in records {
        let b = &r.breakdown;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.step,
            format_float(b.l_cls),
            format_float(b.l_adv),
            format_float(b.l_ce),
            format_float(b.kl_s),
            format_float(b.kl_t),
            format_float(b.total),
            format_float(b.i_u_s),
            format_float(b.i_u_t),
            format_float(b.i_l_s),
            format_float(r.i_l_t_oracle),
            format_float(r.src_acc),
            format_float(r.tgt_acc),
            format_float(r.wall_ms),
        )
        .unwrap();
    }
    out
}

pub struct SeedRun {
    pub outcome: SeedOutcome,
    pub records: Vec<MetricsRecord>,
}

/// Train one seed of the spec and evaluate final accuracies.
pub fn run_seed(spec: &ExperimentSpec, seed: u64) -> Result<SeedRun> {
    let (source, target) = load_datasets(spec, seed)?;
    let config = TrainConfig {
        seed,
        ..spec.train.clone()
    };
    let (params, records) = train(&config, &source, &target)
        .map_err(|e| anyhow!("seed {seed}: {e}"))?;
    let mut eval_rng = RngStream::new(seed).derive(0xE7A1);
    let src_acc = evaluate(&params, &source, &mut eval_rng, true)?;
    let tgt_acc = evaluate(&params, &target, &mut eval_rng, true)?;
    Ok(SeedRun {
        outcome: SeedOutcome {
            seed,
            tgt_acc,
            src_acc,
        },
        records,
    })
}

/// Execute the spec once per seed (in parallel), writing one metrics CSV and
/// parameter checkpoint per seed plus the resolved config and a summary
/// JSON; returns the aggregate.
pub fn run_experiment(spec: &ExperimentSpec, out_root: &Path) -> Result<ExperimentSummary> {
    let dir = out_root.join(&spec.name);
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output dir {}", dir.display()))?;
    // Fail on an unwritable output location before any training starts.
    let probe = dir.join(".write-probe");
    std::fs::write(&probe, b"ok").with_context(|| format!("output dir {} not writable", dir.display()))?;
    std::fs::remove_file(&probe).ok();

    std::fs::write(dir.join("config.resolved.conf"), spec.to_config_string())?;

    let runs: Result<Vec<(u64, SeedRun, PathBuf)>> = spec
        .seeds
        .par_iter()
        .map(|&seed| {
            let run = run_seed(spec, seed)?;
            let seed_dir = dir.join(format!("seed_{seed}"));
            std::fs::create_dir_all(&seed_dir)?;
            let csv_path = seed_dir.join("metrics.csv");
            std::fs::write(&csv_path, metrics_to_csv(&run.records))?;
            Ok((seed, run, csv_path))
        })
        .collect();
    let mut runs = runs?;
    runs.sort_by_key(|(seed, _, _)| *seed);

    let per_seed: Vec<SeedOutcome> = runs.iter().map(|(_, r, _)| r.outcome.clone()).collect();
    let csv_paths: Vec<PathBuf> = runs.iter().map(|(_, _, p)| p.clone()).collect();
    let accs: Vec<f64> = per_seed.iter().map(|o| o.tgt_acc).collect();
    let (mean, std) = mean_and_sample_std(&accs);
    let summary = ExperimentSummary {
        method: spec.method.name().to_string(),
        seeds: spec.seeds.clone(),
        per_seed,
        mean,
        std,
        csv_paths,
    };
    let json = serde_json::to_string_pretty(&summary)?;
    std::fs::write(dir.join("summary.json"), json)?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    LambdaS,
    LambdaT,
    LambdaCe,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<SweepParam> {
        // Accept the Greek spelling as a convenience.
        let norm = s.replace('λ', "lambda").to_lowercase();
        Ok(match norm.as_str() {
            "lambda_s" => SweepParam::LambdaS,
            "lambda_t" => SweepParam::LambdaT,
            "lambda_ce" => SweepParam::LambdaCe,
            other => bail!("unknown sweep parameter {other:?} (lambda_s, lambda_t, lambda_ce)"),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::LambdaS => "lambda_s",
            SweepParam::LambdaT => "lambda_t",
            SweepParam::LambdaCe => "lambda_ce",
        }
    }

    fn allowed_for(&self, method: Method) -> bool {
        let short = self.name();
        match method {
            Method::SourceOnly => false,
            Method::Dann => false,
            Method::DannCe => short == "lambda_ce",
            Method::VibOnly => short != "lambda_ce",
            Method::Vbda => true,
        }
    }

    fn apply(&self, train: &mut TrainConfig, value: f64) {
        match self {
            SweepParam::LambdaS => train.lambda_s = value,
            SweepParam::LambdaT => train.lambda_t = value,
            SweepParam::LambdaCe => train.lambda_ce = value,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub mean: f64,
    pub std: f64,
}

pub fn sweep_to_csv(param: SweepParam, rows: &[SweepRow]) -> String {
    let mut out = String::from("param,value,mean_tgt_acc,std_tgt_acc\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            param.name(),
            format_float(r.value),
            format_float(r.mean),
            format_float(r.std)
        )
        .unwrap();
    }
    out
}

/// One experiment per value of the swept weight; emits `sweep.csv` plus the
/// per-value experiment directories.
pub fn run_sweep(
    base: &ExperimentSpec,
    param: SweepParam,
    values: &[f64],
    out_root: &Path,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        bail!("sweep requires at least one value");
    }
    if !param.allowed_for(base.method) {
        bail!(
            "parameter {} is forced to zero by method {}",
            param.name(),
            base.method.name()
        );
    }
    let sweep_dir = out_root.join(format!("{}_sweep_{}", base.name, param.name()));
    std::fs::create_dir_all(&sweep_dir)?;
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut spec = base.clone();
        spec.name = format!("value_{value}");
        param.apply(&mut spec.train, value);
        let summary = run_experiment(&spec, &sweep_dir)?;
        rows.push(SweepRow {
            value,
            mean: summary.mean,
            std: summary.std,
        });
    }
    std::fs::write(sweep_dir.join("sweep.csv"), sweep_to_csv(param, &rows))?;
    Ok(rows)
}

/// The baseline ladder on one task: source_only, dann, dann_ce, vib_only,
/// and the full method, with a shared seed list.
pub fn run_baseline_suite(
    task: Task,
    seeds: &[u64],
    out_root: &Path,
) -> Result<Vec<(Method, ExperimentSummary)>> {
    let mut results = Vec::new();
    for method in Method::ALL {
        let mut spec = ExperimentSpec::defaults(method, task);
        spec.seeds = seeds.to_vec();
        let summary = run_experiment(&spec, out_root)?;
        results.push((method, summary));
    }
    Ok(results)
}

pub fn format_suite_table(results: &[(Method, ExperimentSummary)]) -> String {
    let mut out = String::new();
    writeln!(out, "{:<12} {:>10} {:>10}", "method", "tgt_acc", "std").unwrap();
    for (method, summary) in results {
        writeln!(
            out,
            "{:<12} {:>10.4} {:>10.4}",
            method.name(),
            summary.mean,
            summary.std
        )
        .unwrap();
    }
    out
}
