use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use vbda_cli::config::{parse_config, ExperimentSpec, Method, Task};
use vbda_cli::experiment::{
    format_suite_table, run_baseline_suite, run_experiment, run_sweep, SweepParam,
};
use vbda_core::data::{generate_digits_proxy, write_idx_images, write_idx_labels, DigitsProxySpec};

#[derive(Parser)]
#[command(
    name = "vbda",
    about = "Variational bottleneck domain adaptation lab: train, sweep, and compare baselines on synthetic and digit tasks"
)]
struct Cli {
    /// Print the fully resolved default configuration for every task and exit.
    #[arg(long, global = true)]
    print_defaults: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args)]
struct CommonRunArgs {
    /// Output directory root (overrides `out` from the config; default `runs`).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Replace the config's seed list with a single seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a config file, once per seed.
    Run {
        config: PathBuf,
        #[command(flatten)]
        common: CommonRunArgs,
    },
    /// Sweep one loss weight over a list of values.
    Sweep {
        config: PathBuf,
        /// One of lambda_s, lambda_t, lambda_ce.
        #[arg(long)]
        param: String,
        /// Comma-separated values, e.g. 1e-2,1e-3,1e-4,1e-5.
        #[arg(long)]
        values: String,
        #[command(flatten)]
        common: CommonRunArgs,
    },
    /// Named experiment suites.
    Suite {
        /// Currently: `baselines` (the full method ladder on one task).
        name: String,
        /// Task for the suite: nuisance, moons, or digits.
        #[arg(long, default_value = "nuisance")]
        task: String,
        /// Comma-separated seed list.
        #[arg(long, default_value = "0,1,2,3,4")]
        seeds: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the procedural digit-pair as IDX files (MNIST-like 28x28
    /// source, USPS-like 16x16 target).
    MakeDigits {
        #[arg(long)]
        out: PathBuf,
        /// Examples per domain.
        #[arg(long, default_value_t = 2000)]
        n: usize,
        /// Source-domain label/patch correlation.
        #[arg(long, default_value_t = 0.9)]
        rho: f64,
        #[arg(long, default_value_t = 11)]
        seed: u64,
    },
}

fn print_defaults() {
    for task in [Task::Nuisance, Task::Moons, Task::Digits] {
        println!("# ---- defaults: task = {} (method = vbda) ----", task.name());
        print!("{}", ExperimentSpec::defaults(Method::Vbda, task).to_config_string());
        println!();
    }
    println!("# Methods: source_only, dann, dann_ce, vib_only, vbda.");
    println!("# A method forces its unused weights to zero; setting them");
    println!("# non-zero in a config is an error.");
}

fn resolve_out(spec: &ExperimentSpec, cli_out: &Option<PathBuf>) -> PathBuf {
    cli_out
        .clone()
        .or_else(|| spec.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn parse_values(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("bad sweep value {v:?}"))
        })
        .collect()
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if cli.print_defaults {
        print_defaults();
        return Ok(());
    }
    let Some(command) = cli.command else {
        bail!("no command given; see --help or --print-defaults");
    };
    match command {
        Command::Run { config, common } => {
            let mut spec = parse_config(&config)?;
            if let Some(seed) = common.seed {
                spec.seeds = vec![seed];
            }
            let out = resolve_out(&spec, &common.out);
            let summary = run_experiment(&spec, &out)?;
            println!(
                "{}: target accuracy {:.4} +/- {:.4} over {} seeds -> {}",
                spec.name,
                summary.mean,
                summary.std,
                summary.seeds.len(),
                out.join(&spec.name).display()
            );
        }
        Command::Sweep {
            config,
            param,
            values,
            common,
        } => {
            let mut spec = parse_config(&config)?;
            if let Some(seed) = common.seed {
                spec.seeds = vec![seed];
            }
            let param = SweepParam::parse(&param)?;
            let values = parse_values(&values)?;
            let out = resolve_out(&spec, &common.out);
            let rows = run_sweep(&spec, param, &values, &out)?;
            println!("{:<12} {:>10} {:>10}", param.name(), "tgt_acc", "std");
            for row in rows {
                println!("{:<12} {:>10.4} {:>10.4}", row.value, row.mean, row.std);
            }
        }
        Command::Suite {
            name,
            task,
            seeds,
            out,
        } => {
            if name != "baselines" {
                bail!("unknown suite {name:?}; available: baselines");
            }
            let task = Task::parse(&task)?;
            let seeds: Vec<u64> = seeds
                .split(',')
                .map(|s| s.trim().parse::<u64>().context("bad seed"))
                .collect::<Result<_>>()?;
            let out = out.unwrap_or_else(|| PathBuf::from("runs"));
            let results = run_baseline_suite(task, &seeds, &out)?;
            print!("{}", format_suite_table(&results));
        }
        Command::MakeDigits { out, n, rho, seed } => {
            std::fs::create_dir_all(&out)?;
            let spec = DigitsProxySpec {
                n_per_domain: n,
                rho,
                ..DigitsProxySpec::default()
            };
            let spec = DigitsProxySpec { seed, ..spec };
            let (source, target) = generate_digits_proxy(&spec)?;
            write_idx_images(&out.join("source-images.idx"), &source.images, 28, 28)?;
            write_idx_labels(&out.join("source-labels.idx"), &source.labels)?;
            write_idx_images(&out.join("target-images.idx"), &target.images, 16, 16)?;
            write_idx_labels(&out.join("target-labels.idx"), &target.labels)?;
            println!(
                "wrote {} examples per domain to {}",
                n,
                out.display()
            );
        }
    }
    Ok(())
}
