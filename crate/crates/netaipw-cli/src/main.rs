//! Batch interface: simulate datasets, estimate effects, run experiment
//! grids, and summarize result tables. Every command is deterministic in its
//! seed; timings and warnings go to stderr so redirected stdout stays clean.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use netaipw::bench::{
    parse_experiment_config, read_results_csv, render_summary_csv, render_summary_table,
    run_experiment, summarize, write_results_csv,
};
use netaipw::estimate::{run_algorithm1, EstimateOptions, EstimateReport, LearnerSet};
use netaipw::gate::{estimate_gate, InterventionVector};
use netaipw::graph::{gen_erdos_renyi, gen_watts_strogatz, new_network, read_edge_list, write_edge_list, Network};
use netaipw::learn::{mean_learner, ForestConfig};
use netaipw::simulate::{benchmark_sem, read_dataset, simulate, write_dataset};
use netaipw::spillover::feature_spec_by_name;

#[derive(Parser)]
#[command(name = "netaipw", version, about = "Treatment-effect estimation under network interference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a benchmark dataset on a generated network.
    Simulate(SimulateArgs),
    /// Estimate a unit-level or group-level effect from dataset files.
    Estimate(EstimateArgs),
    /// Run a simulation experiment grid from a config file.
    Bench(BenchArgs),
    /// Summarize a results CSV into per-cell aggregates.
    Summarize(SummarizeArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Number of units.
    #[arg(long)]
    n: usize,
    /// Network family: er, ws, or empty.
    #[arg(long, default_value = "er")]
    network: String,
    /// Expected mean degree for er; ring degree (rounded to 2k) for ws.
    #[arg(long, default_value_t = 3.0)]
    degree: f64,
    /// Rewiring probability for ws networks.
    #[arg(long, default_value_t = 0.05)]
    ws_beta: f64,
    /// Spillover feature specification by name.
    #[arg(long, default_value = "signed_neighbor_mean")]
    feature: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path for the dataset table.
    #[arg(long)]
    out_data: PathBuf,
    /// Output path for the network edge list.
    #[arg(long)]
    out_network: PathBuf,
}

#[derive(Args)]
struct EstimateArgs {
    /// Dataset table written by `simulate`.
    #[arg(long)]
    data: PathBuf,
    /// Edge list (1-indexed `i j` lines) for the dataset's network.
    #[arg(long)]
    network: PathBuf,
    /// Spillover feature the dataset was built with.
    #[arg(long, default_value = "signed_neighbor_mean")]
    feature: String,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 10)]
    b: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 200)]
    trees: usize,
    #[arg(long, default_value_t = 5)]
    min_node_size: usize,
    /// Nuisance learner: forest or mean.
    #[arg(long, default_value = "forest")]
    learner: String,
    /// Use this constant propensity instead of fitting one.
    #[arg(long)]
    known_propensity: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    clip_eps: f64,
    #[arg(long, default_value_t = 50)]
    min_fit_size: usize,
    /// Largest admissible joint-treatment neighborhood for group effects.
    #[arg(long, default_value_t = 20)]
    l_cap: usize,
    /// Estimate the group effect of this intervention instead of the unit
    /// effect: all-ones, all-zeros, or a path to a 0/1-per-line file.
    #[arg(long)]
    pi: Option<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment configuration file (`key = value` lines).
    #[arg(long)]
    config: PathBuf,
    /// Use the heavier full-study defaults for keys the config leaves unset.
    #[arg(long)]
    paper_mode: bool,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Results CSV produced by `bench`.
    #[arg(long)]
    results: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Emit CSV instead of an aligned table.
    #[arg(long)]
    csv: bool,
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Estimate(args) => cmd_estimate(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Summarize(args) => cmd_summarize(args),
    }
}

fn gen_cli_network(kind: &str, n: usize, degree: f64, ws_beta: f64, seed: u64) -> Result<Network> {
    Ok(match kind {
        "er" => gen_erdos_renyi(n, degree / n as f64, seed)?,
        "ws" => {
            let k_side = ((degree / 2.0).round() as usize).max(1);
            gen_watts_strogatz(n, k_side, ws_beta, seed)?
        }
        "empty" => new_network(n, &[])?,
        other => bail!("unknown network family {other:?} (expected er, ws, or empty)"),
    })
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let features = feature_spec_by_name(&args.feature)
        .with_context(|| format!("unknown feature {:?}", args.feature))?;
    let net = gen_cli_network(&args.network, args.n, args.degree, args.ws_beta, args.seed)?;
    let mut sem = benchmark_sem();
    sem.features = features;
    let data = simulate(&net, &sem, args.seed)?;
    write_edge_list(&net, &args.out_network)
        .with_context(|| format!("writing {}", args.out_network.display()))?;
    write_dataset(&data, &args.out_data)
        .with_context(|| format!("writing {}", args.out_data.display()))?;
    eprintln!(
        "simulated {} units, {} edges (feature {})",
        data.n(),
        net.edge_count(),
        data.features.name()
    );
    Ok(())
}

fn learners_from(learner: &str, trees: usize, min_node_size: usize) -> Result<LearnerSet> {
    Ok(match learner {
        "forest" => LearnerSet::shared(ForestConfig {
            n_trees: trees,
            min_node_size,
            ..ForestConfig::default()
        }),
        "mean" => LearnerSet::shared(mean_learner()),
        other => bail!("unknown learner {other:?} (expected forest or mean)"),
    })
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    let features = feature_spec_by_name(&args.feature)
        .with_context(|| format!("unknown feature {:?}", args.feature))?;
    let text = std::fs::read_to_string(&args.data)
        .with_context(|| format!("reading {}", args.data.display()))?;
    let n = text.lines().skip(1).filter(|l| !l.trim().is_empty()).count();
    let net = read_edge_list(&args.network, n)
        .with_context(|| format!("reading {}", args.network.display()))?;
    let data = read_dataset(&args.data, &net, features)
        .with_context(|| format!("reading {}", args.data.display()))?;

    let opts = EstimateOptions {
        k: args.k,
        b: args.b,
        alpha: args.alpha,
        clip_eps: args.clip_eps,
        min_fit_size: args.min_fit_size,
        l_cap: args.l_cap,
        known_propensity: args.known_propensity,
        ..EstimateOptions::default()
    };
    let learners = learners_from(&args.learner, args.trees, args.min_node_size)?;

    let report: EstimateReport = match &args.pi {
        None => run_algorithm1(&data, &learners, args.seed, &opts)?,
        Some(spec) => {
            let pi = match spec.as_str() {
                "all-ones" => InterventionVector::all_ones(data.n()),
                "all-zeros" => InterventionVector::all_zeros(data.n()),
                path => InterventionVector::read(std::path::Path::new(path))
                    .with_context(|| format!("reading intervention {path}"))?,
            };
            estimate_gate(&data, &learners, &pi, args.seed, &opts)?
        }
    };
    if report.diagnostics.d_max_warning {
        eprintln!(
            "warning: dependency degree {} exceeds n^(1/4); variance guarantees are thin",
            report.diagnostics.d_max
        );
    }
    print!("{}", report.render());
    Ok(())
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    let mut cfg = parse_experiment_config(&text, args.paper_mode)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results.csv"));
    let rows = run_experiment(&cfg)?;
    write_results_csv(&rows, &out).with_context(|| format!("writing {}", out.display()))?;
    let summary = summarize(&rows, cfg.alpha)?;
    print!("{}", render_summary_table(&summary));
    eprintln!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

fn cmd_summarize(args: SummarizeArgs) -> Result<()> {
    let rows = read_results_csv(&args.results)
        .with_context(|| format!("reading {}", args.results.display()))?;
    let summary = summarize(&rows, args.alpha)?;
    if args.csv {
        print!("{}", render_summary_csv(&summary));
    } else {
        print!("{}", render_summary_table(&summary));
    }
    Ok(())
}
