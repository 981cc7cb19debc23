//! Batch simulation experiments over a grid of sample sizes.
//!
//! One experiment fixes a network family and density regime, then for each
//! sample size draws `reps` independent network/dataset pairs and runs the
//! configured estimators on each. Every estimator in a cell sees the same
//! data, so comparisons are paired. Results land in a flat CSV whose bytes
//! are a pure function of the configuration: rows are emitted in sorted
//! order and wall-clock time is never written into the file (progress and
//! timings go to stderr instead).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use crate::baselines::{hajek, ipw_crossfit};
use crate::error::{Error, Result};
use crate::estimate::{run_algorithm1, EstimateOptions, LearnerSet};
use crate::graph::{gen_erdos_renyi, gen_watts_strogatz, Network};
use crate::learn::{mean_learner, ForestConfig, RegressionLearner};
use crate::seeds::{self, tag};
use crate::simulate::{benchmark_sem, simulate, true_eate_oracle};
use crate::stats::{median, normal_quantile, sample_sd};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkKind {
    ErdosRenyi,
    WattsStrogatz,
}

impl NetworkKind {
    fn label(self) -> &'static str {
        match self {
            NetworkKind::ErdosRenyi => "er",
            NetworkKind::WattsStrogatz => "ws",
        }
    }
}

/// How the expected degree scales with the sample size: fixed at 3, or
/// growing like `3 n^(1/9)` (fast enough to stress the theory, slow enough
/// to keep it valid).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityMode {
    Const,
    Growth,
}

impl DensityMode {
    fn label(self) -> &'static str {
        match self {
            DensityMode::Const => "const",
            DensityMode::Growth => "growth",
        }
    }

    pub fn mean_degree(self, n: usize) -> f64 {
        match self {
            DensityMode::Const => 3.0,
            DensityMode::Growth => 3.0 * (n as f64).powf(1.0 / 9.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnerKind {
    Forest,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EstimatorKind {
    NetAipw,
    Hajek,
    Ipw,
}

impl EstimatorKind {
    fn label(self) -> &'static str {
        match self {
            EstimatorKind::NetAipw => "netaipw",
            EstimatorKind::Hajek => "hajek",
            EstimatorKind::Ipw => "ipw",
        }
    }
}

/// Fully resolved experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub network: NetworkKind,
    pub density: DensityMode,
    pub n_list: Vec<usize>,
    pub reps: usize,
    pub k: usize,
    pub b: usize,
    pub alpha: f64,
    pub trees: usize,
    pub min_node_size: usize,
    pub learner: LearnerKind,
    pub estimators: Vec<EstimatorKind>,
    pub seed: u64,
    pub ws_beta: f64,
    pub min_fit_size: usize,
    pub clip_eps: f64,
    pub out: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            network: NetworkKind::ErdosRenyi,
            density: DensityMode::Const,
            n_list: vec![625, 2500],
            reps: 200,
            k: 10,
            b: 10,
            alpha: 0.05,
            trees: 200,
            min_node_size: 5,
            learner: LearnerKind::Forest,
            estimators: vec![EstimatorKind::NetAipw, EstimatorKind::Hajek, EstimatorKind::Ipw],
            seed: 0,
            ws_beta: 0.05,
            min_fit_size: 50,
            clip_eps: 0.01,
            out: None,
        }
    }
}

impl ExperimentConfig {
    /// The heavier settings used for full study runs.
    pub fn paper_defaults() -> Self {
        ExperimentConfig { reps: 1000, b: 20, trees: 500, ..ExperimentConfig::default() }
    }
}

fn config_err(lineno: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {lineno}: {msg}"))
}

/// Parses a flat `key = value` configuration. Lines starting with `#` and
/// blank lines are skipped; unknown or repeated keys are errors. Keys not
/// present keep their defaults, which are the heavier study settings when
/// `paper_mode` is set.
pub fn parse_experiment_config(text: &str, paper_mode: bool) -> Result<ExperimentConfig> {
    let mut cfg = if paper_mode {
        ExperimentConfig::paper_defaults()
    } else {
        ExperimentConfig::default()
    };
    let mut seen: Vec<String> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| config_err(lineno, format!("expected key = value, got {line:?}")))?;
        let key = key.trim();
        let value = value.trim();
        if seen.iter().any(|k| k == key) {
            return Err(config_err(lineno, format!("key {key:?} repeated")));
        }
        seen.push(key.to_string());
        let parse_usize = |v: &str| -> Result<usize> {
            v.parse().map_err(|_| config_err(lineno, format!("bad integer {v:?} for {key}")))
        };
        let parse_f64 = |v: &str| -> Result<f64> {
            v.parse().map_err(|_| config_err(lineno, format!("bad number {v:?} for {key}")))
        };
        match key {
            "network" => {
                cfg.network = match value {
                    "er" => NetworkKind::ErdosRenyi,
                    "ws" => NetworkKind::WattsStrogatz,
                    other => return Err(config_err(lineno, format!("unknown network {other:?}"))),
                }
            }
            "density" => {
                cfg.density = match value {
                    "const" => DensityMode::Const,
                    "growth" => DensityMode::Growth,
                    other => return Err(config_err(lineno, format!("unknown density {other:?}"))),
                }
            }
            "n_list" => {
                let mut ns = Vec::new();
                for tok in value.split(',') {
                    ns.push(parse_usize(tok.trim())?);
                }
                if ns.is_empty() {
                    return Err(config_err(lineno, "n_list is empty"));
                }
                cfg.n_list = ns;
            }
            "reps" => cfg.reps = parse_usize(value)?,
            "k" => cfg.k = parse_usize(value)?,
            "b" => cfg.b = parse_usize(value)?,
            "alpha" => cfg.alpha = parse_f64(value)?,
            "trees" => cfg.trees = parse_usize(value)?,
            "min_node_size" => cfg.min_node_size = parse_usize(value)?,
            "min_fit_size" => cfg.min_fit_size = parse_usize(value)?,
            "clip_eps" => cfg.clip_eps = parse_f64(value)?,
            "learner" => {
                cfg.learner = match value {
                    "forest" => LearnerKind::Forest,
                    "mean" => LearnerKind::Mean,
                    other => return Err(config_err(lineno, format!("unknown learner {other:?}"))),
                }
            }
            "estimators" => {
                let mut es = Vec::new();
                for tok in value.split(',') {
                    es.push(match tok.trim() {
                        "netaipw" => EstimatorKind::NetAipw,
                        "hajek" => EstimatorKind::Hajek,
                        "ipw" => EstimatorKind::Ipw,
                        other => {
                            return Err(config_err(lineno, format!("unknown estimator {other:?}")))
                        }
                    });
                }
                if es.is_empty() {
                    return Err(config_err(lineno, "estimators is empty"));
                }
                cfg.estimators = es;
            }
            "seed" => {
                cfg.seed = value
                    .parse()
                    .map_err(|_| config_err(lineno, format!("bad seed {value:?}")))?;
            }
            "ws_beta" => cfg.ws_beta = parse_f64(value)?,
            "out" => cfg.out = Some(value.to_string()),
            other => return Err(config_err(lineno, format!("unknown key {other:?}"))),
        }
    }
    if cfg.reps == 0 {
        return Err(Error::Config("reps must be positive".into()));
    }
    Ok(cfg)
}

/// Generates the experiment network for one cell.
pub fn gen_network(cfg: &ExperimentConfig, n: usize, net_seed: u64) -> Result<Network> {
    let degree = cfg.density.mean_degree(n);
    match cfg.network {
        NetworkKind::ErdosRenyi => gen_erdos_renyi(n, degree / n as f64, net_seed),
        NetworkKind::WattsStrogatz => {
            let k_side = ((degree / 2.0).round() as usize).max(1);
            gen_watts_strogatz(n, k_side, cfg.ws_beta, net_seed)
        }
    }
}

/// One estimator run on one simulated dataset.
#[derive(Debug, Clone)]
pub struct ResultRow {
    pub network: String,
    pub density_mode: String,
    pub n: usize,
    pub estimator: String,
    pub rep: usize,
    pub theta_hat: f64,
    pub sigma_hat: f64,
    pub p_value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub truth: f64,
    pub failed: bool,
}

fn learner_set(cfg: &ExperimentConfig) -> LearnerSet {
    match cfg.learner {
        LearnerKind::Forest => LearnerSet::shared(ForestConfig {
            n_trees: cfg.trees,
            min_node_size: cfg.min_node_size,
            ..ForestConfig::default()
        }),
        LearnerKind::Mean => LearnerSet::shared(mean_learner()),
    }
}

fn single_learner(cfg: &ExperimentConfig) -> Box<dyn RegressionLearner> {
    match cfg.learner {
        LearnerKind::Forest => Box::new(ForestConfig {
            n_trees: cfg.trees,
            min_node_size: cfg.min_node_size,
            ..ForestConfig::default()
        }),
        LearnerKind::Mean => Box::new(mean_learner()),
    }
}

/// Runs the full grid. Deterministic in `cfg`: cell seeds derive from the
/// master seed and the cell coordinates alone, and every estimator in a cell
/// scores the same dataset.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    let sem = benchmark_sem();
    let opts = EstimateOptions {
        k: cfg.k,
        b: cfg.b,
        alpha: cfg.alpha,
        clip_eps: cfg.clip_eps,
        min_fit_size: cfg.min_fit_size,
        ..EstimateOptions::default()
    };
    opts.validate()?;
    let learners = learner_set(cfg);
    let ipw_learner = single_learner(cfg);
    let mut rows = Vec::new();
    for (n_idx, &n) in cfg.n_list.iter().enumerate() {
        // First pass: run every estimator on every repetition, tracking the
        // narrowest main-estimator interval of the cell.
        let mut cell_min_halfwidth = f64::INFINITY;
        let mut rep_rows: Vec<Vec<ResultRow>> = Vec::with_capacity(cfg.reps);
        for rep in 0..cfg.reps {
            let started = Instant::now();
            let net_seed = seeds::derive3(cfg.seed, tag::NETWORK, n_idx as u64, rep as u64);
            let data_seed = seeds::derive3(cfg.seed, tag::DATA, n_idx as u64, rep as u64);
            let net = gen_network(cfg, n, net_seed)?;
            let data = simulate(&net, &sem, data_seed)?;

            let mut cell_rows = Vec::new();
            let mut netaipw_halfwidth = f64::NAN;
            for (e_idx, &est) in cfg.estimators.iter().enumerate() {
                let est_seed = seeds::derive(
                    seeds::derive3(cfg.seed, tag::ESTIMATOR, n_idx as u64, rep as u64),
                    e_idx as u64,
                );
                let mut row = ResultRow {
                    network: cfg.network.label().to_string(),
                    density_mode: cfg.density.label().to_string(),
                    n,
                    estimator: est.label().to_string(),
                    rep,
                    theta_hat: f64::NAN,
                    sigma_hat: f64::NAN,
                    p_value: f64::NAN,
                    ci_lo: f64::NAN,
                    ci_hi: f64::NAN,
                    truth: f64::NAN,
                    failed: false,
                };
                match est {
                    EstimatorKind::NetAipw => {
                        match run_algorithm1(&data, &learners, est_seed, &opts) {
                            Ok(report) => {
                                row.theta_hat = report.theta_hat;
                                row.sigma_hat = report.sigma_hat;
                                row.p_value = report.p_value;
                                row.ci_lo = report.ci.0;
                                row.ci_hi = report.ci.1;
                                if report.ci.1.is_finite() && report.ci.0.is_finite() {
                                    netaipw_halfwidth = 0.5 * (report.ci.1 - report.ci.0);
                                }
                            }
                            Err(
                                Error::CrossFitInfeasible { .. }
                                | Error::TooManyInfeasibleRuns { .. },
                            ) => row.failed = true,
                            Err(e) => return Err(e),
                        }
                    }
                    EstimatorKind::Hajek => match hajek(&data.w, &data.y) {
                        Ok(theta) => row.theta_hat = theta,
                        Err(Error::DegenerateArms) => row.failed = true,
                        Err(e) => return Err(e),
                    },
                    EstimatorKind::Ipw => {
                        match ipw_crossfit(&data, ipw_learner.as_ref(), est_seed, &opts) {
                            Ok(theta) => row.theta_hat = theta,
                            Err(Error::CrossFitInfeasible { .. }) => row.failed = true,
                            Err(e) => return Err(e),
                        }
                    }
                }
                cell_rows.push(row);
            }
            if netaipw_halfwidth.is_finite() {
                cell_min_halfwidth = cell_min_halfwidth.min(netaipw_halfwidth);
            }
            rep_rows.push(cell_rows);
            eprintln!(
                "cell n = {n} rep = {rep}: {:.1}s",
                started.elapsed().as_secs_f64()
            );
        }

        // Second pass: per-repetition truth from the effect oracle, with the
        // Monte Carlo error held under a tenth of the narrowest interval the
        // cell produced. Each repetition has its own network, so each needs
        // its own truth; the oracle repetition count doubles until the
        // target is met. 200 repetitions already land far below typical
        // targets for the benchmark model, the doubling is a safety net.
        let target = if cell_min_halfwidth.is_finite() {
            cell_min_halfwidth / 10.0
        } else {
            0.01
        };
        eprintln!("cell n = {n}: truth target mc_se < {target:.2e}");
        for (rep, cell_rows) in rep_rows.into_iter().enumerate() {
            let net_seed = seeds::derive3(cfg.seed, tag::NETWORK, n_idx as u64, rep as u64);
            let net = gen_network(cfg, n, net_seed)?;
            let oracle_seed = seeds::derive3(cfg.seed, tag::ORACLE, n_idx as u64, rep as u64);
            let mut oracle_reps = 200usize;
            let (mut truth, mut mc_se) = true_eate_oracle(&net, &sem, oracle_reps, oracle_seed)?;
            while mc_se > target && oracle_reps < 12_800 {
                oracle_reps *= 2;
                let out = true_eate_oracle(&net, &sem, oracle_reps, oracle_seed)?;
                truth = out.0;
                mc_se = out.1;
            }
            if mc_se > target {
                eprintln!(
                    "warning: effect oracle at n = {n}, rep = {rep} stopped at mc_se = {mc_se:.2e} (target {target:.2e})"
                );
            }
            for mut row in cell_rows {
                row.truth = truth;
                rows.push(row);
            }
        }
    }
    rows.sort_by(|a, b| {
        (a.n, &a.estimator, a.rep).cmp(&(b.n, &b.estimator, b.rep))
    });
    Ok(rows)
}

const CSV_HEADER: &str =
    "network,density_mode,n,estimator,rep,theta_hat,sigma_hat,p_value,ci_lo,ci_hi,truth,failed,seconds";

/// Renders result rows as CSV. The `seconds` column is always NaN: wall
/// time is observed, not part of the result, and keeping it out of the file
/// makes reruns byte-identical.
pub fn render_results_csv(rows: &[ResultRow]) -> String {
    let mut s = String::with_capacity(rows.len() * 96 + CSV_HEADER.len() + 1);
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},NaN",
            r.network,
            r.density_mode,
            r.n,
            r.estimator,
            r.rep,
            r.theta_hat,
            r.sigma_hat,
            r.p_value,
            r.ci_lo,
            r.ci_hi,
            r.truth,
            u8::from(r.failed),
        )
        .unwrap();
    }
    s
}

pub fn write_results_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    std::fs::write(path, render_results_csv(rows))?;
    Ok(())
}

/// Parses a results CSV produced by [`render_results_csv`].
pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        other => {
            return Err(Error::Parse(format!("unrecognized results header {other:?}")));
        }
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 13 {
            return Err(Error::Parse(format!(
                "results line {lineno}: {} fields, expected 13",
                f.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Parse(format!("results line {lineno}: bad number {s:?}")))
        };
        rows.push(ResultRow {
            network: f[0].to_string(),
            density_mode: f[1].to_string(),
            n: f[2]
                .parse()
                .map_err(|_| Error::Parse(format!("results line {lineno}: bad n {:?}", f[2])))?,
            estimator: f[3].to_string(),
            rep: f[4]
                .parse()
                .map_err(|_| Error::Parse(format!("results line {lineno}: bad rep {:?}", f[4])))?,
            theta_hat: num(f[5])?,
            sigma_hat: num(f[6])?,
            p_value: num(f[7])?,
            ci_lo: num(f[8])?,
            ci_hi: num(f[9])?,
            truth: num(f[10])?,
            failed: match f[11] {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Parse(format!(
                        "results line {lineno}: failed flag {other:?} not 0/1"
                    )))
                }
            },
        });
    }
    Ok(rows)
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    parse_results_csv(&std::fs::read_to_string(path)?)
}

/// Per-(network, density, n, estimator) aggregate of a results table.
#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub network: String,
    pub density_mode: String,
    pub n: usize,
    pub estimator: String,
    pub reps_ok: usize,
    pub failed: usize,
    pub median_bias: f64,
    /// Fraction of runs whose interval covered the truth. The main
    /// estimator uses its own per-run interval; baselines carry no variance
    /// estimate, so their intervals take the empirical spread over runs.
    pub coverage: f64,
    pub median_ci_len: f64,
}

/// Aggregates result rows. Baselines get oracle-width intervals centered at
/// each run's estimate, built from the empirical standard deviation over
/// runs at level `alpha`; that is a best case their real-world use could not
/// achieve, which makes the comparison conservative.
pub fn summarize(rows: &[ResultRow], alpha: f64) -> Result<Vec<SummaryRow>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} outside (0, 1)")));
    }
    let mut groups: BTreeMap<(String, String, usize, String), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.network.clone(), r.density_mode.clone(), r.n, r.estimator.clone()))
            .or_default()
            .push(r);
    }
    let q = normal_quantile(1.0 - alpha / 2.0);
    let mut out = Vec::new();
    for ((network, density_mode, n, estimator), group) in groups {
        let ok: Vec<&&ResultRow> = group.iter().filter(|r| !r.failed).collect();
        let failed = group.len() - ok.len();
        let biases: Vec<f64> = ok.iter().map(|r| r.theta_hat - r.truth).collect();
        let median_bias = if biases.is_empty() { f64::NAN } else { median(&biases) };
        let (coverage, median_ci_len) = if estimator == "netaipw" {
            let covered = ok
                .iter()
                .filter(|r| r.ci_lo <= r.truth && r.truth <= r.ci_hi)
                .count();
            let lens: Vec<f64> = ok
                .iter()
                .filter(|r| r.ci_lo.is_finite() && r.ci_hi.is_finite())
                .map(|r| r.ci_hi - r.ci_lo)
                .collect();
            let len = if lens.is_empty() { f64::NAN } else { median(&lens) };
            let cov = if ok.is_empty() { f64::NAN } else { covered as f64 / ok.len() as f64 };
            (cov, len)
        } else if ok.len() >= 2 {
            let thetas: Vec<f64> = ok.iter().map(|r| r.theta_hat).collect();
            let sd = sample_sd(&thetas);
            let covered = ok
                .iter()
                .filter(|r| (r.theta_hat - r.truth).abs() <= q * sd)
                .count();
            (covered as f64 / ok.len() as f64, 2.0 * q * sd)
        } else {
            (f64::NAN, f64::NAN)
        };
        out.push(SummaryRow {
            network,
            density_mode,
            n,
            estimator,
            reps_ok: ok.len(),
            failed,
            median_bias,
            coverage,
            median_ci_len,
        });
    }
    Ok(out)
}

pub fn render_summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from(
        "network,density_mode,n,estimator,reps_ok,failed,median_bias,coverage,median_ci_len\n",
    );
    for r in rows {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.network,
            r.density_mode,
            r.n,
            r.estimator,
            r.reps_ok,
            r.failed,
            r.median_bias,
            r.coverage,
            r.median_ci_len
        )
        .unwrap();
    }
    s
}

pub fn render_summary_table(rows: &[SummaryRow]) -> String {
    let mut s = String::new();
    writeln!(
        s,
        "{:<4} {:<8} {:>6} {:<9} {:>7} {:>6} {:>12} {:>9} {:>13}",
        "net", "density", "n", "estimator", "reps_ok", "failed", "median_bias", "coverage",
        "median_ci_len"
    )
    .unwrap();
    for r in rows {
        writeln!(
            s,
            "{:<4} {:<8} {:>6} {:<9} {:>7} {:>6} {:>12.5} {:>9.3} {:>13.4}",
            r.network,
            r.density_mode,
            r.n,
            r.estimator,
            r.reps_ok,
            r.failed,
            r.median_bias,
            r.coverage,
            r.median_ci_len
        )
        .unwrap();
    }
    s
}
