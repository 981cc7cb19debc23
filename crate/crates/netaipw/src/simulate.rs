//! Structural simulation of treatments and outcomes on a network.
//!
//! Sampling runs in fixed stage order: confounders, confounder features,
//! treatments, treatment features, outcomes. Each random stage draws from
//! its own seed-derived stream, so regenerating any stage never disturbs the
//! draws of another and a master seed pins the whole dataset.

use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::graph::Network;
use crate::learn::{NuisanceTriple, OraclePredictor, Predictor, Propensity};
use crate::seeds::{self, tag};
use crate::spillover::{
    compute_x_features, compute_z_features, derive_dependency_graph, DependencyGraph, FeatureSpec,
    SignedNeighborMean,
};

type UnitSampler = Arc<dyn Fn(&mut dyn RngCore) -> Vec<f64> + Send + Sync>;
type NoiseSampler = Arc<dyn Fn(&mut dyn RngCore) -> f64 + Send + Sync>;
type NuisanceFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Outcome stage: additive noise around the regression value, or a Bernoulli
/// draw with the regression value as success probability.
#[derive(Clone)]
pub enum OutcomeModel {
    Continuous { noise: NoiseSampler },
    Binary,
}

/// A structural model over a network.
///
/// Per unit: confounder `C_i` from `sample_confounder`; treatment
/// `W_i ~ Bernoulli(propensity(C_i, Z_i))`; outcome from `g1(C_i, X_i)` when
/// treated and `g0(C_i, X_i)` otherwise, through the outcome model. Features
/// `X` and `Z` come from the attached spillover spec.
#[derive(Clone)]
pub struct SemSpec {
    pub confounder_dim: usize,
    pub sample_confounder: UnitSampler,
    pub propensity: NuisanceFn,
    pub g1: NuisanceFn,
    pub g0: NuisanceFn,
    pub outcome: OutcomeModel,
    pub features: Arc<dyn FeatureSpec>,
}

/// One simulated (or loaded) sample: the network, the dependency graph of
/// its feature spec, and per-unit data. Stored features always equal their
/// recomputation from `(w, c, network, features)`.
pub struct Dataset {
    pub network: Network,
    pub dep_graph: DependencyGraph,
    pub features: Arc<dyn FeatureSpec>,
    pub w: Vec<u8>,
    pub c: Array2<f64>,
    pub x: Array2<f64>,
    pub z: Array2<f64>,
    pub y: Vec<f64>,
}

/// One unit's observation.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitData {
    pub w: u8,
    pub c: Vec<f64>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub y: f64,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.w.len()
    }

    /// Confounder dimension.
    pub fn p(&self) -> usize {
        self.c.ncols()
    }

    /// Treatment-feature dimension.
    pub fn r(&self) -> usize {
        self.x.ncols()
    }

    /// Confounder-feature dimension.
    pub fn t(&self) -> usize {
        self.z.ncols()
    }

    pub fn unit(&self, i: usize) -> UnitData {
        UnitData {
            w: self.w[i],
            c: self.c.row(i).to_vec(),
            x: self.x.row(i).to_vec(),
            z: self.z.row(i).to_vec(),
            y: self.y[i],
        }
    }

    /// Design rows `[c | x]` for the outcome regressions.
    pub fn g_design(&self) -> Array2<f64> {
        hstack(&self.c, &self.x)
    }

    /// Design rows `[c | z]` for the propensity regression.
    pub fn h_design(&self) -> Array2<f64> {
        hstack(&self.c, &self.z)
    }
}

fn hstack(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (n, pa) = a.dim();
    let pb = b.ncols();
    let mut out = Array2::zeros((n, pa + pb));
    for i in 0..n {
        for j in 0..pa {
            out[(i, j)] = a[(i, j)];
        }
        for j in 0..pb {
            out[(i, pa + j)] = b[(i, j)];
        }
    }
    out
}

/// Draws confounders, features and treatments (everything but outcomes).
fn draw_cwxz(
    net: &Network,
    sem: &SemSpec,
    seed: u64,
) -> Result<(Array2<f64>, Array2<f64>, Vec<u8>, Array2<f64>)> {
    let n = net.n();
    let p = sem.confounder_dim;
    let mut rng_c = seeds::rng(seeds::derive(seed, tag::CONFOUNDER));
    let mut c = Array2::zeros((n, p));
    for i in 0..n {
        let row = (sem.sample_confounder)(&mut rng_c);
        if row.len() != p {
            return Err(Error::InvalidSem(format!(
                "confounder sampler returned {} values, declared {p}",
                row.len()
            )));
        }
        for (j, v) in row.into_iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::InvalidSem(format!("non-finite confounder at unit {i}")));
            }
            c[(i, j)] = v;
        }
    }

    let z = compute_z_features(net, sem.features.as_ref(), c.view())?;

    let mut rng_w = seeds::rng(seeds::derive(seed, tag::TREATMENT));
    let mut w = vec![0u8; n];
    for i in 0..n {
        let ci = c.row(i).to_vec();
        let zi = z.row(i).to_vec();
        let h = (sem.propensity)(&ci, &zi);
        if !(h.is_finite() && h > 0.0 && h < 1.0) {
            return Err(Error::InvalidSem(format!(
                "propensity {h} at unit {i} outside (0, 1)"
            )));
        }
        w[i] = u8::from(rng_w.gen::<f64>() < h);
    }

    let x = compute_x_features(net, sem.features.as_ref(), &w, c.view())?;
    Ok((c, z, w, x))
}

/// Simulates a dataset. Deterministic given `seed`.
pub fn simulate(net: &Network, sem: &SemSpec, seed: u64) -> Result<Dataset> {
    let (c, z, w, x) = draw_cwxz(net, sem, seed)?;
    let n = net.n();
    let mut rng_y = seeds::rng(seeds::derive(seed, tag::OUTCOME));
    let mut y = vec![0.0f64; n];
    for i in 0..n {
        let ci = c.row(i).to_vec();
        let xi = x.row(i).to_vec();
        let reg = if w[i] == 1 { (sem.g1)(&ci, &xi) } else { (sem.g0)(&ci, &xi) };
        if !reg.is_finite() {
            return Err(Error::InvalidSem(format!("non-finite regression value at unit {i}")));
        }
        y[i] = match &sem.outcome {
            OutcomeModel::Continuous { noise } => {
                let e = noise(&mut rng_y);
                if !e.is_finite() {
                    return Err(Error::InvalidSem(format!("non-finite outcome noise at unit {i}")));
                }
                reg + e
            }
            OutcomeModel::Binary => {
                if !(0.0..=1.0).contains(&reg) {
                    return Err(Error::InvalidSem(format!(
                        "binary outcome mean {reg} at unit {i} outside [0, 1]"
                    )));
                }
                f64::from(rng_y.gen::<f64>() < reg)
            }
        };
    }

    let dep_graph = derive_dependency_graph(net, sem.features.as_ref());
    Ok(Dataset {
        network: net.clone(),
        dep_graph,
        features: sem.features.clone(),
        w,
        c,
        x,
        z,
        y,
    })
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// The benchmark structural model used throughout the simulation studies:
/// scalar uniform confounder, logistic self-selection, piecewise-constant
/// outcome regressions over the confounder and the signed neighbor-mean
/// spillover feature, and bounded uniform outcome noise with variance 0.01.
pub fn benchmark_sem() -> SemSpec {
    let half_width = 0.12f64.sqrt() / 2.0;
    SemSpec {
        confounder_dim: 1,
        sample_confounder: Arc::new(|rng: &mut dyn RngCore| vec![rng.gen::<f64>()]),
        propensity: Arc::new(|c: &[f64], _z: &[f64]| sigmoid(c[0] - 0.25)),
        g1: Arc::new(|c: &[f64], _x: &[f64]| benchmark_g1(c[0])),
        g0: Arc::new(|c: &[f64], x: &[f64]| benchmark_g0(c[0], x[0])),
        outcome: OutcomeModel::Continuous {
            noise: Arc::new(move |rng: &mut dyn RngCore| rng.gen_range(-half_width..half_width)),
        },
        features: Arc::new(SignedNeighborMean),
    }
}

/// Treated-outcome regression of the benchmark model; depends on the
/// confounder only.
pub fn benchmark_g1(c: f64) -> f64 {
    if c >= 0.7 {
        4.0
    } else if c >= 0.5 {
        1.5
    } else {
        2.5
    }
}

/// Control-outcome regression of the benchmark model over the confounder and
/// the spillover feature.
pub fn benchmark_g0(c: f64, x: f64) -> f64 {
    match (c >= 0.4, x >= 0.2) {
        (true, true) => 0.5,
        (true, false) => -0.75,
        (false, true) => 0.25,
        (false, false) => -0.5,
    }
}

/// The true nuisances of a structural model, wrapped as predictors over the
/// same design-row layout the estimator uses: `[c | x]` for the outcome
/// regressions, `[c | z]` for the propensity.
pub fn oracle_nuisances(sem: &SemSpec) -> NuisanceTriple {
    let p = sem.confounder_dim;
    let wrap = |f: NuisanceFn| -> Box<dyn Predictor> {
        Box::new(OraclePredictor::from_fn(move |row: &[f64]| f(&row[..p], &row[p..])))
    };
    let h = sem.propensity.clone();
    NuisanceTriple {
        g1: wrap(sem.g1.clone()),
        g0: wrap(sem.g0.clone()),
        h: Propensity::Fitted {
            model: Box::new(OraclePredictor::from_fn(move |row: &[f64]| {
                h(&row[..p], &row[p..])
            })),
            eps: 1e-12,
        },
    }
}

/// Monte Carlo estimate of the population effect
/// `(1/N) sum_i E[g1(C_i, X_i) - g0(C_i, X_i)]` for a structural model on a
/// fixed network: redraws confounders, treatments and features `reps` times
/// and averages. Returns the estimate and its Monte Carlo standard error.
pub fn true_eate_oracle(net: &Network, sem: &SemSpec, reps: usize, seed: u64) -> Result<(f64, f64)> {
    if reps < 100 {
        return Err(Error::InvalidParameter(format!(
            "effect oracle needs at least 100 repetitions, got {reps}"
        )));
    }
    let n = net.n();
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    for rep in 0..reps {
        let (c, _z, _w, x) = draw_cwxz(net, sem, seeds::derive2(seed, tag::ORACLE, rep as u64))?;
        let mut acc = 0.0;
        for i in 0..n {
            let ci = c.row(i).to_vec();
            let xi = x.row(i).to_vec();
            acc += (sem.g1)(&ci, &xi) - (sem.g0)(&ci, &xi);
        }
        let v = acc / n as f64;
        sum += v;
        sumsq += v * v;
    }
    let mean = sum / reps as f64;
    let var = (sumsq / reps as f64 - mean * mean).max(0.0) / (reps as f64 - 1.0) * reps as f64;
    Ok((mean, (var / reps as f64).sqrt()))
}

/// Raw dataset columns as read from disk, before attachment to a network.
pub struct RawDataset {
    pub w: Vec<u8>,
    pub c: Array2<f64>,
    pub x: Array2<f64>,
    pub z: Array2<f64>,
    pub y: Vec<f64>,
}

impl RawDataset {
    pub fn n(&self) -> usize {
        self.w.len()
    }
}

/// Renders the dataset as comma-separated text with header
/// `unit,w,c_1..c_p,x_1..x_r,z_1..z_t,y`. Units are 1-indexed; floats carry
/// 17 significant digits and parse back to the identical bits.
pub fn render_dataset(ds: &Dataset) -> String {
    use std::fmt::Write as _;
    let (p, r, t) = (ds.p(), ds.r(), ds.t());
    let mut out = String::new();
    out.push_str("unit,w");
    for j in 0..p {
        write!(out, ",c_{}", j + 1).unwrap();
    }
    for j in 0..r {
        write!(out, ",x_{}", j + 1).unwrap();
    }
    for j in 0..t {
        write!(out, ",z_{}", j + 1).unwrap();
    }
    out.push_str(",y\n");
    for i in 0..ds.n() {
        write!(out, "{},{}", i + 1, ds.w[i]).unwrap();
        for j in 0..p {
            write!(out, ",{:.16e}", ds.c[(i, j)]).unwrap();
        }
        for j in 0..r {
            write!(out, ",{:.16e}", ds.x[(i, j)]).unwrap();
        }
        for j in 0..t {
            write!(out, ",{:.16e}", ds.z[(i, j)]).unwrap();
        }
        writeln!(out, ",{:.16e}", ds.y[i]).unwrap();
    }
    out
}

/// Parses dataset text produced by [`render_dataset`].
pub fn parse_dataset(text: &str) -> Result<RawDataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse("empty dataset file".into()))?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    if cols.len() < 3 || cols[0] != "unit" || cols[1] != "w" || *cols.last().unwrap() != "y" {
        return Err(Error::Parse(format!("unrecognized dataset header {header:?}")));
    }
    let count_prefix = |prefix: &str| -> usize {
        cols.iter().filter(|c| {
            c.strip_prefix(prefix)
                .is_some_and(|rest| rest.parse::<usize>().is_ok())
        })
        .count()
    };
    let p = count_prefix("c_");
    let r = count_prefix("x_");
    let t = count_prefix("z_");
    if cols.len() != 3 + p + r + t {
        return Err(Error::Parse(format!("unrecognized dataset header {header:?}")));
    }

    let mut w = Vec::new();
    let mut c = Vec::new();
    let mut x = Vec::new();
    let mut z = Vec::new();
    let mut y = Vec::new();
    for (lineno, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse(format!(
                "dataset line {}: {} fields, expected {}",
                lineno + 1,
                fields.len(),
                cols.len()
            )));
        }
        let unit: usize = fields[0]
            .parse()
            .map_err(|_| Error::Parse(format!("dataset line {}: bad unit id", lineno + 1)))?;
        if unit != w.len() + 1 {
            return Err(Error::Parse(format!(
                "dataset line {}: unit {} out of order, expected {}",
                lineno + 1,
                unit,
                w.len() + 1
            )));
        }
        let wv: u8 = match fields[1] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::Parse(format!(
                    "dataset line {}: treatment {:?} not 0/1",
                    lineno + 1,
                    other
                )))
            }
        };
        w.push(wv);
        let parse_f = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|_| Error::Parse(format!("dataset line {}: bad float {s:?}", lineno + 1)))
        };
        let mut at = 2;
        for _ in 0..p {
            c.push(parse_f(fields[at])?);
            at += 1;
        }
        for _ in 0..r {
            x.push(parse_f(fields[at])?);
            at += 1;
        }
        for _ in 0..t {
            z.push(parse_f(fields[at])?);
            at += 1;
        }
        y.push(parse_f(fields[at])?);
    }
    let n = w.len();
    let shape = |data: Vec<f64>, cols: usize| -> Result<Array2<f64>> {
        Array2::from_shape_vec((n, cols), data)
            .map_err(|e| Error::Parse(format!("dataset shape: {e}")))
    };
    Ok(RawDataset { w, c: shape(c, p)?, x: shape(x, r)?, z: shape(z, t)?, y })
}

/// Attaches raw columns to a network and feature spec, deriving the
/// dependency graph and checking that the stored features equal their
/// recomputation bit for bit.
pub fn assemble_dataset(
    net: &Network,
    features: Arc<dyn FeatureSpec>,
    raw: RawDataset,
) -> Result<Dataset> {
    if raw.n() != net.n() {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {} units, network has {}",
            raw.n(),
            net.n()
        )));
    }
    if raw.x.ncols() != features.x_dim() || raw.z.ncols() != features.z_dim() {
        return Err(Error::DimensionMismatch(format!(
            "dataset features are {}x/{}z wide, spec {:?} declares {}x/{}z",
            raw.x.ncols(),
            raw.z.ncols(),
            features.name(),
            features.x_dim(),
            features.z_dim()
        )));
    }
    let x = compute_x_features(net, features.as_ref(), &raw.w, raw.c.view())?;
    let z = compute_z_features(net, features.as_ref(), raw.c.view())?;
    for i in 0..raw.n() {
        for j in 0..x.ncols() {
            if x[(i, j)].to_bits() != raw.x[(i, j)].to_bits() {
                return Err(Error::FeatureMismatch(i));
            }
        }
        for j in 0..z.ncols() {
            if z[(i, j)].to_bits() != raw.z[(i, j)].to_bits() {
                return Err(Error::FeatureMismatch(i));
            }
        }
    }
    let dep_graph = derive_dependency_graph(net, features.as_ref());
    Ok(Dataset {
        network: net.clone(),
        dep_graph,
        features,
        w: raw.w,
        c: raw.c,
        x: raw.x,
        z: raw.z,
        y: raw.y,
    })
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, render_dataset(ds))?;
    Ok(())
}

/// Reads a dataset file back against its network and feature spec.
pub fn read_dataset(path: &Path, net: &Network, features: Arc<dyn FeatureSpec>) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    assemble_dataset(net, features, parse_dataset(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{gen_erdos_renyi, new_network};

    fn empty_net(n: usize) -> Network {
        new_network(n, &[]).unwrap()
    }

    #[test]
    fn benchmark_regressions_match_hand_values() {
        assert_eq!(benchmark_g1(0.55), 1.5);
        assert_eq!(benchmark_g1(0.8), 4.0);
        assert_eq!(benchmark_g1(0.2), 2.5);
        assert_eq!(benchmark_g0(0.5, 0.1), -0.75);
        assert_eq!(benchmark_g0(0.3, 0.25), 0.25);
        assert_eq!(benchmark_g0(0.45, 0.3), 0.5);
        assert_eq!(benchmark_g0(0.1, 0.1), -0.5);
    }

    #[test]
    fn benchmark_propensity_at_center() {
        let sem = benchmark_sem();
        assert_eq!((sem.propensity)(&[0.25], &[]), 0.5);
    }

    #[test]
    fn simulate_respects_structural_bounds() {
        let net = gen_erdos_renyi(300, 0.01, 5).unwrap();
        let sem = benchmark_sem();
        let ds = simulate(&net, &sem, 42).unwrap();
        assert_eq!(ds.n(), 300);
        // Every propensity lies in [sigmoid(-0.25), sigmoid(0.75)].
        let lo = 1.0 / (1.0 + 0.25f64.exp());
        let hi = 1.0 / (1.0 + (-0.75f64).exp());
        assert!((lo - 0.4378).abs() < 1e-3 && (hi - 0.6792).abs() < 1e-3);
        for i in 0..ds.n() {
            let h = (sem.propensity)(&ds.c.row(i).to_vec(), &ds.z.row(i).to_vec());
            assert!(h >= lo && h <= hi);
            assert!(ds.c[(i, 0)] >= 0.0 && ds.c[(i, 0)] < 1.0);
            assert!(ds.w[i] <= 1);
        }
    }

    #[test]
    fn simulate_outcome_tracks_regression() {
        // Treated unit with c = 0.8 gets y = 4 + noise, |noise| < 0.1733.
        let sem = benchmark_sem();
        let half = 0.12f64.sqrt() / 2.0;
        let net = empty_net(200);
        let ds = simulate(&net, &sem, 7).unwrap();
        for i in 0..ds.n() {
            let c = ds.c[(i, 0)];
            let x = ds.x[(i, 0)];
            assert_eq!(x, 0.0);
            let reg = if ds.w[i] == 1 { benchmark_g1(c) } else { benchmark_g0(c, x) };
            assert!((ds.y[i] - reg).abs() < half + 1e-12, "unit {i}");
            if ds.w[i] == 1 && c >= 0.7 {
                assert!((ds.y[i] - 4.0).abs() < half + 1e-12);
            }
        }
    }

    #[test]
    fn simulate_is_deterministic_and_seed_sensitive() {
        let net = gen_erdos_renyi(50, 0.08, 1).unwrap();
        let sem = benchmark_sem();
        let a = simulate(&net, &sem, 9).unwrap();
        let b = simulate(&net, &sem, 9).unwrap();
        assert_eq!(a.w, b.w);
        assert_eq!(a.y, b.y);
        assert_eq!(a.c, b.c);
        let c = simulate(&net, &sem, 10).unwrap();
        assert!(a.y != c.y);
    }

    #[test]
    fn stored_features_match_recomputation() {
        let net = gen_erdos_renyi(80, 0.05, 2).unwrap();
        let sem = benchmark_sem();
        let ds = simulate(&net, &sem, 3).unwrap();
        let x = compute_x_features(&net, ds.features.as_ref(), &ds.w, ds.c.view()).unwrap();
        assert_eq!(ds.x, x);
    }

    #[test]
    fn binary_outcomes_are_zero_one() {
        let mut sem = benchmark_sem();
        sem.g1 = Arc::new(|c: &[f64], _x: &[f64]| 0.2 + 0.6 * c[0]);
        sem.g0 = Arc::new(|c: &[f64], _x: &[f64]| 0.1 + 0.3 * c[0]);
        sem.outcome = OutcomeModel::Binary;
        let net = gen_erdos_renyi(100, 0.03, 8).unwrap();
        let ds = simulate(&net, &sem, 4).unwrap();
        assert!(ds.y.iter().all(|&v| v == 0.0 || v == 1.0));
        assert!(ds.y.iter().any(|&v| v == 1.0));
    }

    #[test]
    fn invalid_models_are_rejected() {
        let net = empty_net(10);
        let mut sem = benchmark_sem();
        sem.propensity = Arc::new(|_c: &[f64], _z: &[f64]| 1.0);
        assert!(matches!(simulate(&net, &sem, 0), Err(Error::InvalidSem(_))));

        let mut sem = benchmark_sem();
        sem.outcome = OutcomeModel::Binary; // g1 values exceed 1
        assert!(matches!(simulate(&net, &sem, 0), Err(Error::InvalidSem(_))));

        let mut sem = benchmark_sem();
        sem.sample_confounder = Arc::new(|rng: &mut dyn RngCore| vec![rng.gen::<f64>(), 1.0]);
        assert!(matches!(simulate(&net, &sem, 0), Err(Error::InvalidSem(_))));
    }

    #[test]
    fn oracle_nuisances_evaluate_truth() {
        let sem = benchmark_sem();
        let eta = oracle_nuisances(&sem);
        // Rows are [c | x] for outcomes, [c | z] for the propensity (t = 0).
        assert_eq!(eta.g1.predict_row(&[0.55, 0.0]), 1.5);
        assert_eq!(eta.g0.predict_row(&[0.5, 0.1]), -0.75);
        assert_eq!(eta.g0.predict_row(&[0.3, 0.25]), 0.25);
        assert_eq!(eta.h.value_row(&[0.25]), 0.5);
    }

    #[test]
    fn effect_oracle_on_empty_network_matches_hand_integral() {
        // Isolated units: E[g1] = 2.75, X = 0 so E[g0] = 0.6 * (-0.75) +
        // 0.4 * (-0.5) = -0.65, effect 3.40.
        let net = empty_net(400);
        let sem = benchmark_sem();
        let (theta, se) = true_eate_oracle(&net, &sem, 400, 11).unwrap();
        assert!(se < 0.01, "se = {se}");
        assert!((theta - 3.40).abs() < 4.0 * se + 0.01, "theta = {theta}");
    }

    #[test]
    fn effect_oracle_requires_enough_reps() {
        let net = empty_net(5);
        assert!(matches!(
            true_eate_oracle(&net, &benchmark_sem(), 50, 0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn dataset_text_round_trips_bit_exactly() {
        let net = gen_erdos_renyi(60, 0.06, 13).unwrap();
        let sem = benchmark_sem();
        let ds = simulate(&net, &sem, 21).unwrap();
        let text = render_dataset(&ds);
        let raw = parse_dataset(&text).unwrap();
        let back = assemble_dataset(&net, ds.features.clone(), raw).unwrap();
        assert_eq!(ds.w, back.w);
        assert_eq!(ds.c, back.c);
        assert_eq!(ds.x, back.x);
        assert_eq!(ds.z, back.z);
        assert_eq!(ds.y, back.y);
        assert_eq!(render_dataset(&back), text);
    }

    #[test]
    fn dataset_header_shape() {
        let net = empty_net(2);
        let ds = simulate(&net, &benchmark_sem(), 1).unwrap();
        let text = render_dataset(&ds);
        assert!(text.starts_with("unit,w,c_1,x_1,y\n"), "{text}");
    }

    #[test]
    fn dataset_parser_rejects_corruption() {
        let net = empty_net(4);
        let ds = simulate(&net, &benchmark_sem(), 2).unwrap();
        let text = render_dataset(&ds);

        let broken = text.replace("unit,w", "id,w");
        assert!(matches!(parse_dataset(&broken), Err(Error::Parse(_))));

        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        assert!(lines[2].starts_with("2,"));
        lines[2].replace_range(..2, "9,"); // unit id out of order
        assert!(matches!(parse_dataset(&lines.join("\n")), Err(Error::Parse(_))));

        // Tampered feature no longer matches recomputation.
        let mut raw = parse_dataset(&text).unwrap();
        raw.x[(1, 0)] += 0.5;
        assert!(matches!(
            assemble_dataset(&net, ds.features.clone(), raw),
            Err(Error::FeatureMismatch(1))
        ));

        // Wrong network size.
        let raw = parse_dataset(&text).unwrap();
        assert!(matches!(
            assemble_dataset(&empty_net(5), ds.features.clone(), raw),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn confounder_stage_is_stable_across_outcome_model() {
        // Changing a later stage never reorders earlier draws.
        let net = gen_erdos_renyi(40, 0.1, 17).unwrap();
        let mut sem = benchmark_sem();
        let a = simulate(&net, &sem, 5).unwrap();
        sem.g1 = Arc::new(|c: &[f64], _x: &[f64]| 0.9 * c[0]);
        sem.g0 = Arc::new(|_c: &[f64], _x: &[f64]| 0.05);
        sem.outcome = OutcomeModel::Binary;
        let b = simulate(&net, &sem, 5).unwrap();
        assert_eq!(a.c, b.c);
        assert_eq!(a.w, b.w);
    }
}
