//! Regression learners for nuisance estimation.
//!
//! The workhorse is a bagged regression forest with variance-reduction
//! splits, grown fully in-crate so that split semantics, tie-breaking and
//! seeding stay fixed: fixed seed and row order give a bit-identical model.
//! Binary targets go through the same regression path; leaf means of 0/1
//! targets keep predictions inside [0, 1].

use ndarray::ArrayView2;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::seeds::{self, tag};

/// A fitted regression model.
pub trait Predictor: Send + Sync {
    fn predict_row(&self, row: &[f64]) -> f64;

    fn predict(&self, rows: ArrayView2<f64>) -> Vec<f64> {
        rows.outer_iter()
            .map(|r| match r.as_slice() {
                Some(s) => self.predict_row(s),
                None => self.predict_row(&r.to_vec()),
            })
            .collect()
    }
}

/// Fits predictors from feature rows and targets. `seed` fully determines
/// any randomness in the fit.
pub trait RegressionLearner: Send + Sync {
    fn fit(&self, x: ArrayView2<f64>, y: &[f64], seed: u64) -> Result<Box<dyn Predictor>>;
}

#[derive(Debug, Clone)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub min_node_size: usize,
    /// Candidate features per split; `None` means `max(1, q / 3)`.
    pub mtry: Option<usize>,
    /// Bootstrap sample size as a fraction of the training rows, sampled
    /// with replacement.
    pub bootstrap_fraction: f64,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 500,
            min_node_size: 5,
            mtry: None,
            bootstrap_fraction: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    /// Split feature, or -1 for a leaf.
    feature: i32,
    threshold: f64,
    left: u32,
    right: u32,
    value: f64,
}

#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            let node = &self.nodes[at];
            if node.feature < 0 {
                return node.value;
            }
            at = if row[node.feature as usize] <= node.threshold {
                node.left as usize
            } else {
                node.right as usize
            };
        }
    }
}

/// A fitted bagged regression forest; predictions average the trees.
#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<Tree>,
    n_features: usize,
}

impl Predictor for Forest {
    fn predict_row(&self, row: &[f64]) -> f64 {
        debug_assert_eq!(row.len(), self.n_features);
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
        sum / self.trees.len() as f64
    }
}

/// Grows a regression forest.
///
/// Each tree is grown on a bootstrap sample; every split maximizes variance
/// reduction over `mtry` uniformly drawn candidate features, with candidate
/// thresholds at midpoints between sorted distinct values. Ties go to the
/// lowest feature index, then the lowest threshold. Nodes at or below
/// `min_node_size` rows become leaves, as do pure nodes and nodes where no
/// candidate split reduces variance.
pub fn fit_random_forest(cfg: &ForestConfig, x: ArrayView2<f64>, y: &[f64]) -> Result<Forest> {
    let (n, q) = x.dim();
    if n < 2 {
        return Err(Error::TooFewSamples { got: n, need: 2 });
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "{} targets for {} feature rows",
            y.len(),
            n
        )));
    }
    if q == 0 {
        return Err(Error::InvalidParameter("forest needs at least one feature".into()));
    }
    if cfg.n_trees == 0 {
        return Err(Error::InvalidParameter("forest needs at least one tree".into()));
    }
    if cfg.min_node_size == 0 {
        return Err(Error::InvalidParameter("min_node_size must be at least 1".into()));
    }
    if !(cfg.bootstrap_fraction > 0.0 && cfg.bootstrap_fraction <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "bootstrap fraction {} outside (0, 1]",
            cfg.bootstrap_fraction
        )));
    }
    let mtry = cfg.mtry.unwrap_or_else(|| (q / 3).max(1));
    if mtry == 0 || mtry > q {
        return Err(Error::InvalidParameter(format!(
            "mtry {mtry} outside 1..={q}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput);
    }

    // Column-major value cache shared by all trees.
    let mut xcol = vec![0.0f64; n * q];
    for (i, row) in x.outer_iter().enumerate() {
        for (f, v) in row.iter().enumerate() {
            xcol[f * n + i] = *v;
        }
    }
    let m = ((cfg.bootstrap_fraction * n as f64).ceil() as usize).clamp(1, n);

    let trees: Vec<Tree> = (0..cfg.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeds::rng(seeds::derive2(cfg.seed, tag::TREE, t as u64));
            grow_tree(&xcol, y, n, q, m, mtry, cfg.min_node_size, &mut rng)
        })
        .collect();

    Ok(Forest { trees, n_features: q })
}

fn grow_tree(
    xcol: &[f64],
    y: &[f64],
    n: usize,
    q: usize,
    m: usize,
    mtry: usize,
    min_node_size: usize,
    rng: &mut impl Rng,
) -> Tree {
    // Bootstrap slots; per-slot caches keep the hot loops on flat arrays.
    let mut xv = vec![0.0f64; q * m];
    let mut ys = vec![0.0f64; m];
    for slot in 0..m {
        let row = rng.gen_range(0..n);
        ys[slot] = y[row];
        for f in 0..q {
            xv[f * m + slot] = xcol[f * n + row];
        }
    }

    // Per-feature slot order, kept sorted through stable partitions.
    let mut order = vec![0u32; q * m];
    for f in 0..q {
        let seg = &mut order[f * m..(f + 1) * m];
        for (k, s) in seg.iter_mut().enumerate() {
            *s = k as u32;
        }
        let vals = &xv[f * m..(f + 1) * m];
        seg.sort_unstable_by(|&a, &b| vals[a as usize].total_cmp(&vals[b as usize]));
    }

    let mut nodes: Vec<Node> = Vec::with_capacity(2 * m / min_node_size.max(1) + 1);
    let mut scratch = vec![0u32; m];
    let mut go_left = vec![false; m];
    let mut feat_pool: Vec<usize> = (0..q).collect();
    let mut candidates = vec![0usize; mtry];

    // Work items reference a slot range shared by every feature's order
    // segment. Children are pushed right-first so the left child is built
    // next; ids are patched into the parent as items are popped.
    struct Item {
        lo: usize,
        hi: usize,
        parent: u32,
        is_left: bool,
    }
    let mut stack = vec![Item { lo: 0, hi: m, parent: u32::MAX, is_left: false }];

    while let Some(Item { lo, hi, parent, is_left }) = stack.pop() {
        let node_id = nodes.len() as u32;
        if parent != u32::MAX {
            let p = &mut nodes[parent as usize];
            if is_left {
                p.left = node_id;
            } else {
                p.right = node_id;
            }
        }

        let size = hi - lo;
        let slots = &order[lo..hi]; // feature 0 segment as the canonical slot set
        let mut sum = 0.0;
        let mut y_min = f64::INFINITY;
        let mut y_max = f64::NEG_INFINITY;
        for &s in slots {
            let v = ys[s as usize];
            sum += v;
            y_min = y_min.min(v);
            y_max = y_max.max(v);
        }
        let mean = sum / size as f64;

        if size <= min_node_size || size < 2 || y_min == y_max {
            nodes.push(Node { feature: -1, threshold: 0.0, left: 0, right: 0, value: mean });
            continue;
        }

        // Draw mtry distinct candidate features, then scan them in ascending
        // order so gain ties resolve to the lowest feature index.
        for pick in 0..mtry {
            let j = rng.gen_range(pick..q);
            feat_pool.swap(pick, j);
            candidates[pick] = feat_pool[pick];
        }
        candidates.sort_unstable();

        let nf = size as f64;
        let mut best_score = sum * sum / nf; // no-split baseline
        let mut best: Option<(usize, f64, usize)> = None; // (feature, threshold, left count)
        for &f in candidates.iter() {
            let seg = &order[f * m + lo..f * m + hi];
            let vals = &xv[f * m..(f + 1) * m];
            let mut left_sum = 0.0;
            for k in 0..size - 1 {
                left_sum += ys[seg[k] as usize];
                let v1 = vals[seg[k] as usize];
                let v2 = vals[seg[k + 1] as usize];
                if v2 <= v1 {
                    continue;
                }
                let nl = (k + 1) as f64;
                let right_sum = sum - left_sum;
                let score = left_sum * left_sum / nl + right_sum * right_sum / (nf - nl);
                if score > best_score {
                    // Midpoint, nudged down if rounding lands on v2 so that
                    // `<= threshold` keeps v1 left and v2 right.
                    let mut thr = 0.5 * (v1 + v2);
                    if thr >= v2 {
                        thr = v1;
                    }
                    best_score = score;
                    best = Some((f, thr, k + 1));
                }
            }
        }

        let Some((split_f, threshold, n_left)) = best else {
            nodes.push(Node { feature: -1, threshold: 0.0, left: 0, right: 0, value: mean });
            continue;
        };

        // The winning feature's segment is sorted, so its first n_left slots
        // are exactly the left child.
        for &s in &order[split_f * m + lo..split_f * m + hi] {
            go_left[s as usize] = false;
        }
        for &s in &order[split_f * m + lo..split_f * m + lo + n_left] {
            go_left[s as usize] = true;
        }
        for f in 0..q {
            let seg = &mut order[f * m + lo..f * m + hi];
            scratch[..size].copy_from_slice(seg);
            let mut at = 0;
            for &s in &scratch[..size] {
                if go_left[s as usize] {
                    seg[at] = s;
                    at += 1;
                }
            }
            debug_assert_eq!(at, n_left);
            for &s in &scratch[..size] {
                if !go_left[s as usize] {
                    seg[at] = s;
                    at += 1;
                }
            }
        }

        nodes.push(Node { feature: split_f as i32, threshold, left: 0, right: 0, value: mean });
        stack.push(Item { lo: lo + n_left, hi, parent: node_id, is_left: false });
        stack.push(Item { lo, hi: lo + n_left, parent: node_id, is_left: true });
    }

    Tree { nodes }
}

impl RegressionLearner for ForestConfig {
    fn fit(&self, x: ArrayView2<f64>, y: &[f64], seed: u64) -> Result<Box<dyn Predictor>> {
        let cfg = ForestConfig { seed, ..self.clone() };
        Ok(Box::new(fit_random_forest(&cfg, x, y)?))
    }
}

/// Predicts the training-target mean everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct MeanLearner;

/// Returns the mean learner: a baseline that ignores features.
pub fn mean_learner() -> MeanLearner {
    MeanLearner
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantPredictor(pub f64);

impl Predictor for ConstantPredictor {
    fn predict_row(&self, _row: &[f64]) -> f64 {
        self.0
    }
}

impl RegressionLearner for MeanLearner {
    fn fit(&self, x: ArrayView2<f64>, y: &[f64], _seed: u64) -> Result<Box<dyn Predictor>> {
        if y.is_empty() {
            return Err(Error::TooFewSamples { got: 0, need: 1 });
        }
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} targets for {} feature rows",
                y.len(),
                x.nrows()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Box::new(ConstantPredictor(y.iter().sum::<f64>() / y.len() as f64)))
    }
}

type RowFn = std::sync::Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Evaluates a fixed function of the feature row; fitting ignores the data.
#[derive(Clone)]
pub struct OracleLearner {
    f: RowFn,
}

/// Wraps a known regression function as a learner, for plugging ground truth
/// (or deliberately corrupted truth) into pipelines that expect to fit.
pub fn oracle_learner(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> OracleLearner {
    OracleLearner { f: std::sync::Arc::new(f) }
}

#[derive(Clone)]
pub struct OraclePredictor {
    f: RowFn,
}

impl OraclePredictor {
    pub fn from_fn(f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        OraclePredictor { f: std::sync::Arc::new(f) }
    }
}

impl Predictor for OraclePredictor {
    fn predict_row(&self, row: &[f64]) -> f64 {
        (self.f)(row)
    }
}

impl RegressionLearner for OracleLearner {
    fn fit(&self, _x: ArrayView2<f64>, _y: &[f64], _seed: u64) -> Result<Box<dyn Predictor>> {
        Ok(Box::new(OraclePredictor { f: self.f.clone() }))
    }
}

/// Clips a propensity into `[eps, 1 - eps]`. `eps` must lie strictly between
/// 0 and 0.5.
pub fn clip_propensity(e: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 0.5) {
        return Err(Error::InvalidEps(eps));
    }
    Ok(e.clamp(eps, 1.0 - eps))
}

/// Propensity component of a nuisance triple: a known constant, or a fitted
/// model whose outputs are clipped into `[eps, 1 - eps]` at evaluation.
pub enum Propensity {
    Known(f64),
    Fitted { model: Box<dyn Predictor>, eps: f64 },
}

impl Propensity {
    pub fn value_row(&self, row: &[f64]) -> f64 {
        match self {
            Propensity::Known(p) => *p,
            Propensity::Fitted { model, eps } => model.predict_row(row).clamp(*eps, 1.0 - *eps),
        }
    }

    /// Propensities for each row, plus a per-row flag marking values that
    /// clipping actually moved.
    pub fn values_flagged(&self, rows: ArrayView2<f64>) -> (Vec<f64>, Vec<bool>) {
        match self {
            Propensity::Known(p) => (vec![*p; rows.nrows()], vec![false; rows.nrows()]),
            Propensity::Fitted { model, eps } => {
                let raw = model.predict(rows);
                let mut flags = vec![false; raw.len()];
                let vals = raw
                    .into_iter()
                    .enumerate()
                    .map(|(i, v)| {
                        let c = v.clamp(*eps, 1.0 - *eps);
                        flags[i] = c != v;
                        c
                    })
                    .collect();
                (vals, flags)
            }
        }
    }

    /// Propensities for each row, plus the count of values that clipping
    /// actually moved.
    pub fn values(&self, rows: ArrayView2<f64>) -> (Vec<f64>, usize) {
        let (vals, flags) = self.values_flagged(rows);
        let clipped = flags.iter().filter(|&&f| f).count();
        (vals, clipped)
    }
}

/// Fitted nuisances for one cross-fitting complement: outcome regressions
/// for the treated and control arms over `[c | x]` rows, and the propensity
/// over `[c | z]` rows.
pub struct NuisanceTriple {
    pub g1: Box<dyn Predictor>,
    pub g0: Box<dyn Predictor>,
    pub h: Propensity,
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2};
    use rand::Rng;

    fn uniform_matrix(n: usize, q: usize, seed: u64) -> Array2<f64> {
        let mut rng = crate::seeds::rng(seed);
        Array2::from_shape_fn((n, q), |_| rng.gen::<f64>())
    }

    #[test]
    fn mean_learner_predicts_mean() {
        let x = Array2::zeros((2, 1));
        let model = mean_learner().fit(x.view(), &[1.0, 3.0], 0).unwrap();
        assert_eq!(model.predict_row(&[10.0]), 2.0);
    }

    #[test]
    fn mean_learner_rejects_empty() {
        let x = Array2::zeros((0, 1));
        assert!(matches!(
            mean_learner().fit(x.view(), &[], 0),
            Err(Error::TooFewSamples { got: 0, need: 1 })
        ));
    }

    #[test]
    fn oracle_learner_ignores_data() {
        let x = uniform_matrix(5, 2, 1);
        let model = oracle_learner(|row| row[0] * 2.0).fit(x.view(), &[0.0; 5], 9).unwrap();
        assert_eq!(model.predict_row(&[3.0, 100.0]), 6.0);
    }

    #[test]
    fn clip_propensity_examples() {
        assert_eq!(clip_propensity(0.001, 0.01).unwrap(), 0.01);
        assert_eq!(clip_propensity(0.9999, 0.01).unwrap(), 0.99);
        assert_eq!(clip_propensity(0.4, 0.01).unwrap(), 0.4);
        assert!(matches!(clip_propensity(0.5, 0.0), Err(Error::InvalidEps(_))));
        assert!(matches!(clip_propensity(0.5, 0.5), Err(Error::InvalidEps(_))));
    }

    #[test]
    fn forest_validates_inputs() {
        let cfg = ForestConfig::default();
        let x = uniform_matrix(10, 2, 2);
        let y = vec![0.0; 10];
        assert!(matches!(
            fit_random_forest(&cfg, x.slice(ndarray::s![0..1, ..]), &y[0..1]),
            Err(Error::TooFewSamples { .. })
        ));
        let mut bad = y.clone();
        bad[3] = f64::NAN;
        assert!(matches!(fit_random_forest(&cfg, x.view(), &bad), Err(Error::NonFiniteInput)));
        assert!(matches!(
            fit_random_forest(&cfg, x.view(), &y[0..5]),
            Err(Error::DimensionMismatch(_))
        ));
        let zero_trees = ForestConfig { n_trees: 0, ..ForestConfig::default() };
        assert!(matches!(
            fit_random_forest(&zero_trees, x.view(), &y),
            Err(Error::InvalidParameter(_))
        ));
        let bad_mtry = ForestConfig { mtry: Some(3), ..ForestConfig::default() };
        assert!(matches!(
            fit_random_forest(&bad_mtry, x.view(), &y),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn forest_is_deterministic_for_fixed_seed() {
        let x = uniform_matrix(200, 3, 3);
        let mut rng = crate::seeds::rng(4);
        let y: Vec<f64> = x.outer_iter().map(|r| r[0] + rng.gen::<f64>() * 0.1).collect();
        let cfg = ForestConfig { n_trees: 30, seed: 42, ..ForestConfig::default() };
        let a = fit_random_forest(&cfg, x.view(), &y).unwrap();
        let b = fit_random_forest(&cfg, x.view(), &y).unwrap();
        let probe = uniform_matrix(50, 3, 5);
        assert_eq!(a.predict(probe.view()), b.predict(probe.view()));

        let other = ForestConfig { seed: 43, ..cfg };
        let c = fit_random_forest(&other, x.view(), &y).unwrap();
        assert_ne!(a.predict(probe.view()), c.predict(probe.view()));
    }

    #[test]
    fn forest_recovers_identity_on_one_feature() {
        // Held-out MSE against y = x on 1000 train rows.
        let n = 1000;
        let x = uniform_matrix(n, 1, 6);
        let y: Vec<f64> = x.column(0).to_vec();
        let cfg = ForestConfig { n_trees: 100, seed: 1, ..ForestConfig::default() };
        let model = fit_random_forest(&cfg, x.view(), &y).unwrap();
        let probe = uniform_matrix(400, 1, 7);
        let pred = model.predict(probe.view());
        let mse: f64 = probe
            .column(0)
            .iter()
            .zip(&pred)
            .map(|(t, p)| (t - p) * (t - p))
            .sum::<f64>()
            / 400.0;
        assert!(mse < 0.01, "mse = {mse}");
    }

    #[test]
    fn forest_constant_target_predicts_constant() {
        let x = uniform_matrix(50, 2, 8);
        let y = vec![2.5; 50];
        let cfg = ForestConfig { n_trees: 10, seed: 0, ..ForestConfig::default() };
        let model = fit_random_forest(&cfg, x.view(), &y).unwrap();
        for row in uniform_matrix(20, 2, 9).outer_iter() {
            assert_eq!(model.predict_row(row.as_slice().unwrap()), 2.5);
        }
    }

    #[test]
    fn forest_binary_targets_stay_in_unit_interval() {
        let n = 400;
        let x = uniform_matrix(n, 2, 10);
        let mut rng = crate::seeds::rng(11);
        let y: Vec<f64> = x
            .outer_iter()
            .map(|r| if rng.gen::<f64>() < 0.3 + 0.4 * r[0] { 1.0 } else { 0.0 })
            .collect();
        let cfg = ForestConfig { n_trees: 60, seed: 3, ..ForestConfig::default() };
        let model = fit_random_forest(&cfg, x.view(), &y).unwrap();
        for row in uniform_matrix(300, 2, 12).outer_iter() {
            let p = model.predict_row(row.as_slice().unwrap());
            assert!((0.0..=1.0).contains(&p), "prediction {p} outside [0, 1]");
        }
    }

    #[test]
    fn forest_respects_min_node_size() {
        // With min_node_size = n, the root is a leaf: constant prediction.
        let x = uniform_matrix(30, 1, 13);
        let y: Vec<f64> = x.column(0).to_vec();
        let cfg = ForestConfig {
            n_trees: 5,
            min_node_size: 30,
            seed: 0,
            ..ForestConfig::default()
        };
        let model = fit_random_forest(&cfg, x.view(), &y).unwrap();
        let p1 = model.predict_row(&[0.0]);
        let p2 = model.predict_row(&[1.0]);
        assert_eq!(p1, p2);
    }

    #[test]
    fn propensity_clipping_counts() {
        let model: Box<dyn Predictor> = Box::new(OraclePredictor {
            f: std::sync::Arc::new(|row: &[f64]| row[0]),
        });
        let h = Propensity::Fitted { model, eps: 0.05 };
        let rows = Array1::from(vec![0.01, 0.5, 0.99]).into_shape_with_order((3, 1)).unwrap();
        let (vals, clipped) = h.values(rows.view());
        assert_eq!(vals, vec![0.05, 0.5, 0.95]);
        assert_eq!(clipped, 2);
        assert_eq!(h.value_row(&[0.0]), 0.05);

        let known = Propensity::Known(0.3);
        let (vals, clipped) = known.values(rows.view());
        assert_eq!(vals, vec![0.3; 3]);
        assert_eq!(clipped, 0);
    }
}
