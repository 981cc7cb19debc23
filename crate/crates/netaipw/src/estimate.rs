//! Doubly robust effect estimation with dependency-aware cross-fitting.
//!
//! One run: partition units into folds, fit nuisances for each fold on the
//! units outside the fold and outside its dependency neighborhood, average
//! the augmented scores fold by fold, and estimate the variance with a
//! network-aware quadratic form. Fold assignment is random, so the full
//! procedure repeats the run over independent partitions and aggregates with
//! medians; the aggregate p-value and confidence interval carry the standard
//! twofold correction, which keeps their levels valid for any number of
//! repetitions.

use std::sync::Arc;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::learn::{NuisanceTriple, Propensity, RegressionLearner};
use crate::seeds::{self, tag};
use crate::simulate::{Dataset, UnitData};
use crate::spillover::DependencyGraph;
use crate::stats::{median, normal_cdf, normal_quantile};

/// Tuning knobs for the estimator.
#[derive(Clone, Debug)]
pub struct EstimateOptions {
    /// Number of cross-fitting folds.
    pub k: usize,
    /// Number of independent fold partitions to aggregate over.
    pub b: usize,
    /// Nominal level: the interval targets coverage `1 - alpha`.
    pub alpha: f64,
    /// Fitted propensities are clipped into `[clip_eps, 1 - clip_eps]`.
    pub clip_eps: f64,
    /// Minimum treated and control counts a complement must retain.
    pub min_fit_size: usize,
    /// Minimum units per degree stratum in the variance centering.
    pub min_stratum_size: usize,
    /// Largest admissible joint-treatment neighborhood for group effects.
    pub l_cap: usize,
    /// Skips propensity fitting when the design assigned a known constant.
    pub known_propensity: Option<f64>,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            k: 10,
            b: 10,
            alpha: 0.05,
            clip_eps: 0.01,
            min_fit_size: 50,
            min_stratum_size: 30,
            l_cap: 20,
            known_propensity: None,
        }
    }
}

impl EstimateOptions {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidParameter(format!("need at least 2 folds, got {}", self.k)));
        }
        if self.b < 1 {
            return Err(Error::InvalidParameter("need at least 1 repetition".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 0.5) {
            return Err(Error::InvalidEps(self.clip_eps));
        }
        if self.min_fit_size < 2 {
            return Err(Error::InvalidParameter("min_fit_size must be at least 2".into()));
        }
        if self.min_stratum_size < 1 {
            return Err(Error::InvalidParameter("min_stratum_size must be at least 1".into()));
        }
        if self.l_cap < 1 {
            return Err(Error::InvalidParameter("l_cap must be at least 1".into()));
        }
        if let Some(p) = self.known_propensity {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::InvalidProbability(p));
            }
        }
        Ok(())
    }
}

/// Learners for the three nuisances. The propensity learner is ignored when
/// the options carry a known propensity.
pub struct LearnerSet {
    pub g1: Arc<dyn RegressionLearner>,
    pub g0: Arc<dyn RegressionLearner>,
    pub h: Arc<dyn RegressionLearner>,
}

impl LearnerSet {
    /// One learner for all three nuisances.
    pub fn shared(learner: impl RegressionLearner + 'static) -> Self {
        let l: Arc<dyn RegressionLearner> = Arc::new(learner);
        LearnerSet { g1: l.clone(), g0: l.clone(), h: l }
    }
}

/// One fold partition: the folds, each fold's fitting complement, and the
/// fold index of every unit.
pub struct FoldPlan {
    pub folds: Vec<Vec<usize>>,
    pub comps: Vec<Vec<usize>>,
    pub fold_of: Vec<u32>,
}

/// Units outside `fold` that are not dependency neighbors of any unit in it.
/// Fitting on this set keeps the fitted nuisances independent of the fold's
/// scores.
pub fn dependency_complement(gd: &DependencyGraph, fold: &[usize]) -> Vec<usize> {
    let mut excluded = vec![false; gd.n()];
    for &i in fold {
        excluded[i] = true;
        for &j in gd.neighbors(i) {
            excluded[j] = true;
        }
    }
    (0..gd.n()).filter(|&i| !excluded[i]).collect()
}

/// Splits units into `k` random folds of near-equal size (sizes differ by at
/// most one) and attaches each fold's dependency complement.
pub fn make_folds(n: usize, k: usize, gd: &DependencyGraph, seed: u64) -> Result<FoldPlan> {
    if k < 2 || k > n {
        return Err(Error::InvalidK { k, n });
    }
    if gd.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "dependency graph has {} units, expected {n}",
            gd.n()
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds::rng(seed));
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut at = 0usize;
    for ki in 0..k {
        let size = base + usize::from(ki < extra);
        let mut fold: Vec<usize> = order[at..at + size].to_vec();
        fold.sort_unstable();
        folds.push(fold);
        at += size;
    }
    let mut fold_of = vec![0u32; n];
    for (ki, fold) in folds.iter().enumerate() {
        for &i in fold {
            fold_of[i] = ki as u32;
        }
    }
    let comps = folds.iter().map(|f| dependency_complement(gd, f)).collect();
    Ok(FoldPlan { folds, comps, fold_of })
}

fn subset_design(c: &Array2<f64>, other: &Array2<f64>, idx: &[usize]) -> Array2<f64> {
    let (p, q) = (c.ncols(), other.ncols());
    let mut out = Array2::zeros((idx.len(), p + q));
    for (r, &i) in idx.iter().enumerate() {
        for j in 0..p {
            out[(r, j)] = c[(i, j)];
        }
        for j in 0..q {
            out[(r, p + j)] = other[(i, j)];
        }
    }
    out
}

/// Fits the nuisance triple on one complement: treated-arm and control-arm
/// outcome regressions over `[c | x]`, and the propensity over `[c | z]`
/// unless a known constant was supplied.
pub fn fit_nuisances(
    data: &Dataset,
    comp: &[usize],
    learners: &LearnerSet,
    fit_seed: u64,
    opts: &EstimateOptions,
) -> Result<NuisanceTriple> {
    let treated: Vec<usize> = comp.iter().copied().filter(|&i| data.w[i] == 1).collect();
    let control: Vec<usize> = comp.iter().copied().filter(|&i| data.w[i] == 0).collect();
    if treated.len() < opts.min_fit_size || control.len() < opts.min_fit_size {
        return Err(Error::CrossFitInfeasible {
            comp_size: comp.len(),
            treated: treated.len(),
            control: control.len(),
            min_fit_size: opts.min_fit_size,
            d_max: data.dep_graph.d_max(),
        });
    }
    let x1 = subset_design(&data.c, &data.x, &treated);
    let y1: Vec<f64> = treated.iter().map(|&i| data.y[i]).collect();
    let g1 = learners.g1.fit(x1.view(), &y1, seeds::derive(fit_seed, tag::FIT_G1))?;

    let x0 = subset_design(&data.c, &data.x, &control);
    let y0: Vec<f64> = control.iter().map(|&i| data.y[i]).collect();
    let g0 = learners.g0.fit(x0.view(), &y0, seeds::derive(fit_seed, tag::FIT_G0))?;

    let h = match opts.known_propensity {
        Some(p) => Propensity::Known(p),
        None => {
            let xh = subset_design(&data.c, &data.z, comp);
            let wv: Vec<f64> = comp.iter().map(|&i| f64::from(data.w[i])).collect();
            let model = learners.h.fit(xh.view(), &wv, seeds::derive(fit_seed, tag::FIT_H))?;
            Propensity::Fitted { model, eps: opts.clip_eps }
        }
    };
    Ok(NuisanceTriple { g1, g0, h })
}

/// The augmented score in its shared shape: a direct contrast plus
/// inverse-probability-weighted residual corrections. Unit effects use the
/// single-unit weight, group effects a product over the joint neighborhood;
/// both flow through this one expression so the group score on an isolated
/// unit reproduces the unit score bit for bit.
#[inline]
fn aipw_form(direct: f64, prod1: f64, prod0: f64, y: f64, g1_obs: f64, g0_obs: f64) -> f64 {
    direct + prod1 * (y - g1_obs) - prod0 * (y - g0_obs)
}

/// Augmented score of one unit under fitted nuisances.
pub fn score_phi(u: &UnitData, eta: &NuisanceTriple) -> Result<f64> {
    let mut gx = u.c.clone();
    gx.extend_from_slice(&u.x);
    let mut hx = u.c.clone();
    hx.extend_from_slice(&u.z);
    let g1 = eta.g1.predict_row(&gx);
    let g0 = eta.g0.predict_row(&gx);
    let h = eta.h.value_row(&hx);
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::DegeneratePropensity(h));
    }
    let w = f64::from(u.w);
    Ok(aipw_form(g1 - g0, w / h, (1.0 - w) / (1.0 - h), u.y, g1, g0))
}

/// Precomputed inputs for group-effect scoring under an intervention.
pub(crate) struct GateContext {
    /// Features under the intervention vector.
    pub x_pi: Array2<f64>,
    /// Features under the complement intervention.
    pub x_pibar: Array2<f64>,
    /// Joint neighborhood of each unit: dependency neighbors plus itself.
    pub alpha: Vec<Vec<usize>>,
    /// Full `[c | z]` design, evaluated per fold because every unit's
    /// propensity can enter a fold member's product.
    pub h_rows: Array2<f64>,
}

pub(crate) enum ScoreKind {
    Eate,
    Gate(GateContext),
}

fn fold_scores(
    data: &Dataset,
    fold: &[usize],
    eta: &NuisanceTriple,
    kind: &ScoreKind,
    clip: &mut usize,
) -> Result<Vec<f64>> {
    let gx = subset_design(&data.c, &data.x, fold);
    let g1o = eta.g1.predict(gx.view());
    let g0o = eta.g0.predict(gx.view());
    let mut out = Vec::with_capacity(fold.len());
    match kind {
        ScoreKind::Eate => {
            let hx = subset_design(&data.c, &data.z, fold);
            let (hv, flags) = eta.h.values_flagged(hx.view());
            for (local, &i) in fold.iter().enumerate() {
                let h = hv[local];
                if !(h > 0.0 && h < 1.0) {
                    return Err(Error::DegeneratePropensity(h));
                }
                *clip += usize::from(flags[local]);
                let w = f64::from(data.w[i]);
                out.push(aipw_form(
                    g1o[local] - g0o[local],
                    w / h,
                    (1.0 - w) / (1.0 - h),
                    data.y[i],
                    g1o[local],
                    g0o[local],
                ));
            }
        }
        ScoreKind::Gate(ctx) => {
            let g1pi = eta.g1.predict(subset_design(&data.c, &ctx.x_pi, fold).view());
            let g0bar = eta.g0.predict(subset_design(&data.c, &ctx.x_pibar, fold).view());
            let (hv, flags) = eta.h.values_flagged(ctx.h_rows.view());
            for (local, &i) in fold.iter().enumerate() {
                *clip += usize::from(flags[i]);
                let mut prod1 = 1.0;
                let mut prod0 = 1.0;
                for &j in &ctx.alpha[i] {
                    let h = hv[j];
                    if !(h > 0.0 && h < 1.0) {
                        return Err(Error::DegeneratePropensity(h));
                    }
                    let wj = f64::from(data.w[j]);
                    prod1 *= wj / h;
                    prod0 *= (1.0 - wj) / (1.0 - h);
                }
                out.push(aipw_form(
                    g1pi[local] - g0bar[local],
                    prod1,
                    prod0,
                    data.y[i],
                    g1o[local],
                    g0o[local],
                ));
            }
        }
    }
    Ok(out)
}

/// Units grouped by dependency degree for variance centering.
pub struct Strata {
    /// Unit lists, ascending in degree.
    pub groups: Vec<Vec<usize>>,
    /// Stratum index of each unit.
    pub of: Vec<u32>,
}

/// Groups units by dependency degree, merging ascending degrees until each
/// stratum holds at least `min_size` units. A trailing undersized stratum
/// merges backward into its predecessor.
pub fn degree_strata(gd: &DependencyGraph, min_size: usize) -> Strata {
    let n = gd.n();
    let d_max = (0..n).map(|i| gd.degree(i)).max().unwrap_or(0);
    let mut by_degree: Vec<Vec<usize>> = vec![Vec::new(); d_max + 1];
    for i in 0..n {
        by_degree[gd.degree(i)].push(i);
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    for bucket in by_degree {
        if bucket.is_empty() {
            continue;
        }
        current.extend(bucket);
        if current.len() >= min_size {
            groups.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        match groups.last_mut() {
            Some(last) => last.extend(current),
            None => groups.push(current),
        }
    }
    let mut of = vec![0u32; n];
    for (gi, g) in groups.iter().enumerate() {
        for &i in g {
            of[i] = gi as u32;
        }
    }
    Strata { groups, of }
}

/// Mean score within each stratum.
pub fn stratum_effects(scores: &[f64], strata: &Strata) -> Vec<f64> {
    strata
        .groups
        .iter()
        .map(|g| g.iter().map(|&i| scores[i]).sum::<f64>() / g.len() as f64)
        .collect()
}

/// Network-aware variance of the score mean: the diagonal term plus twice
/// the sum of cross-products over dependency edges, with scores centered at
/// their stratum effects. A non-positive total falls back to the diagonal
/// term alone; the flag reports that the cross term was dropped.
pub fn variance_estimate(scores: &[f64], strata: &Strata, gd: &DependencyGraph) -> (f64, bool) {
    let n = scores.len();
    let effects = stratum_effects(scores, strata);
    let psi: Vec<f64> = (0..n)
        .map(|i| scores[i] - effects[strata.of[i] as usize])
        .collect();
    let diag = psi.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let mut cross = 0.0;
    for i in 0..n {
        for &j in gd.neighbors(i) {
            if j > i {
                cross += psi[i] * psi[j];
            }
        }
    }
    let total = diag + 2.0 * cross / n as f64;
    if total > 0.0 {
        (total, false)
    } else {
        (diag, true)
    }
}

/// Two-sided p-value of the score mean against zero: `2(1 - Phi(|t| sqrt(n) / s))`,
/// capped at 1. A zero standard deviation degenerates to 0 or 1 by whether
/// the estimate itself is zero.
pub fn two_sided_p(theta: f64, sigma: f64, n: usize) -> f64 {
    let z = if sigma == 0.0 {
        if theta == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        theta.abs() * (n as f64).sqrt() / sigma
    };
    (2.0 * (1.0 - normal_cdf(z))).min(1.0)
}

struct RunOut {
    theta: f64,
    sigma: f64,
    p: f64,
    clip_count: usize,
    variance_fallback: bool,
    comp_min: usize,
    comp_sum: usize,
}

fn single_run(
    data: &Dataset,
    learners: &LearnerSet,
    rep_seed: u64,
    opts: &EstimateOptions,
    kind: &ScoreKind,
    strata: &Strata,
) -> Result<RunOut> {
    let n = data.n();
    let plan = make_folds(n, opts.k, &data.dep_graph, seeds::derive(rep_seed, tag::FOLDS))?;
    let mut scores = vec![f64::NAN; n];
    let mut clip = 0usize;
    let mut comp_min = usize::MAX;
    let mut comp_sum = 0usize;
    for (ki, fold) in plan.folds.iter().enumerate() {
        let comp = &plan.comps[ki];
        comp_min = comp_min.min(comp.len());
        comp_sum += comp.len();
        let eta = fit_nuisances(data, comp, learners, seeds::derive2(rep_seed, tag::FIT, ki as u64), opts)?;
        let sc = fold_scores(data, fold, &eta, kind, &mut clip)?;
        for (local, &i) in fold.iter().enumerate() {
            scores[i] = sc[local];
        }
    }
    let theta = plan
        .folds
        .iter()
        .map(|f| f.iter().map(|&i| scores[i]).sum::<f64>() / f.len() as f64)
        .sum::<f64>()
        / opts.k as f64;
    let (var, fallback) = variance_estimate(&scores, strata, &data.dep_graph);
    let sigma = var.sqrt();
    Ok(RunOut {
        theta,
        sigma,
        p: two_sided_p(theta, sigma, n),
        clip_count: clip,
        variance_fallback: fallback,
        comp_min,
        comp_sum,
    })
}

/// Aggregate of repeated runs.
pub struct Aggregate {
    pub theta: f64,
    pub p_value: f64,
    pub ci: (f64, f64),
    pub ci_empty: bool,
}

/// Median-aggregates per-run estimates: point estimate and p-value take
/// medians (the p-value doubled and capped), and the interval collects every
/// `theta` whose median studentized distance to the runs stays below the
/// `1 - alpha/4` normal quantile. An interval that comes up empty is
/// reported as NaN bounds with the flag set.
pub fn aggregate_runs(thetas: &[f64], ses: &[f64], pvals: &[f64], alpha: f64) -> Result<Aggregate> {
    if thetas.is_empty() {
        return Err(Error::EmptyRuns);
    }
    if thetas.len() != ses.len() || thetas.len() != pvals.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates, {} standard errors, {} p-values",
            thetas.len(),
            ses.len(),
            pvals.len()
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} outside (0, 1)")));
    }
    if thetas.iter().chain(ses).any(|v| !v.is_finite()) || ses.iter().any(|&s| s < 0.0) {
        return Err(Error::NonFiniteInput);
    }

    let theta = median(thetas);
    let p_value = (2.0 * median(pvals)).min(1.0);
    let q = normal_quantile(1.0 - alpha / 4.0);

    let m = |t: f64| -> f64 {
        let ratios: Vec<f64> = thetas
            .iter()
            .zip(ses)
            .map(|(&tb, &se)| {
                if se == 0.0 {
                    if t == tb {
                        0.0
                    } else {
                        f64::INFINITY
                    }
                } else {
                    (tb - t).abs() / se
                }
            })
            .collect();
        median(&ratios)
    };

    let max_se = ses.iter().cloned().fold(0.0f64, f64::max);
    let t_lo = thetas.iter().cloned().fold(f64::INFINITY, f64::min);
    let t_hi = thetas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut lo0 = t_lo - 20.0 * max_se;
    let mut hi0 = t_hi + 20.0 * max_se;
    // Widen until the bracket ends sit outside the interval (they already do
    // for any conventional alpha; this guards absurdly small ones).
    for _ in 0..100 {
        if m(lo0) >= q {
            break;
        }
        lo0 -= 10.0 * max_se.max(1.0);
    }
    for _ in 0..100 {
        if m(hi0) >= q {
            break;
        }
        hi0 += 10.0 * max_se.max(1.0);
    }

    let tol = 1e-9 * theta.abs().max(1.0);
    // The median distance is near-convex; a ternary search over the bracket
    // plus the run estimates themselves reliably locate its minimizer.
    let (mut lo, mut hi) = (lo0, hi0);
    for _ in 0..300 {
        if hi - lo < tol {
            break;
        }
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        let (v1, v2) = (m(m1), m(m2));
        if v1 < v2 {
            hi = m2;
        } else if v1 > v2 {
            lo = m1;
        } else {
            lo = m1;
            hi = m2;
        }
    }
    let mut center = 0.5 * (lo + hi);
    let mut center_val = m(center);
    for &t in thetas {
        let v = m(t);
        if v < center_val {
            center = t;
            center_val = v;
        }
    }

    if center_val >= q {
        return Ok(Aggregate { theta, p_value, ci: (f64::NAN, f64::NAN), ci_empty: true });
    }

    let bisect = |mut outside: f64, mut inside: f64| -> f64 {
        for _ in 0..300 {
            if (inside - outside).abs() < tol {
                break;
            }
            let mid = 0.5 * (outside + inside);
            if m(mid) >= q {
                outside = mid;
            } else {
                inside = mid;
            }
        }
        0.5 * (outside + inside)
    };
    let ci = (bisect(lo0, center), bisect(hi0, center));
    Ok(Aggregate { theta, p_value, ci, ci_empty: false })
}

/// Per-repetition record in a report.
#[derive(Debug, Clone)]
pub struct RepRecord {
    pub theta: f64,
    pub sigma: f64,
    pub p: f64,
    pub failed: bool,
}

/// Health indicators gathered across repetitions.
#[derive(Debug, Clone)]
pub struct Diagnostics {
    /// Largest dependency degree.
    pub d_max: usize,
    /// Set when `d_max` exceeds `n^(1/4)`, where the variance guarantees thin.
    pub d_max_warning: bool,
    pub stratum_sizes: Vec<usize>,
    pub complement_size_min: usize,
    pub complement_size_mean: f64,
    /// Fitted propensities moved by clipping, totaled over repetitions.
    pub clip_count: usize,
    /// Repetitions whose variance cross term was dropped.
    pub variance_fallbacks: usize,
    /// Repetitions skipped because some complement arm was too small.
    pub failed_runs: usize,
    pub ci_empty: bool,
}

/// Full output of the repeated cross-fitting procedure.
#[derive(Debug)]
pub struct EstimateReport {
    pub n: usize,
    pub k: usize,
    pub b: usize,
    pub alpha: f64,
    pub theta_hat: f64,
    /// Median per-run sigma; the reported scale of one run's score mean
    /// times sqrt(n).
    pub sigma_hat: f64,
    pub p_value: f64,
    pub ci: (f64, f64),
    pub per_repetition: Vec<RepRecord>,
    pub diagnostics: Diagnostics,
}

impl EstimateReport {
    /// Plain-text rendering, one `key = value` line per field followed by a
    /// per-repetition table.
    pub fn render(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        writeln!(s, "units = {}", self.n).unwrap();
        writeln!(s, "folds = {}", self.k).unwrap();
        writeln!(s, "repetitions = {}", self.b).unwrap();
        writeln!(s, "alpha = {}", self.alpha).unwrap();
        writeln!(s, "theta_hat = {}", self.theta_hat).unwrap();
        writeln!(s, "sigma_hat = {}", self.sigma_hat).unwrap();
        writeln!(s, "p_value = {}", self.p_value).unwrap();
        writeln!(s, "ci_lower = {}", self.ci.0).unwrap();
        writeln!(s, "ci_upper = {}", self.ci.1).unwrap();
        writeln!(s, "ci_empty = {}", self.diagnostics.ci_empty).unwrap();
        writeln!(s, "d_max = {}", self.diagnostics.d_max).unwrap();
        writeln!(s, "d_max_warning = {}", self.diagnostics.d_max_warning).unwrap();
        let sizes: Vec<String> =
            self.diagnostics.stratum_sizes.iter().map(|v| v.to_string()).collect();
        writeln!(s, "stratum_sizes = {}", sizes.join(" ")).unwrap();
        writeln!(s, "complement_size_min = {}", self.diagnostics.complement_size_min).unwrap();
        writeln!(s, "complement_size_mean = {}", self.diagnostics.complement_size_mean).unwrap();
        writeln!(s, "clipped_propensities = {}", self.diagnostics.clip_count).unwrap();
        writeln!(s, "variance_fallbacks = {}", self.diagnostics.variance_fallbacks).unwrap();
        writeln!(s, "failed_repetitions = {}", self.diagnostics.failed_runs).unwrap();
        writeln!(s, "rep theta sigma p failed").unwrap();
        for (i, r) in self.per_repetition.iter().enumerate() {
            writeln!(s, "{} {} {} {} {}", i + 1, r.theta, r.sigma, r.p, u8::from(r.failed))
                .unwrap();
        }
        s
    }
}

pub(crate) fn run_many(
    data: &Dataset,
    learners: &LearnerSet,
    seed: u64,
    opts: &EstimateOptions,
    kind: &ScoreKind,
) -> Result<EstimateReport> {
    opts.validate()?;
    let n = data.n();
    let strata = degree_strata(&data.dep_graph, opts.min_stratum_size);
    let results: Vec<Result<RunOut>> = (0..opts.b)
        .into_par_iter()
        .map(|rep| {
            single_run(
                data,
                learners,
                seeds::derive2(seed, tag::REPETITION, rep as u64),
                opts,
                kind,
                &strata,
            )
        })
        .collect();

    let mut per_repetition = Vec::with_capacity(opts.b);
    let mut ok: Vec<RunOut> = Vec::with_capacity(opts.b);
    let mut last_fail: Option<Error> = None;
    for r in results {
        match r {
            Ok(run) => {
                per_repetition.push(RepRecord {
                    theta: run.theta,
                    sigma: run.sigma,
                    p: run.p,
                    failed: false,
                });
                ok.push(run);
            }
            Err(e @ Error::CrossFitInfeasible { .. }) => {
                per_repetition.push(RepRecord {
                    theta: f64::NAN,
                    sigma: f64::NAN,
                    p: f64::NAN,
                    failed: true,
                });
                last_fail = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    let failed = opts.b - ok.len();
    if failed * 2 > opts.b {
        return Err(Error::TooManyInfeasibleRuns {
            failed,
            total: opts.b,
            last: Box::new(last_fail.expect("failure count implies a failure")),
        });
    }
    if ok.is_empty() {
        return Err(Error::EmptyRuns);
    }

    let thetas: Vec<f64> = ok.iter().map(|r| r.theta).collect();
    let sigmas: Vec<f64> = ok.iter().map(|r| r.sigma).collect();
    let ps: Vec<f64> = ok.iter().map(|r| r.p).collect();
    let ses: Vec<f64> = sigmas.iter().map(|s| s / (n as f64).sqrt()).collect();
    let agg = aggregate_runs(&thetas, &ses, &ps, opts.alpha)?;

    let comp_min = ok.iter().map(|r| r.comp_min).min().unwrap_or(0);
    let comp_mean =
        ok.iter().map(|r| r.comp_sum).sum::<usize>() as f64 / (ok.len() * opts.k) as f64;
    let d_max = data.dep_graph.d_max();
    Ok(EstimateReport {
        n,
        k: opts.k,
        b: opts.b,
        alpha: opts.alpha,
        theta_hat: agg.theta,
        sigma_hat: median(&sigmas),
        p_value: agg.p_value,
        ci: agg.ci,
        per_repetition,
        diagnostics: Diagnostics {
            d_max,
            d_max_warning: (d_max as f64) > (n as f64).powf(0.25),
            stratum_sizes: strata.groups.iter().map(Vec::len).collect(),
            complement_size_min: comp_min,
            complement_size_mean: comp_mean,
            clip_count: ok.iter().map(|r| r.clip_count).sum(),
            variance_fallbacks: ok.iter().filter(|r| r.variance_fallback).count(),
            failed_runs: failed,
            ci_empty: agg.ci_empty,
        },
    })
}

/// Estimates the average unit-level effect by repeated dependency-aware
/// cross-fitting and median aggregation.
pub fn run_algorithm1(
    data: &Dataset,
    learners: &LearnerSet,
    seed: u64,
    opts: &EstimateOptions,
) -> Result<EstimateReport> {
    run_many(data, learners, seed, opts, &ScoreKind::Eate)
}
