//! Reference estimators that ignore some or all of the network structure.
//!
//! Both are intentionally naive: the self-normalized contrast ignores
//! confounding and interference entirely, and the inverse-probability
//! estimator models selection on the unit's own confounder only. They anchor
//! the simulation studies as the "what if we had not bothered" comparison.

use crate::error::{Error, Result};
use crate::estimate::{make_folds, EstimateOptions};
use crate::learn::{Propensity, RegressionLearner};
use crate::seeds::{self, tag};
use crate::simulate::Dataset;

/// Self-normalized difference of arm means.
pub fn hajek(w: &[u8], y: &[f64]) -> Result<f64> {
    if w.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} treatments for {} outcomes",
            w.len(),
            y.len()
        )));
    }
    let mut sum1 = 0.0;
    let mut n1 = 0usize;
    let mut sum0 = 0.0;
    let mut n0 = 0usize;
    for (&wi, &yi) in w.iter().zip(y) {
        if wi == 1 {
            sum1 += yi;
            n1 += 1;
        } else {
            sum0 += yi;
            n0 += 1;
        }
    }
    if n1 == 0 || n0 == 0 {
        return Err(Error::DegenerateArms);
    }
    Ok(sum1 / n1 as f64 - sum0 / n0 as f64)
}

/// Cross-fit inverse-probability weighting with the propensity regressed on
/// the unit's own confounder alone. Folds and fitting complements follow the
/// same dependency-aware scheme as the main estimator; fitted propensities
/// are clipped at `opts.clip_eps`.
pub fn ipw_crossfit(
    data: &Dataset,
    learner: &dyn RegressionLearner,
    seed: u64,
    opts: &EstimateOptions,
) -> Result<f64> {
    opts.validate()?;
    let n = data.n();
    let plan = make_folds(n, opts.k, &data.dep_graph, seeds::derive(seed, tag::FOLDS))?;
    let mut total = 0.0;
    for (ki, fold) in plan.folds.iter().enumerate() {
        let comp = &plan.comps[ki];
        if comp.len() < opts.min_fit_size {
            return Err(Error::CrossFitInfeasible {
                comp_size: comp.len(),
                treated: comp.iter().filter(|&&i| data.w[i] == 1).count(),
                control: comp.iter().filter(|&&i| data.w[i] == 0).count(),
                min_fit_size: opts.min_fit_size,
                d_max: data.dep_graph.d_max(),
            });
        }
        let e = match opts.known_propensity {
            Some(p) => Propensity::Known(p),
            None => {
                let rows = rows_of(data, comp);
                let wv: Vec<f64> = comp.iter().map(|&i| f64::from(data.w[i])).collect();
                let fit_seed = seeds::derive(seeds::derive2(seed, tag::FIT, ki as u64), tag::FIT_H);
                let model = learner.fit(rows.view(), &wv, fit_seed)?;
                Propensity::Fitted { model, eps: opts.clip_eps }
            }
        };
        let fold_rows = rows_of(data, fold);
        let (ev, _) = e.values_flagged(fold_rows.view());
        let mut fold_sum = 0.0;
        for (local, &i) in fold.iter().enumerate() {
            let ei = ev[local];
            if !(ei > 0.0 && ei < 1.0) {
                return Err(Error::DegeneratePropensity(ei));
            }
            let w = f64::from(data.w[i]);
            fold_sum += w * data.y[i] / ei - (1.0 - w) * data.y[i] / (1.0 - ei);
        }
        total += fold_sum / fold.len() as f64;
    }
    Ok(total / opts.k as f64)
}

fn rows_of(data: &Dataset, idx: &[usize]) -> ndarray::Array2<f64> {
    let p = data.p();
    let mut out = ndarray::Array2::zeros((idx.len(), p));
    for (r, &i) in idx.iter().enumerate() {
        for j in 0..p {
            out[(r, j)] = data.c[(i, j)];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::new_network;
    use crate::learn::oracle_learner;
    use crate::simulate::{benchmark_sem, simulate};
    use proptest::prelude::*;

    #[test]
    fn hajek_is_difference_of_arm_means() {
        assert_eq!(hajek(&[1, 0], &[3.0, 1.0]).unwrap(), 2.0);
        assert_eq!(hajek(&[1, 1, 0, 0], &[2.0, 4.0, 1.0, 3.0]).unwrap(), 1.0);
    }

    #[test]
    fn hajek_rejects_degenerate_arms() {
        assert!(matches!(hajek(&[1, 1], &[1.0, 2.0]), Err(Error::DegenerateArms)));
        assert!(matches!(hajek(&[0, 0], &[1.0, 2.0]), Err(Error::DegenerateArms)));
        assert!(matches!(hajek(&[1], &[1.0, 2.0]), Err(Error::DimensionMismatch(_))));
    }

    proptest! {
        #[test]
        fn hajek_shifts_with_outcome_translation(
            w in proptest::collection::vec(0u8..2, 4..40),
            y in proptest::collection::vec(-5.0f64..5.0, 40),
            shift in -10.0f64..10.0,
        ) {
            prop_assume!(w.contains(&0) && w.contains(&1));
            let y = &y[..w.len()];
            let base = hajek(&w, y).unwrap();
            let shifted: Vec<f64> = y.iter().map(|v| v + shift).collect();
            let moved = hajek(&w, &shifted).unwrap();
            prop_assert!((moved - base).abs() < 1e-9);
        }
    }

    #[test]
    fn ipw_with_true_propensity_recovers_isolated_effect() {
        let net = new_network(4000, &[]).unwrap();
        let data = simulate(&net, &benchmark_sem(), 19).unwrap();
        let learner = oracle_learner(|row: &[f64]| 1.0 / (1.0 + (-(row[0] - 0.25)).exp()));
        let opts = EstimateOptions::default();
        let theta = ipw_crossfit(&data, &learner, 5, &opts).unwrap();
        assert!((theta - 3.40).abs() < 0.25, "theta {theta}");
    }

    #[test]
    fn ipw_reports_small_complements() {
        let net = new_network(40, &[]).unwrap();
        let data = simulate(&net, &benchmark_sem(), 3).unwrap();
        let opts = EstimateOptions { k: 2, ..EstimateOptions::default() };
        let learner = oracle_learner(|_row: &[f64]| 0.5);
        assert!(matches!(
            ipw_crossfit(&data, &learner, 1, &opts),
            Err(Error::CrossFitInfeasible { .. })
        ));
    }
}
