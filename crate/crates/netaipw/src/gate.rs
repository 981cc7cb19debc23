//! Group effects under joint treatment interventions.
//!
//! The group effect contrasts outcomes under an intervention vector applied
//! to the whole sample against its complement. Its augmented score replaces
//! the single-unit inverse-probability weight with a product over the unit's
//! dependency neighborhood, so exposure to neighbors' treatments is weighted
//! as well. On a network with no interference the neighborhood is the unit
//! itself and the whole procedure collapses to the unit-effect estimator,
//! reproducing it bit for bit.

use std::path::Path;

use crate::error::{Error, Result};
use crate::estimate::{run_many, EstimateOptions, EstimateReport, GateContext, LearnerSet, ScoreKind};
use crate::learn::NuisanceTriple;
use crate::simulate::Dataset;
use crate::spillover::{compute_x_features, DependencyGraph};

/// A full-sample treatment assignment used as intervention target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InterventionVector(Vec<u8>);

impl InterventionVector {
    pub fn all_ones(n: usize) -> Self {
        InterventionVector(vec![1; n])
    }

    pub fn all_zeros(n: usize) -> Self {
        InterventionVector(vec![0; n])
    }

    pub fn from_slice(pi: &[u8]) -> Result<Self> {
        if let Some(&bad) = pi.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidParameter(format!(
                "intervention entries must be 0 or 1, found {bad}"
            )));
        }
        Ok(InterventionVector(pi.to_vec()))
    }

    /// Parses one 0/1 entry per line; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pi = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            match line {
                "0" => pi.push(0),
                "1" => pi.push(1),
                other => {
                    return Err(Error::Parse(format!(
                        "intervention line {}: {:?} is not 0 or 1",
                        lineno + 1,
                        other
                    )))
                }
            }
        }
        if pi.is_empty() {
            return Err(Error::Parse("intervention file has no entries".into()));
        }
        Ok(InterventionVector(pi))
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The complement assignment, flipping every unit.
    pub fn complement(&self) -> Self {
        InterventionVector(self.0.iter().map(|&v| 1 - v).collect())
    }
}

/// Joint-treatment neighborhood of a unit: its dependency neighbors plus the
/// unit itself, ascending.
pub fn gate_alpha(gd: &DependencyGraph, i: usize) -> Vec<usize> {
    let mut alpha = gd.neighbors(i).to_vec();
    let at = alpha.partition_point(|&j| j < i);
    alpha.insert(at, i);
    alpha
}

fn alpha_sets(gd: &DependencyGraph, l_cap: usize) -> Result<Vec<Vec<usize>>> {
    (0..gd.n())
        .map(|i| {
            let alpha = gate_alpha(gd, i);
            if alpha.len() > l_cap {
                return Err(Error::AlphaTooLarge { unit: i, size: alpha.len(), cap: l_cap });
            }
            Ok(alpha)
        })
        .collect()
}

/// Group-effect score of one unit: direct contrast of the outcome
/// regressions under the intervention and its complement, plus residual
/// corrections weighted by joint-treatment probability products over the
/// unit's dependency neighborhood.
pub fn score_phi_gate(
    i: usize,
    data: &Dataset,
    eta: &NuisanceTriple,
    pi: &InterventionVector,
    l_cap: usize,
) -> Result<f64> {
    let n = data.n();
    if i >= n {
        return Err(Error::IndexOutOfRange { index: i, n });
    }
    if pi.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "intervention has {} entries for {} units",
            pi.len(),
            n
        )));
    }
    let alpha = gate_alpha(&data.dep_graph, i);
    if alpha.len() > l_cap {
        return Err(Error::AlphaTooLarge { unit: i, size: alpha.len(), cap: l_cap });
    }
    let spec = data.features.as_ref();
    let pibar = pi.complement();
    let x_pi = spec.x_eval(&data.network, i, pi.as_slice(), data.c.view());
    let x_bar = spec.x_eval(&data.network, i, pibar.as_slice(), data.c.view());

    let ci = data.c.row(i).to_vec();
    let row = |x: &[f64]| {
        let mut r = ci.clone();
        r.extend_from_slice(x);
        r
    };
    let g1pi = eta.g1.predict_row(&row(&x_pi));
    let g0bar = eta.g0.predict_row(&row(&x_bar));
    let xobs = data.x.row(i).to_vec();
    let g1o = eta.g1.predict_row(&row(&xobs));
    let g0o = eta.g0.predict_row(&row(&xobs));

    let mut prod1 = 1.0;
    let mut prod0 = 1.0;
    for &j in &alpha {
        let mut hrow = data.c.row(j).to_vec();
        hrow.extend(data.z.row(j).iter());
        let h = eta.h.value_row(&hrow);
        if !(h > 0.0 && h < 1.0) {
            return Err(Error::DegeneratePropensity(h));
        }
        let wj = f64::from(data.w[j]);
        prod1 *= wj / h;
        prod0 *= (1.0 - wj) / (1.0 - h);
    }
    Ok(g1pi - g0bar + prod1 * (data.y[i] - g1o) - prod0 * (data.y[i] - g0o))
}

/// Estimates the group effect of `pi` against its complement by the same
/// repeated dependency-aware cross-fitting as the unit-effect estimator.
/// Nuisances are fitted on observed data; only the scoring differs.
pub fn estimate_gate(
    data: &Dataset,
    learners: &LearnerSet,
    pi: &InterventionVector,
    seed: u64,
    opts: &EstimateOptions,
) -> Result<EstimateReport> {
    opts.validate()?;
    if pi.len() != data.n() {
        return Err(Error::DimensionMismatch(format!(
            "intervention has {} entries for {} units",
            pi.len(),
            data.n()
        )));
    }
    let alpha = alpha_sets(&data.dep_graph, opts.l_cap)?;
    let spec = data.features.as_ref();
    let pibar = pi.complement();
    let x_pi = compute_x_features(&data.network, spec, pi.as_slice(), data.c.view())?;
    let x_pibar = compute_x_features(&data.network, spec, pibar.as_slice(), data.c.view())?;
    let ctx = GateContext { x_pi, x_pibar, alpha, h_rows: data.h_design() };
    run_many(data, learners, seed, opts, &ScoreKind::Gate(ctx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimate::run_algorithm1;
    use crate::graph::new_network;
    use crate::learn::{ForestConfig, OraclePredictor, Propensity};
    use crate::simulate::{benchmark_sem, simulate};
    use crate::spillover::derive_dependency_graph;
    use crate::spillover::FracTreatedNeighbors;

    #[test]
    fn intervention_vector_constructors() {
        assert_eq!(InterventionVector::all_ones(3).as_slice(), &[1, 1, 1]);
        assert_eq!(InterventionVector::all_zeros(2).as_slice(), &[0, 0]);
        assert_eq!(
            InterventionVector::all_ones(3).complement(),
            InterventionVector::all_zeros(3)
        );
        assert!(InterventionVector::from_slice(&[0, 1, 2]).is_err());
        let parsed = InterventionVector::parse("1\n0\n\n1\n").unwrap();
        assert_eq!(parsed.as_slice(), &[1, 0, 1]);
        assert!(InterventionVector::parse("1\nx\n").is_err());
        assert!(InterventionVector::parse("\n").is_err());
    }

    #[test]
    fn alpha_is_closed_neighborhood() {
        let net = new_network(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let gd = derive_dependency_graph(&net, &FracTreatedNeighbors);
        assert_eq!(gate_alpha(&gd, 0), vec![0, 1, 2]);
        assert_eq!(gate_alpha(&gd, 1), vec![0, 1, 2, 3]);
        let lone = derive_dependency_graph(&new_network(2, &[]).unwrap(), &FracTreatedNeighbors);
        assert_eq!(gate_alpha(&lone, 0), vec![0]);
    }

    fn flat_eta(g1: f64, g0: f64, h: f64) -> NuisanceTriple {
        NuisanceTriple {
            g1: Box::new(OraclePredictor::from_fn(move |_| g1)),
            g0: Box::new(OraclePredictor::from_fn(move |_| g0)),
            h: Propensity::Known(h),
        }
    }

    /// Two adjacent units, both treated, balanced propensity: the treated
    /// product is (1/0.5)^2 = 4 and the control product vanishes.
    #[test]
    fn score_products_span_the_neighborhood() {
        let net = new_network(2, &[(0, 1)]).unwrap();
        let sem = benchmark_sem();
        let mut data = simulate(&net, &sem, 40).unwrap();
        data.w = vec![1, 1];
        data.y[0] = 2.6;
        let eta = flat_eta(2.0, 1.0, 0.5);
        let pi = InterventionVector::all_ones(2);
        let phi = score_phi_gate(0, &data, &eta, &pi, 20).unwrap();
        // direct 2 - 1, plus 4 * (2.6 - 2), minus 0 * (2.6 - 1).
        assert!((phi - 3.4).abs() < 1e-12, "phi {phi}");

        data.w = vec![0, 0];
        let phi0 = score_phi_gate(0, &data, &eta, &pi, 20).unwrap();
        // prod1 = 0, prod0 = 4: 1 - 4 * (2.6 - 1).
        assert!((phi0 - (1.0 - 4.0 * 1.6)).abs() < 1e-12, "phi {phi0}");
    }

    #[test]
    fn neighborhood_cap_is_enforced() {
        let net = new_network(2, &[(0, 1)]).unwrap();
        let data = simulate(&net, &benchmark_sem(), 41).unwrap();
        let eta = flat_eta(2.0, 1.0, 0.5);
        let pi = InterventionVector::all_ones(2);
        assert!(matches!(
            score_phi_gate(0, &data, &eta, &pi, 1),
            Err(Error::AlphaTooLarge { unit: 0, size: 2, cap: 1 })
        ));
        let opts = EstimateOptions { l_cap: 1, ..EstimateOptions::default() };
        let learners = LearnerSet::shared(ForestConfig { n_trees: 5, ..ForestConfig::default() });
        assert!(matches!(
            estimate_gate(&data, &learners, &pi, 1, &opts),
            Err(Error::AlphaTooLarge { .. })
        ));
    }

    #[test]
    fn isolated_units_reduce_to_unit_effect_estimator() {
        // With no interference the group effect under the all-ones
        // intervention is the unit effect, bit for bit: same folds, same
        // fits, same scores.
        let net = new_network(400, &[]).unwrap();
        let data = simulate(&net, &benchmark_sem(), 50).unwrap();
        let learners = LearnerSet::shared(ForestConfig {
            n_trees: 20,
            min_node_size: 5,
            ..ForestConfig::default()
        });
        let opts = EstimateOptions { k: 4, b: 2, min_fit_size: 30, ..EstimateOptions::default() };
        let unit = run_algorithm1(&data, &learners, 99, &opts).unwrap();
        let group =
            estimate_gate(&data, &learners, &InterventionVector::all_ones(400), 99, &opts).unwrap();
        assert_eq!(unit.theta_hat.to_bits(), group.theta_hat.to_bits());
        assert_eq!(unit.sigma_hat.to_bits(), group.sigma_hat.to_bits());
        assert_eq!(unit.p_value.to_bits(), group.p_value.to_bits());
        assert_eq!(unit.ci.0.to_bits(), group.ci.0.to_bits());
        assert_eq!(unit.ci.1.to_bits(), group.ci.1.to_bits());
        for (a, b) in unit.per_repetition.iter().zip(&group.per_repetition) {
            assert_eq!(a.theta.to_bits(), b.theta.to_bits());
            assert_eq!(a.sigma.to_bits(), b.sigma.to_bits());
        }
    }

    #[test]
    fn intervention_length_is_checked() {
        let net = new_network(3, &[]).unwrap();
        let data = simulate(&net, &benchmark_sem(), 1).unwrap();
        let learners = LearnerSet::shared(ForestConfig::default());
        let pi = InterventionVector::all_ones(2);
        assert!(matches!(
            estimate_gate(&data, &learners, &pi, 0, &EstimateOptions::default()),
            Err(Error::DimensionMismatch(_))
        ));
    }
}
