//! Spillover feature maps and the dependency graph they induce.
//!
//! A [`FeatureSpec`] declares, for every unit, which other units' treatments
//! and confounders enter its treatment features `X_i` and its confounder
//! features `Z_i` (the footprint), and how to evaluate those features. The
//! footprint must be faithful: perturbing a variable outside it never changes
//! the evaluated feature. Faithfulness is what makes the derived dependency
//! graph a sound basis for cross-fitting and variance estimation.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::graph::Network;

/// Units whose variables enter one unit's treatment features: `w_units` for
/// treatments, `c_units` for confounders. Both sorted ascending.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Footprint {
    pub w_units: Vec<usize>,
    pub c_units: Vec<usize>,
}

/// A spillover feature map with declared footprints.
///
/// `x_eval` may read `w[j]` and `c.row(j)` only for `j` in the unit's
/// `x_footprint` (and never the unit's own treatment); `z_eval` may read
/// `c.row(j)` only for `j` in the `z_footprint`. Evaluation must be
/// deterministic. `c` always has one row per unit of the network.
pub trait FeatureSpec: Send + Sync {
    /// Length of each `X_i`.
    fn x_dim(&self) -> usize;
    /// Length of each `Z_i`.
    fn z_dim(&self) -> usize;
    fn x_footprint(&self, net: &Network, i: usize) -> Footprint;
    fn z_footprint(&self, net: &Network, i: usize) -> Vec<usize>;
    fn x_eval(&self, net: &Network, i: usize, w: &[u8], c: ArrayView2<f64>) -> Vec<f64>;
    fn z_eval(&self, net: &Network, i: usize, c: ArrayView2<f64>) -> Vec<f64>;
    /// Stable identifier used by the command-line registry.
    fn name(&self) -> &'static str;
}

/// Undirected graph over units marking pairs whose observations may be
/// statistically dependent under a feature spec. Same shape as [`Network`],
/// derived rather than observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyGraph {
    n: usize,
    adj: Vec<Vec<usize>>,
}

impl DependencyGraph {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i].binary_search(&j).is_ok()
    }

    /// Maximum degree; the estimator's variance and feasibility diagnostics
    /// key off this.
    pub fn d_max(&self) -> usize {
        self.adj.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Edges as `(i, j)` with `i < j`, sorted lexicographically.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for i in 0..self.n {
            for &j in &self.adj[i] {
                if i < j {
                    out.push((i, j));
                }
            }
        }
        out
    }
}

/// Evaluates treatment features for all units. `w` holds one 0/1 entry per
/// unit; `c` one confounder row per unit.
pub fn compute_x_features(
    net: &Network,
    spec: &dyn FeatureSpec,
    w: &[u8],
    c: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let n = net.n();
    check_unit_inputs(n, w, c)?;
    let r = spec.x_dim();
    let mut out = Array2::zeros((n, r));
    for i in 0..n {
        let row = spec.x_eval(net, i, w, c);
        if row.len() != r {
            return Err(Error::DimensionMismatch(format!(
                "feature spec {:?} returned {} treatment features for unit {i}, declared {r}",
                spec.name(),
                row.len()
            )));
        }
        for (k, v) in row.into_iter().enumerate() {
            out[(i, k)] = v;
        }
    }
    Ok(out)
}

/// Evaluates confounder features for all units.
pub fn compute_z_features(
    net: &Network,
    spec: &dyn FeatureSpec,
    c: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let n = net.n();
    if c.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "confounder matrix has {} rows for {} units",
            c.nrows(),
            n
        )));
    }
    let t = spec.z_dim();
    let mut out = Array2::zeros((n, t));
    for i in 0..n {
        let row = spec.z_eval(net, i, c);
        if row.len() != t {
            return Err(Error::DimensionMismatch(format!(
                "feature spec {:?} returned {} confounder features for unit {i}, declared {t}",
                spec.name(),
                row.len()
            )));
        }
        for (k, v) in row.into_iter().enumerate() {
            out[(i, k)] = v;
        }
    }
    Ok(out)
}

fn check_unit_inputs(n: usize, w: &[u8], c: ArrayView2<f64>) -> Result<()> {
    if w.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "treatment vector has {} entries for {} units",
            w.len(),
            n
        )));
    }
    if c.nrows() != n {
        return Err(Error::DimensionMismatch(format!(
            "confounder matrix has {} rows for {} units",
            c.nrows(),
            n
        )));
    }
    Ok(())
}

/// Derives the dependency graph of a feature spec over a network.
///
/// Units `i != j` are joined when either
///
/// 1. some third unit `m` has its treatment or confounder in both `X_i` and
///    `X_j` footprints, or its confounder in both `Z_i` and `Z_j` footprints
///    (a shared source), or
/// 2. `i`'s treatment or confounder enters `X_j` or `Z_j`, or vice versa
///    (direct spillover).
pub fn derive_dependency_graph(net: &Network, spec: &dyn FeatureSpec) -> DependencyGraph {
    derive_dependency_graph_with(net, spec, false)
}

/// As [`derive_dependency_graph`]; with `conservative` set, additionally
/// joins `i` and `j` when some third unit's confounder appears in `X_i` and
/// in `Z_j` (or vice versa). The defining conditions pair X with X and Z
/// with Z only, which is what the default reproduces; the conservative mode
/// also covers mixed X/Z sharing at the price of a denser graph.
pub fn derive_dependency_graph_with(
    net: &Network,
    spec: &dyn FeatureSpec,
    conservative: bool,
) -> DependencyGraph {
    let n = net.n();
    // x_sources[m]: units whose X footprint contains m (treatment or
    // confounder); z_sources[m]: units whose Z footprint contains m.
    let mut x_sources: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut z_sources: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];

    for i in 0..n {
        let fp = spec.x_footprint(net, i);
        let mut x_units = fp.w_units;
        x_units.extend_from_slice(&fp.c_units);
        x_units.sort_unstable();
        x_units.dedup();
        for &m in &x_units {
            assert!(m < n, "x footprint of unit {i} names out-of-range unit {m}");
            x_sources[m].push(i);
            // Condition 2: m's variable feeds X_i directly.
            if m != i {
                adj[i].push(m);
                adj[m].push(i);
            }
        }
        for m in spec.z_footprint(net, i) {
            assert!(m < n, "z footprint of unit {i} names out-of-range unit {m}");
            z_sources[m].push(i);
            if m != i {
                adj[i].push(m);
                adj[m].push(i);
            }
        }
    }

    // Condition 1: clique over the units sourcing from m, excluding m itself.
    let clique = |sources: &[usize], m: usize, adj: &mut Vec<Vec<usize>>| {
        for (a, &i) in sources.iter().enumerate() {
            if i == m {
                continue;
            }
            for &j in &sources[a + 1..] {
                if j == m || j == i {
                    continue;
                }
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    };
    for m in 0..n {
        clique(&x_sources[m], m, &mut adj);
        clique(&z_sources[m], m, &mut adj);
        if conservative {
            for &i in &x_sources[m] {
                if i == m {
                    continue;
                }
                for &j in &z_sources[m] {
                    if j == m || j == i {
                        continue;
                    }
                    adj[i].push(j);
                    adj[j].push(i);
                }
            }
        }
    }

    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    DependencyGraph { n, adj }
}

/// Fraction of treated direct neighbors; 0 for isolated units. One treatment
/// feature, no confounder features.
#[derive(Debug, Clone, Copy, Default)]
pub struct FracTreatedNeighbors;

impl FeatureSpec for FracTreatedNeighbors {
    fn x_dim(&self) -> usize {
        1
    }
    fn z_dim(&self) -> usize {
        0
    }
    fn x_footprint(&self, net: &Network, i: usize) -> Footprint {
        Footprint { w_units: net.neighbors(i).to_vec(), c_units: Vec::new() }
    }
    fn z_footprint(&self, _net: &Network, _i: usize) -> Vec<usize> {
        Vec::new()
    }
    fn x_eval(&self, net: &Network, i: usize, w: &[u8], _c: ArrayView2<f64>) -> Vec<f64> {
        vec![treated_fraction(net.neighbors(i), w)]
    }
    fn z_eval(&self, _net: &Network, _i: usize, _c: ArrayView2<f64>) -> Vec<f64> {
        Vec::new()
    }
    fn name(&self) -> &'static str {
        "frac_treated"
    }
}

/// Treated fractions over the first and second neighborhood; 0 for empty
/// tiers. Two treatment features, no confounder features.
#[derive(Debug, Clone, Copy, Default)]
pub struct TwoHopTreatedFractions;

impl FeatureSpec for TwoHopTreatedFractions {
    fn x_dim(&self) -> usize {
        2
    }
    fn z_dim(&self) -> usize {
        0
    }
    fn x_footprint(&self, net: &Network, i: usize) -> Footprint {
        let mut w_units = net.neighbors(i).to_vec();
        w_units.extend(net.second_neighbors(i));
        w_units.sort_unstable();
        Footprint { w_units, c_units: Vec::new() }
    }
    fn z_footprint(&self, _net: &Network, _i: usize) -> Vec<usize> {
        Vec::new()
    }
    fn x_eval(&self, net: &Network, i: usize, w: &[u8], _c: ArrayView2<f64>) -> Vec<f64> {
        vec![
            treated_fraction(net.neighbors(i), w),
            treated_fraction(&net.second_neighbors(i), w),
        ]
    }
    fn z_eval(&self, _net: &Network, _i: usize, _c: ArrayView2<f64>) -> Vec<f64> {
        Vec::new()
    }
    fn name(&self) -> &'static str {
        "two_hop_frac"
    }
}

/// Mean over direct neighbors of the first confounder coordinate signed by
/// treatment status, `(1/deg) * sum_j (+-1) * c_j`; 0 for isolated units.
/// One treatment feature, no confounder features.
#[derive(Debug, Clone, Copy, Default)]
pub struct SignedNeighborMean;

impl FeatureSpec for SignedNeighborMean {
    fn x_dim(&self) -> usize {
        1
    }
    fn z_dim(&self) -> usize {
        0
    }
    fn x_footprint(&self, net: &Network, i: usize) -> Footprint {
        let units = net.neighbors(i).to_vec();
        Footprint { w_units: units.clone(), c_units: units }
    }
    fn z_footprint(&self, _net: &Network, _i: usize) -> Vec<usize> {
        Vec::new()
    }
    fn x_eval(&self, net: &Network, i: usize, w: &[u8], c: ArrayView2<f64>) -> Vec<f64> {
        let nb = net.neighbors(i);
        if nb.is_empty() {
            return vec![0.0];
        }
        let sum: f64 = nb
            .iter()
            .map(|&j| if w[j] == 1 { c[(j, 0)] } else { -c[(j, 0)] })
            .sum();
        vec![sum / nb.len() as f64]
    }
    fn z_eval(&self, _net: &Network, _i: usize, _c: ArrayView2<f64>) -> Vec<f64> {
        Vec::new()
    }
    fn name(&self) -> &'static str {
        "signed_neighbor_mean"
    }
}

/// Mean over direct neighbors of the first confounder coordinate; 0 for
/// isolated units. One confounder feature, no treatment features.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeighborConfounderMean;

impl FeatureSpec for NeighborConfounderMean {
    fn x_dim(&self) -> usize {
        0
    }
    fn z_dim(&self) -> usize {
        1
    }
    fn x_footprint(&self, _net: &Network, _i: usize) -> Footprint {
        Footprint::default()
    }
    fn z_footprint(&self, net: &Network, i: usize) -> Vec<usize> {
        net.neighbors(i).to_vec()
    }
    fn x_eval(&self, _net: &Network, _i: usize, _w: &[u8], _c: ArrayView2<f64>) -> Vec<f64> {
        Vec::new()
    }
    fn z_eval(&self, net: &Network, i: usize, c: ArrayView2<f64>) -> Vec<f64> {
        let nb = net.neighbors(i);
        if nb.is_empty() {
            return vec![0.0];
        }
        vec![nb.iter().map(|&j| c[(j, 0)]).sum::<f64>() / nb.len() as f64]
    }
    fn name(&self) -> &'static str {
        "neighbor_conf_mean"
    }
}

fn treated_fraction(units: &[usize], w: &[u8]) -> f64 {
    if units.is_empty() {
        return 0.0;
    }
    let treated = units.iter().filter(|&&j| w[j] == 1).count();
    treated as f64 / units.len() as f64
}

/// The built-in feature specs, each carrying its registry name.
pub fn builtin_feature_specs() -> Vec<std::sync::Arc<dyn FeatureSpec>> {
    vec![
        std::sync::Arc::new(FracTreatedNeighbors),
        std::sync::Arc::new(TwoHopTreatedFractions),
        std::sync::Arc::new(SignedNeighborMean),
        std::sync::Arc::new(NeighborConfounderMean),
    ]
}

/// Looks up a built-in feature spec by registry name.
pub fn feature_spec_by_name(name: &str) -> Option<std::sync::Arc<dyn FeatureSpec>> {
    builtin_feature_specs().into_iter().find(|s| s.name() == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::new_network;
    use ndarray::Array2;

    fn chain4() -> Network {
        new_network(4, &[(0, 1), (1, 2), (2, 3)]).unwrap()
    }

    /// Nine units, tree-shaped; unit 5 (sixth unit) has neighbors {1, 4, 6}
    /// and second neighbors {0, 2, 7}.
    fn nine_unit_fixture() -> Network {
        new_network(
            9,
            &[(0, 1), (1, 2), (2, 3), (1, 5), (4, 5), (5, 6), (6, 7), (7, 8)],
        )
        .unwrap()
    }

    #[test]
    fn two_hop_fractions_on_fixture() {
        let net = nine_unit_fixture();
        assert_eq!(net.neighbors(5), &[1, 4, 6]);
        assert_eq!(net.second_neighbors(5), vec![0, 2, 7]);
        // Treated: units 0, 1, 2. One of {1, 4, 6}, two of {0, 2, 7}.
        let w = [1u8, 1, 1, 0, 0, 0, 0, 0, 0];
        let c = Array2::zeros((9, 1));
        let x = compute_x_features(&net, &TwoHopTreatedFractions, &w, c.view()).unwrap();
        assert_eq!(x[(5, 0)], 1.0 / 3.0);
        assert_eq!(x[(5, 1)], 2.0 / 3.0);
        let x1 = compute_x_features(&net, &FracTreatedNeighbors, &w, c.view()).unwrap();
        assert_eq!(x1[(5, 0)], 1.0 / 3.0);
    }

    #[test]
    fn signed_neighbor_mean_example() {
        // Two neighbors, one treated with c = 0.4, one control with c = 0.6.
        let net = new_network(3, &[(0, 1), (0, 2)]).unwrap();
        let w = [0u8, 1, 0];
        let mut c = Array2::zeros((3, 1));
        c[(1, 0)] = 0.4;
        c[(2, 0)] = 0.6;
        let x = compute_x_features(&net, &SignedNeighborMean, &w, c.view()).unwrap();
        assert!((x[(0, 0)] - (-0.1)).abs() < 1e-15);
    }

    #[test]
    fn isolated_units_get_zero_features() {
        let net = new_network(3, &[(0, 1)]).unwrap();
        let w = [1u8, 1, 1];
        let c = Array2::from_elem((3, 1), 0.7);
        for spec in builtin_feature_specs() {
            let x = compute_x_features(&net, spec.as_ref(), &w, c.view()).unwrap();
            let z = compute_z_features(&net, spec.as_ref(), c.view()).unwrap();
            for k in 0..spec.x_dim() {
                assert_eq!(x[(2, k)], 0.0, "{} x[{k}]", spec.name());
            }
            for k in 0..spec.z_dim() {
                assert_eq!(z[(2, k)], 0.0, "{} z[{k}]", spec.name());
            }
        }
    }

    #[test]
    fn neighbor_confounder_mean_on_chain() {
        let net = new_network(3, &[(0, 1), (1, 2)]).unwrap();
        let mut c = Array2::zeros((3, 1));
        c[(0, 0)] = 0.0;
        c[(1, 0)] = 0.5;
        c[(2, 0)] = 1.0;
        let z = compute_z_features(&net, &NeighborConfounderMean, c.view()).unwrap();
        assert_eq!(z[(1, 0)], 0.5);
        assert_eq!(z[(0, 0)], 0.5);
        assert_eq!(z[(2, 0)], 0.5);
    }

    #[test]
    fn dependency_graph_on_chain_with_frac_treated() {
        // Chain of four units: direct spillover joins lattice neighbors;
        // sharing a neighbor joins the two ends of each path of length two.
        // The extreme pair (0, 3) shares nothing and stays disconnected.
        let gd = derive_dependency_graph(&chain4(), &FracTreatedNeighbors);
        let edges = gd.edges();
        assert_eq!(edges, vec![(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)]);
        assert!(!gd.has_edge(0, 3));
        assert_eq!(gd.d_max(), 3);
    }

    #[test]
    fn dependency_graph_star_is_complete() {
        let star = new_network(4, &[(0, 1), (0, 2), (0, 3)]).unwrap();
        let gd = derive_dependency_graph(&star, &FracTreatedNeighbors);
        // Brute-force footprint-overlap oracle.
        let spec = FracTreatedNeighbors;
        for i in 0..4 {
            for j in (i + 1)..4 {
                let fi = spec.x_footprint(&star, i).w_units;
                let fj = spec.x_footprint(&star, j).w_units;
                let shared = fi.iter().any(|m| *m != i && *m != j && fj.contains(m));
                let direct = fi.contains(&j) || fj.contains(&i);
                assert_eq!(gd.has_edge(i, j), shared || direct, "pair ({i}, {j})");
                assert!(gd.has_edge(i, j));
            }
        }
    }

    #[test]
    fn dependency_graph_empty_network_has_no_edges() {
        let net = new_network(6, &[]).unwrap();
        for spec in builtin_feature_specs() {
            let gd = derive_dependency_graph(&net, spec.as_ref());
            assert_eq!(gd.edge_count(), 0, "{}", spec.name());
            assert_eq!(gd.d_max(), 0);
        }
    }

    #[test]
    fn dependency_graph_symmetric_without_self_loops() {
        let net = crate::graph::gen_erdos_renyi(80, 0.05, 3).unwrap();
        for spec in builtin_feature_specs() {
            let gd = derive_dependency_graph(&net, spec.as_ref());
            for i in 0..gd.n() {
                assert!(!gd.has_edge(i, i));
                for &j in gd.neighbors(i) {
                    assert!(gd.has_edge(j, i));
                }
            }
        }
    }

    #[test]
    fn conservative_mode_adds_mixed_sharing_edges() {
        // Units 1 and 2 both touch unit 0's confounder, unit 1 through X
        // (signed mean) and unit 2 through Z (confounder mean). A spec
        // carrying both maps would join them only in conservative mode.
        struct Mixed;
        impl FeatureSpec for Mixed {
            fn x_dim(&self) -> usize {
                1
            }
            fn z_dim(&self) -> usize {
                1
            }
            fn x_footprint(&self, _net: &Network, i: usize) -> Footprint {
                if i == 1 {
                    Footprint { w_units: vec![], c_units: vec![0] }
                } else {
                    Footprint::default()
                }
            }
            fn z_footprint(&self, _net: &Network, i: usize) -> Vec<usize> {
                if i == 2 {
                    vec![0]
                } else {
                    Vec::new()
                }
            }
            fn x_eval(&self, _net: &Network, i: usize, _w: &[u8], c: ArrayView2<f64>) -> Vec<f64> {
                vec![if i == 1 { c[(0, 0)] } else { 0.0 }]
            }
            fn z_eval(&self, _net: &Network, i: usize, c: ArrayView2<f64>) -> Vec<f64> {
                vec![if i == 2 { c[(0, 0)] } else { 0.0 }]
            }
            fn name(&self) -> &'static str {
                "mixed_test_spec"
            }
        }
        let net = new_network(3, &[]).unwrap();
        let plain = derive_dependency_graph(&net, &Mixed);
        assert!(!plain.has_edge(1, 2));
        assert!(plain.has_edge(0, 1) && plain.has_edge(0, 2));
        let cons = derive_dependency_graph_with(&net, &Mixed, true);
        assert!(cons.has_edge(1, 2));
    }

    #[test]
    fn footprints_are_faithful_under_perturbation() {
        // Perturbing any variable outside a unit's footprint never changes
        // its features.
        use rand::Rng;
        let mut rng = crate::seeds::rng(99);
        let specs = builtin_feature_specs();
        for trial in 0..1200 {
            let n = rng.gen_range(2..30);
            let p = rng.gen_range(0.0..0.4);
            let net = crate::graph::gen_erdos_renyi(n, p, rng.gen()).unwrap();
            let w: Vec<u8> = (0..n).map(|_| rng.gen_range(0..2) as u8).collect();
            let c = Array2::from_shape_fn((n, 1), |_| rng.gen::<f64>());
            let spec = &specs[trial % specs.len()];
            let i = rng.gen_range(0..n);
            let x_before = spec.x_eval(&net, i, &w, c.view());
            let z_before = spec.z_eval(&net, i, c.view());
            let fp = spec.x_footprint(&net, i);
            let zfp = spec.z_footprint(&net, i);

            let j = rng.gen_range(0..n);
            let mut w2 = w.clone();
            w2[j] ^= 1;
            if !fp.w_units.contains(&j) {
                assert_eq!(spec.x_eval(&net, i, &w2, c.view()), x_before, "{} w", spec.name());
            }
            let mut c2 = c.clone();
            c2[(j, 0)] = rng.gen::<f64>() + 2.0;
            if !fp.c_units.contains(&j) {
                assert_eq!(spec.x_eval(&net, i, &w, c2.view()), x_before, "{} c/x", spec.name());
            }
            if !zfp.contains(&j) {
                assert_eq!(spec.z_eval(&net, i, c2.view()), z_before, "{} c/z", spec.name());
            }
        }
    }

    #[test]
    fn compute_features_validate_dimensions() {
        let net = chain4();
        let c = Array2::zeros((3, 1));
        assert!(matches!(
            compute_x_features(&net, &FracTreatedNeighbors, &[0, 1, 0, 1], c.view()),
            Err(Error::DimensionMismatch(_))
        ));
        let c4 = Array2::zeros((4, 1));
        assert!(matches!(
            compute_x_features(&net, &FracTreatedNeighbors, &[0, 1], c4.view()),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn registry_finds_builtins() {
        for spec in builtin_feature_specs() {
            let found = feature_spec_by_name(spec.name()).unwrap();
            assert_eq!(found.name(), spec.name());
            assert_eq!(found.x_dim(), spec.x_dim());
        }
        assert!(feature_spec_by_name("no_such_spec").is_none());
    }
}
