use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

use coupled_diffusion::topology::{build_clusters, BlockLayout, ClusterMap, NetworkSpec};
use coupled_diffusion::weights::{
    averaging_weights, metropolis_weights, scaled_step_scaling, CombinationSet, StepScale, WeightRule,
};

/// Connected graph on `n` nodes: a random spanning tree plus extra edges.
fn connected_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (1usize..=8).prop_flat_map(|n| {
        let parents: Vec<_> = (1..n).map(|i| 0..i).collect();
        let extra = prop::collection::vec((0..n, 0..n), 0..12);
        (Just(n), parents, extra).prop_map(|(n, parents, extra)| {
            let mut edges: Vec<_> = parents.into_iter().enumerate().map(|(i, p)| (i + 1, p)).collect();
            edges.extend(extra.into_iter().filter(|(a, b)| a != b));
            (n, edges)
        })
    })
}

fn single_cluster(n: usize, edges: &[(usize, usize)]) -> (NetworkSpec, ClusterMap) {
    let net = NetworkSpec::new(n, edges.iter().copied(), vec![vec![0]; n]).unwrap();
    let cmap = build_clusters(&net, &BlockLayout::uniform(1, 1).unwrap()).unwrap();
    (net, cmap)
}

fn adjacency_with_self(net: &NetworkSpec) -> DMatrix<f64> {
    let n = net.agent_count();
    DMatrix::from_fn(n, n, |i, j| if net.in_neighborhood(i, j) { 1.0 } else { 0.0 })
}

/// Second-largest magnitude among the eigenvalues of a symmetric matrix.
fn second_magnitude(sym: DMatrix<f64>) -> f64 {
    let mut mags: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().map(|x| x.abs()).collect();
    mags.sort_by(|a, b| b.partial_cmp(a).unwrap());
    mags.get(1).copied().unwrap_or(0.0)
}

/// Null vector of `A − I` from the SVD, scaled to unit sum.
fn svd_perron(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let svd = (a - DMatrix::identity(n, n)).svd(true, true);
    let v_t = svd.v_t.unwrap();
    let idx = svd.singular_values.imin();
    let v: Vec<f64> = v_t.row(idx).iter().copied().collect();
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn metropolis_spectrum_matches_symmetric_oracle((n, edges) in connected_graph()) {
        let (net, cmap) = single_cluster(n, &edges);
        let m = metropolis_weights(&cmap, &net, 0).unwrap();
        let a = &m.entries;
        prop_assert!((a - a.transpose()).abs().max() == 0.0);
        for k in 0..n {
            prop_assert!((a.column(k).sum() - 1.0).abs() <= 1e-12);
            prop_assert!((a.row(k).sum() - 1.0).abs() <= 1e-12);
            for s in 0..n {
                if !net.in_neighborhood(k, s) {
                    prop_assert_eq!(a[(s, k)], 0.0);
                }
            }
        }
        let expected = second_magnitude(a.clone());
        prop_assert!((m.lambda2 - expected).abs() <= 1e-9, "{} vs {}", m.lambda2, expected);
        prop_assert!(m.lambda2 < 1.0);
        for &r in &m.perron {
            prop_assert!((r - 1.0 / n as f64).abs() <= 1e-12);
        }
    }

    #[test]
    fn averaging_spectrum_matches_similar_symmetric_matrix((n, edges) in connected_graph()) {
        let (net, cmap) = single_cluster(n, &edges);
        let m = averaging_weights(&cmap, &net, 0).unwrap();
        // A = S D⁻¹ is similar to D^{-1/2} S D^{-1/2}.
        let s = adjacency_with_self(&net);
        let deg: Vec<f64> = (0..n).map(|k| s.column(k).sum()).collect();
        let sym = DMatrix::from_fn(n, n, |i, j| s[(i, j)] / (deg[i] * deg[j]).sqrt());
        let expected = second_magnitude(sym);
        prop_assert!((m.lambda2 - expected).abs() <= 1e-9, "{} vs {}", m.lambda2, expected);
        prop_assert!(m.lambda2 < 1.0);
        let total: f64 = deg.iter().sum();
        for k in 0..n {
            prop_assert!((m.perron[k] - deg[k] / total).abs() <= 1e-12);
        }
    }

    #[test]
    fn perron_vector_matches_svd_null_space((n, edges) in connected_graph(), averaging in any::<bool>()) {
        let (net, cmap) = single_cluster(n, &edges);
        let m = if averaging {
            averaging_weights(&cmap, &net, 0).unwrap()
        } else {
            metropolis_weights(&cmap, &net, 0).unwrap()
        };
        let oracle = svd_perron(&m.entries);
        for (a, b) in m.perron.iter().zip(&oracle) {
            prop_assert!((a - b).abs() <= 1e-8, "{:?} vs {:?}", m.perron, oracle);
            prop_assert!(*a > 0.0);
        }
        prop_assert!((m.perron.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn absorbed_scaling_is_perron_over_cluster_size((n, edges) in connected_graph()) {
        let (net, cmap) = single_cluster(n, &edges);
        let set = CombinationSet::build(&cmap, &net, WeightRule::Averaging).unwrap();
        let perron = scaled_step_scaling(&cmap, &set, StepScale::Perron);
        let absorbed = scaled_step_scaling(&cmap, &set, StepScale::Absorbed);
        for (p, a) in perron.iter().zip(&absorbed) {
            prop_assert!((p.factors[0] / n as f64 - a.factors[0]).abs() <= 1e-12 * p.factors[0]);
        }
    }
}

#[test]
fn metropolis_absorbed_scaling_is_identity() {
    let (net, cmap) = single_cluster(4, &[(0, 1), (1, 2), (2, 3), (0, 2)]);
    let set = CombinationSet::build(&cmap, &net, WeightRule::Metropolis).unwrap();
    for s in scaled_step_scaling(&cmap, &set, StepScale::Absorbed) {
        assert!((s.factors[0] - 1.0).abs() < 1e-12);
    }
}

#[test]
fn star_lambda2_from_characteristic_polynomial() {
    // Metropolis star: [[1/3,1/3,1/3],[1/3,2/3,0],[1/3,0,2/3]]. The
    // characteristic polynomial factors as (λ−1)(λ−2/3)(λ+0).
    let (net, cmap) = single_cluster(3, &[(0, 1), (0, 2)]);
    let m = metropolis_weights(&cmap, &net, 0).unwrap();
    assert!((m.lambda2 - 2.0 / 3.0).abs() < 1e-12);
}
