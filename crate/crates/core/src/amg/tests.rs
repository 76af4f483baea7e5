use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::geometry::knn_graph;

fn path(n: usize) -> Graph {
    Graph::from_edges(n, (0..n - 1).map(|i| (i, i + 1))).unwrap()
}

fn path_positions(n: usize) -> Vec<[f64; 3]> {
    (0..n).map(|i| [i as f64, 0.0, 0.0]).collect()
}

fn random_graph(seed: u64, n: usize, k: usize) -> (Graph, Vec<[f64; 3]>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos: Vec<[f64; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    (knn_graph(&pos, k).unwrap(), pos)
}

/// Random symmetric nonnegative adjacency on the graph support. Weights are
/// multiples of 1/8 so every summation order is exact.
fn random_adjacency(graph: &Graph, seed: u64) -> SparseOperator {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trip = Vec::new();
    for &(i, j) in graph.edges() {
        let w = rng.random_range(1..32) as f64 / 8.0;
        trip.push((i, j, w));
        trip.push((j, i, w));
    }
    SparseOperator::from_triplets(graph.num_vertices(), graph.num_vertices(), trip).unwrap()
}

#[test]
fn path_matching_in_natural_order() {
    let g = path(4);
    let agg = graclus_cluster(&g, &[1.0; 3], VisitOrder::Natural).unwrap();
    assert_eq!(agg.members(), vec![vec![0, 1], vec![2, 3]]);
}

#[test]
fn edgeless_gives_singletons() {
    let agg = graclus_cluster(&Graph::empty(5), &[], VisitOrder::Shuffled(3)).unwrap();
    assert_eq!(agg, Aggregation::singletons(5));
}

#[test]
fn star_center_takes_smallest_leaf() {
    let g = Graph::from_edges(5, (1..5).map(|i| (0, i))).unwrap();
    let agg = graclus_cluster(&g, &[1.0; 4], VisitOrder::Natural).unwrap();
    assert_eq!(agg.members(), vec![vec![0, 1], vec![2], vec![3], vec![4]]);
}

#[test]
fn heavier_edge_wins() {
    let g = path(3);
    // vertex 1 visited first, edge (1,2) heavier
    let agg = graclus_cluster_in_order(&g, &[1.0, 5.0], &[1, 0, 2]).unwrap();
    assert_eq!(agg.members(), vec![vec![0], vec![1, 2]]);
    assert!(graclus_cluster_in_order(&g, &[1.0, 5.0], &[1, 1, 2]).is_err());
}

#[test]
fn restriction_examples() {
    let agg = Aggregation::from_assignment(vec![0, 0, 1, 1]).unwrap();
    let r = restriction_matrix(&agg);
    assert_eq!(r.to_dense(), array![[1.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 1.0]]);
    let r = restriction_matrix(&Aggregation::singletons(3));
    assert_eq!(r, SparseOperator::identity(3));
    assert!(Aggregation::from_assignment(vec![0, 2]).is_err());
}

#[test]
fn galerkin_on_path() {
    let g = path(4);
    let agg = Aggregation::from_assignment(vec![0, 0, 1, 1]).unwrap();
    let r = restriction_matrix(&agg);
    let x = array![[1.0], [2.0], [3.0], [4.0]];
    let (xc, ac) = pool(&r, &x, &adjacency_matrix(&g)).unwrap();
    assert_eq!(xc, array![[3.0], [7.0]]);
    assert_eq!(ac.to_dense(), array![[2.0, 1.0], [1.0, 2.0]]);

    let (xm, _) = pool_with(&r, &x, &adjacency_matrix(&g), PoolMode::Mean).unwrap();
    assert_eq!(xm, array![[1.5], [3.5]]);

    let bad = Array2::zeros((3, 1));
    assert!(pool(&r, &bad, &adjacency_matrix(&g)).is_err());
}

#[test]
fn prolongation_examples() {
    let g = path(2);
    let a = adjacency_matrix(&g);
    let r = restriction_matrix(&Aggregation::from_assignment(vec![0, 0]).unwrap());
    let p = smoothed_prolongation(&r, &a).unwrap();
    assert_eq!(p.to_dense(), array![[1.0], [1.0]]);

    let r = restriction_matrix(&Aggregation::singletons(3));
    let p = smoothed_prolongation(&r, &adjacency_matrix(&Graph::empty(3))).unwrap();
    assert_eq!(p, r.transpose());
}

#[test]
fn unpool_constant_and_piecewise() {
    let g = path(6);
    let agg = graclus_cluster(&g, &[1.0; 5], VisitOrder::Natural).unwrap();
    let r = restriction_matrix(&agg);
    let p = smoothed_prolongation(&r, &adjacency_matrix(&g)).unwrap();
    let c = Array2::from_elem((agg.num_coarse(), 2), 2.5);
    let fine = unpool(&p, &c).unwrap();
    assert!(fine.iter().all(|&v| (v - 2.5).abs() <= 1e-12));

    let xc = array![[1.0], [2.0], [3.0]];
    let pc = unpool(&r.transpose(), &xc).unwrap();
    assert_eq!(pc, array![[1.0], [1.0], [2.0], [2.0], [3.0], [3.0]]);
    assert!(unpool(&p, &Array2::zeros((3, 1))).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn hierarchy_on_path_of_eight() {
    let h = build_hierarchy(&path(8), &path_positions(8), 2, VisitOrder::Natural).unwrap();
    assert_eq!(h.level_sizes(), vec![8, 4, 2]);
    assert_eq!(h.levels[1].positions[0], [0.5, 0.0, 0.0]);
    let h1 = build_hierarchy(&path(8), &path_positions(8), 1, VisitOrder::Natural).unwrap();
    assert_eq!(h1.levels.len(), 2);
    let h0 = build_hierarchy(&Graph::empty(4), &[[0.0; 3]; 4], 3, VisitOrder::Natural).unwrap();
    assert_eq!(h0.achieved_depth(), 0);
    assert_eq!(h0.summary().level_sizes, vec![4]);
}

#[test]
fn hierarchy_stops_when_coarsest_is_edgeless() {
    let h = build_hierarchy(&path(2), &path_positions(2), 5, VisitOrder::Natural).unwrap();
    assert_eq!(h.level_sizes(), vec![2, 1]);
    assert_eq!(h.summary().achieved_depth, 1);
}

#[test]
fn coarse_counts_strictly_decrease() {
    let (g, pos) = random_graph(5, 60, 4);
    let h = build_hierarchy(&g, &pos, 6, VisitOrder::Shuffled(1)).unwrap();
    for w in h.level_sizes().windows(2) {
        assert!(w[1] < w[0]);
    }
    for (t, lv) in h.transfers.iter().zip(&h.levels) {
        assert_eq!(t.restriction.n_cols(), lv.graph.num_vertices());
        assert_eq!(t.prolongation.shape(), (lv.graph.num_vertices(), t.aggregation.num_coarse()));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn galerkin_matches_double_sum(seed in 0u64..100_000, n in 3usize..30, k in 1usize..4) {
        let k = k.min(n - 1);
        let (g, pos) = random_graph(seed, n, k);
        let a = random_adjacency(&g, seed ^ 0xabc);
        let agg = graclus_cluster(&g, &distance_weights(&g, &pos), VisitOrder::Shuffled(seed)).unwrap();
        let members = agg.members();
        prop_assert!(members.iter().all(|m| !m.is_empty() && m.len() <= 2));
        prop_assert_eq!(members.iter().map(Vec::len).sum::<usize>(), n);

        let r = restriction_matrix(&agg);
        prop_assert!(r.transpose().row_sums().iter().all(|&s| s == 1.0));
        let x = Array2::from_shape_fn((n, 2), |(i, c)| (i * 3 + c) as f64);
        let (xc, ac) = pool(&r, &x, &a).unwrap();
        let ad = a.to_dense();
        for (ci, mi) in members.iter().enumerate() {
            for (cj, mj) in members.iter().enumerate() {
                let mut s = 0.0;
                for &i in mi {
                    for &j in mj {
                        s += ad[[i, j]];
                    }
                }
                prop_assert_eq!(ac.get(ci, cj), s);
            }
            for c in 0..2 {
                prop_assert_eq!(xc[[ci, c]], mi.iter().map(|&i| x[[i, c]]).sum::<f64>());
            }
        }
        prop_assert!(ac.is_symmetric());
        prop_assert!(ac.triplets().all(|t| t.2 >= 0.0));

        let p = smoothed_prolongation(&r, &a).unwrap();
        prop_assert!(p.row_sums().iter().all(|s| (s - 1.0).abs() <= 1e-12));
    }

    #[test]
    fn singleton_pooling_is_identity(seed in 0u64..100_000, n in 2usize..25) {
        let (g, _) = random_graph(seed, n, 1);
        let a = random_adjacency(&g, seed);
        let r = restriction_matrix(&Aggregation::singletons(n));
        let x = Array2::from_shape_fn((n, 3), |(i, c)| (i as f64).sin() + c as f64);
        let (xc, ac) = pool(&r, &x, &a).unwrap();
        prop_assert_eq!(xc, x);
        prop_assert_eq!(ac, a);
    }
}
