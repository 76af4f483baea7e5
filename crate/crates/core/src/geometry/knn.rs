use ndarray::{Array2, ArrayView1};

use super::{check_finite, Graph};
use crate::{Error, Result};

/// Spatial k-nearest-neighbour graph.
///
/// Every vertex picks its `k` nearest other vertices (ties broken by the
/// smaller index); the directed picks are symmetrized by union. Coincident
/// points produce zero-length edges, which are kept and listed in
/// [`Graph::degenerate_edges`].
pub fn knn_graph(positions: &[[f64; 3]], k: usize) -> Result<Graph> {
    check_finite(positions)?;
    knn_by(positions.len(), k, |i, j| {
        let a = &positions[i];
        let b = &positions[j];
        (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
    })
}

/// k-NN graph in feature space (rows of `features`).
pub fn feature_knn_graph(features: &Array2<f64>, k: usize) -> Result<Graph> {
    if features.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite feature value"));
    }
    knn_by(features.nrows(), k, |i, j| {
        sq_dist(features.row(i), features.row(j))
    })
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn knn_by(n: usize, k: usize, dist2: impl Fn(usize, usize) -> f64) -> Result<Graph> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k >= n {
        return Err(Error::invalid(format!("k = {k} requires more than {k} points, got {n}")));
    }
    let mut pairs = Vec::with_capacity(n * k);
    let mut zero = Vec::new();
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        cand.clear();
        cand.extend((0..n).filter(|&j| j != i).map(|j| (dist2(i, j), j)));
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if cand.len() > k {
            cand.select_nth_unstable_by(k - 1, cmp);
        }
        for &(d, j) in &cand[..k] {
            pairs.push((i, j));
            if d == 0.0 {
                zero.push((i.min(j), i.max(j)));
            }
        }
    }
    let mut graph = Graph::from_edges(n, pairs)?;
    if !zero.is_empty() {
        zero.sort_unstable();
        zero.dedup();
        let ids: Vec<usize> = zero
            .iter()
            .map(|p| graph.edges().binary_search(p).expect("picked edge present"))
            .collect();
        log::warn!("k-NN graph has {} zero-length edges", ids.len());
        graph.set_degenerate(ids);
    }
    Ok(graph)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force reference: full sort of all candidates.
    fn brute_directed(points: &[[f64; 3]], k: usize) -> Vec<Vec<usize>> {
        (0..points.len())
            .map(|i| {
                let mut c: Vec<(f64, usize)> = (0..points.len())
                    .filter(|&j| j != i)
                    .map(|j| {
                        let d: f64 = (0..3).map(|a| (points[i][a] - points[j][a]).powi(2)).sum();
                        (d, j)
                    })
                    .collect();
                c.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                c.into_iter().take(k).map(|x| x.1).collect()
            })
            .collect()
    }

    #[test]
    fn collinear_k1() {
        let g = knn_graph(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], 1).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
        assert!(g.degenerate_edges().is_empty());
    }

    #[test]
    fn unit_square_k3_complete() {
        let sq = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 0.0]];
        let g = knn_graph(&sq, 3).unwrap();
        assert_eq!(g.num_edges(), 6);
    }

    #[test]
    fn coincident_points_flagged() {
        let pts = [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [3.0, 0.0, 0.0]];
        let g = knn_graph(&pts, 1).unwrap();
        // 0 -> 1 (d=0), 1 -> 0 (d=0), 2 -> 0 (tie with 1, smaller index)
        assert_eq!(g.edges(), &[(0, 1), (0, 2)]);
        assert_eq!(g.degenerate_edges(), &[0]);
    }

    #[test]
    fn k_too_large() {
        let pts = [[0.0; 3], [1.0, 0.0, 0.0]];
        assert!(matches!(knn_graph(&pts, 2), Err(Error::InvalidArgument(_))));
        assert!(knn_graph(&pts, 0).is_err());
    }

    #[test]
    fn feature_graph_1d() {
        let f = Array2::from_shape_vec((3, 1), vec![0.0, 0.1, 5.0]).unwrap();
        let g = feature_knn_graph(&f, 1).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2)]);
    }

    #[test]
    fn feature_graph_constant_ties() {
        let f = Array2::from_elem((5, 2), 1.5);
        let g = feature_knn_graph(&f, 1).unwrap();
        // vertex 0 picks 1, every other vertex picks 0
        assert_eq!(g.edges(), &[(0, 1), (0, 2), (0, 3), (0, 4)]);
    }

    #[test]
    fn feature_graph_matches_spatial() {
        let pts: Vec<[f64; 3]> = (0..12)
            .map(|i| {
                let t = i as f64;
                [t.sin(), (1.7 * t).cos(), 0.1 * t * t]
            })
            .collect();
        let f = super::super::positions_to_array(&pts);
        assert_eq!(knn_graph(&pts, 4).unwrap(), feature_knn_graph(&f, 4).unwrap());
    }

    proptest! {
        #[test]
        fn symmetric_loop_free_and_matches_brute_force(
            raw in proptest::collection::vec(-10.0f64..10.0, 3 * 8..3 * 40),
            k in 1usize..6,
        ) {
            let pts: Vec<[f64; 3]> = raw.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
            let g = knn_graph(&pts, k).unwrap();
            g.validate().unwrap();
            let picks = brute_directed(&pts, k);
            for (i, nbrs) in picks.iter().enumerate() {
                prop_assert!(g.degree(i) >= k);
                for &j in nbrs {
                    let e = (i.min(j), i.max(j));
                    prop_assert!(g.edges().binary_search(&e).is_ok());
                }
            }
            // every edge comes from a pick in at least one direction
            for &(i, j) in g.edges() {
                prop_assert!(i < j);
                prop_assert!(picks[i].contains(&j) || picks[j].contains(&i));
            }
        }
    }
}
