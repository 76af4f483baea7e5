//! Aggregation-based pooling and unpooling.
//!
//! Fine vertices are grouped by greedy heavy-edge matching into aggregates
//! of one or two vertices. With the 0/1 restriction `R` (coarse × fine):
//!
//! * features pool as `R·X` (sum over each aggregate),
//! * adjacency coarsens by the Galerkin product `R·A·Rᵀ`, keeping the
//!   diagonal as intra-aggregate weight,
//! * unpooling uses the smoothed prolongation `P = (I − D⁻¹L)·Rᵀ`, where
//!   `D` holds the row sums of `A` and `L = D − A`.

mod hierarchy;

pub use hierarchy::{build_hierarchy, coarsen, Hierarchy, HierarchySummary, Level, Transfer};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::Graph;
use crate::sparse::SparseOperator;
use crate::{Error, Positions, Result};

/// Added to edge lengths before inverting them into matching weights.
pub const WEIGHT_EPS: f64 = 1e-12;

/// Partition of fine vertices into coarse aggregates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Aggregation {
    assignment: Vec<usize>,
    num_coarse: usize,
}

impl Aggregation {
    /// Validates that `assignment` uses every index in `0..num_coarse`.
    pub fn from_assignment(assignment: Vec<usize>) -> Result<Self> {
        let num_coarse = assignment.iter().max().map_or(0, |m| m + 1);
        let mut used = vec![false; num_coarse];
        for &a in &assignment {
            used[a] = true;
        }
        if used.iter().any(|u| !u) {
            return Err(Error::invalid("aggregate indices are not contiguous"));
        }
        Ok(Aggregation { assignment, num_coarse })
    }

    /// Every vertex its own aggregate.
    pub fn singletons(n: usize) -> Self {
        Aggregation { assignment: (0..n).collect(), num_coarse: n }
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn num_fine(&self) -> usize {
        self.assignment.len()
    }

    pub fn num_coarse(&self) -> usize {
        self.num_coarse
    }

    /// Members of each aggregate, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.num_coarse];
        for (i, &a) in self.assignment.iter().enumerate() {
            m[a].push(i);
        }
        m
    }
}

/// Order in which the matching visits vertices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VisitOrder {
    /// `0, 1, 2, ...`
    Natural,
    /// Seeded random permutation.
    Shuffled(u64),
}

impl VisitOrder {
    pub fn permutation(self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        if let VisitOrder::Shuffled(seed) = self {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        order
    }
}

/// Default matching weights `1 / (length + ε)`, one per edge.
pub fn distance_weights(graph: &Graph, positions: &[[f64; 3]]) -> Vec<f64> {
    graph
        .edges()
        .iter()
        .map(|&(i, j)| {
            let (a, b) = (positions[i], positions[j]);
            let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
            1.0 / (d + WEIGHT_EPS)
        })
        .collect()
}

/// Greedy heavy-edge matching.
pub fn graclus_cluster(graph: &Graph, edge_weights: &[f64], order: VisitOrder) -> Result<Aggregation> {
    graclus_cluster_in_order(graph, edge_weights, &order.permutation(graph.num_vertices()))
}

/// Matching with an explicit visit order: each unmatched vertex joins its
/// unmatched neighbour of largest weight (ties to the smaller index), or
/// stays a singleton. Aggregates are numbered by their smallest member.
pub fn graclus_cluster_in_order(graph: &Graph, edge_weights: &[f64], order: &[usize]) -> Result<Aggregation> {
    let n = graph.num_vertices();
    if edge_weights.len() != graph.num_edges() {
        return Err(Error::dims(format!(
            "{} weights for {} edges",
            edge_weights.len(),
            graph.num_edges()
        )));
    }
    let mut seen = vec![false; n];
    if order.len() != n || order.iter().any(|&v| v >= n || std::mem::replace(&mut seen[v], true)) {
        return Err(Error::invalid("visit order is not a permutation of the vertices"));
    }
    let mut mate: Vec<Option<usize>> = vec![None; n];
    let mut matched = vec![false; n];
    for &v in order {
        if matched[v] {
            continue;
        }
        matched[v] = true;
        let mut best: Option<(f64, usize)> = None;
        for &e in graph.incident_edges(v) {
            let u = graph.other(e, v);
            if matched[u] {
                continue;
            }
            let w = edge_weights[e];
            best = match best {
                Some((bw, bu)) if bw > w || (bw == w && bu < u) => Some((bw, bu)),
                _ => Some((w, u)),
            };
        }
        if let Some((_, u)) = best {
            matched[u] = true;
            mate[v] = Some(u);
            mate[u] = Some(v);
        }
    }
    let mut assignment = vec![usize::MAX; n];
    let mut next = 0;
    for v in 0..n {
        if assignment[v] != usize::MAX {
            continue;
        }
        assignment[v] = next;
        if let Some(u) = mate[v] {
            assignment[u] = next;
        }
        next += 1;
    }
    Ok(Aggregation { assignment, num_coarse: next })
}

/// `R[J, i] = 1` iff fine vertex `i` belongs to aggregate `J`.
pub fn restriction_matrix(agg: &Aggregation) -> SparseOperator {
    let trip = agg.assignment.iter().enumerate().map(|(i, &j)| (j, i, 1.0)).collect();
    SparseOperator::from_triplets(agg.num_coarse, agg.num_fine(), trip).expect("valid aggregation")
}

/// Symmetric 0/1 adjacency of a graph.
pub fn adjacency_matrix(graph: &Graph) -> SparseOperator {
    let trip = graph
        .edges()
        .iter()
        .flat_map(|&(i, j)| [(i, j, 1.0), (j, i, 1.0)])
        .collect();
    SparseOperator::from_triplets(graph.num_vertices(), graph.num_vertices(), trip).expect("valid graph")
}

/// How pooled features combine aggregate members.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    #[default]
    Sum,
    Mean,
}

/// Galerkin coarsening of features and adjacency: `(R·X, R·A·Rᵀ)`.
pub fn pool(r: &SparseOperator, x: &Array2<f64>, a: &SparseOperator) -> Result<(Array2<f64>, SparseOperator)> {
    pool_with(r, x, a, PoolMode::Sum)
}

pub fn pool_with(
    r: &SparseOperator,
    x: &Array2<f64>,
    a: &SparseOperator,
    mode: PoolMode,
) -> Result<(Array2<f64>, SparseOperator)> {
    if a.n_rows() != r.n_cols() || a.n_cols() != r.n_cols() {
        return Err(Error::dims(format!(
            "adjacency {:?} does not match restriction {:?}",
            a.shape(),
            r.shape()
        )));
    }
    let mut xc = r.mul_dense(x)?;
    if mode == PoolMode::Mean {
        for (mut row, s) in xc.rows_mut().into_iter().zip(r.row_sums()) {
            if s > 0.0 {
                row /= s;
            }
        }
    }
    let ac = r.matmul(a)?.matmul(&r.transpose())?;
    Ok((xc, ac))
}

/// Per-aggregate mean of the fine positions.
pub fn coarse_positions(agg: &Aggregation, positions: &[[f64; 3]]) -> Result<Positions> {
    if positions.len() != agg.num_fine() {
        return Err(Error::dims(format!(
            "{} positions for {} fine vertices",
            positions.len(),
            agg.num_fine()
        )));
    }
    Ok(agg
        .members()
        .iter()
        .map(|m| {
            let k = m.len() as f64;
            let mut c = [0.0; 3];
            for &i in m {
                for d in 0..3 {
                    c[d] += positions[i][d];
                }
            }
            c.map(|v| v / k)
        })
        .collect())
}

/// Graph on the support of the off-diagonal entries of a coarse adjacency.
pub fn coarse_graph(a_coarse: &SparseOperator) -> Result<Graph> {
    let pairs: Vec<_> = a_coarse
        .triplets()
        .filter(|&(r, c, v)| r < c && v != 0.0)
        .map(|(r, c, _)| (r, c))
        .collect();
    Graph::from_edges(a_coarse.n_rows(), pairs)
}

/// `P = (I − D⁻¹L)·Rᵀ`. Rows of zero degree keep the identity.
pub fn smoothed_prolongation(r: &SparseOperator, a: &SparseOperator) -> Result<SparseOperator> {
    let n = r.n_cols();
    if a.shape() != (n, n) {
        return Err(Error::dims(format!(
            "adjacency {:?} does not match restriction {:?}",
            a.shape(),
            r.shape()
        )));
    }
    let degree = a.row_sums();
    let mut trip = Vec::with_capacity(a.nnz() + n);
    for i in 0..n {
        let d = degree[i];
        if d == 0.0 {
            trip.push((i, i, 1.0));
            continue;
        }
        // L = D − A, so (I − D⁻¹L)_ij = δ_ij − (δ_ij d − a_ij) / d = a_ij / d
        let mut diag = 0.0;
        for (j, aij) in a.row(i) {
            if j == i {
                diag += aij / d;
            } else {
                trip.push((i, j, aij / d));
            }
        }
        trip.push((i, i, diag));
    }
    let smoother = SparseOperator::from_triplets(n, n, trip)?;
    smoother.matmul(&r.transpose())
}

/// `X_fine = P·X_coarse`.
pub fn unpool(p: &SparseOperator, x_coarse: &Array2<f64>) -> Result<Array2<f64>> {
    p.mul_dense(x_coarse)
}

#[cfg(test)]
mod tests;
