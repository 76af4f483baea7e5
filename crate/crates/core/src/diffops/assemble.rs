//! Explicit sparse operators. These follow the auxiliary-graph messages
//! literally (midpoint positions and vertex–midpoint distances) and serve as
//! the reference route for the fused sweep.

use ndarray::{s, Array2};

use super::{check_inputs, DiffFeatures, LENGTH_EPS, NUM_TERMS};
use crate::geometry::Graph;
use crate::sparse::SparseOperator;
use crate::{Error, Result};

fn midpoint(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0, (a[2] + b[2]) / 2.0]
}

/// Distance from a vertex to its edge midpoint, with the ε-guard applied to
/// the full edge length.
fn half_length(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
    d.max(LENGTH_EPS) / 2.0
}

/// Stacked per-axis gradient `[∂x; ∂y; ∂z]`, shape `3|E| × |V|`.
///
/// Row `b·|E| + e` holds the sum of the two vertex→midpoint messages
/// `f_v (b(v) − b(e)) / (2 dist(v, e))`.
pub fn assemble_gradient(graph: &Graph, positions: &[[f64; 3]]) -> Result<SparseOperator> {
    check_inputs(graph, positions)?;
    let ne = graph.num_edges();
    let mut trip = Vec::with_capacity(6 * ne);
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        let (pi, pj) = (positions[i], positions[j]);
        let m = midpoint(pi, pj);
        let h = half_length(pi, pj);
        for b in 0..3 {
            trip.push((b * ne + e, i, (pi[b] - m[b]) / (2.0 * h)));
            trip.push((b * ne + e, j, (pj[b] - m[b]) / (2.0 * h)));
        }
    }
    SparseOperator::from_triplets(3 * ne, graph.num_vertices(), trip)
}

/// Block-diagonal edge mean, shape `3|V| × 3|E|`. Isolated vertices give a
/// zero row.
pub fn assemble_edge_average(graph: &Graph) -> Result<SparseOperator> {
    let (nv, ne) = (graph.num_vertices(), graph.num_edges());
    let mut trip = Vec::with_capacity(6 * ne);
    for v in 0..nv {
        let inc = graph.incident_edges(v);
        if inc.is_empty() {
            continue;
        }
        let w = 1.0 / inc.len() as f64;
        for b in 0..3 {
            trip.extend(inc.iter().map(|&e| (b * nv + v, b * ne + e, w)));
        }
    }
    SparseOperator::from_triplets(3 * nv, 3 * ne, trip)
}

/// Block-diagonal transposed derivative with mean normalization, shape
/// `3|V| × 3|E|`: row `b·|V| + v`, column `b·|E| + e` holds
/// `(b(e) − b(v)) / (2 dist(v, e)) / |N_e(v)|`.
pub fn assemble_transposed_derivative(graph: &Graph, positions: &[[f64; 3]]) -> Result<SparseOperator> {
    check_inputs(graph, positions)?;
    let (nv, ne) = (graph.num_vertices(), graph.num_edges());
    let mut trip = Vec::with_capacity(6 * ne);
    for v in 0..nv {
        let inc = graph.incident_edges(v);
        if inc.is_empty() {
            continue;
        }
        let inv = 1.0 / inc.len() as f64;
        for &e in inc {
            let (i, j) = graph.edges()[e];
            let m = midpoint(positions[i], positions[j]);
            let h = half_length(positions[i], positions[j]);
            for b in 0..3 {
                let val = (m[b] - positions[v][b]) / (2.0 * h) * inv;
                trip.push((b * nv + v, b * ne + e, val));
            }
        }
    }
    SparseOperator::from_triplets(3 * nv, 3 * ne, trip)
}

/// Differential features by explicit sparse products: `∇F` is `3|E| × c`,
/// then `A·∇F` and `T·∇F` are `3|V| × c`, regrouped per axis.
pub fn diff_features_reference(
    graph: &Graph,
    positions: &[[f64; 3]],
    f: &Array2<f64>,
) -> Result<DiffFeatures> {
    if f.nrows() != graph.num_vertices() {
        return Err(Error::dims(format!(
            "features have {} rows, graph has {} vertices",
            f.nrows(),
            graph.num_vertices()
        )));
    }
    let grad = assemble_gradient(graph, positions)?;
    let avg = assemble_edge_average(graph)?;
    let tder = assemble_transposed_derivative(graph, positions)?;
    let edge_grad = grad.mul_dense(f)?;
    let g = avg.mul_dense(&edge_grad)?;
    let l = tder.mul_dense(&edge_grad)?;

    let (n, c) = f.dim();
    let mut out = Array2::zeros((n, NUM_TERMS * c));
    out.slice_mut(s![.., 0..c]).assign(f);
    for b in 0..3 {
        out.slice_mut(s![.., (1 + b) * c..(2 + b) * c])
            .assign(&g.slice(s![b * n..(b + 1) * n, ..]));
        out.slice_mut(s![.., (4 + b) * c..(5 + b) * c])
            .assign(&l.slice(s![b * n..(b + 1) * n, ..]));
    }
    DiffFeatures::from_array(out, c)
}
