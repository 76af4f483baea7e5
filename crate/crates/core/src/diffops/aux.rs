use ndarray::Array2;

use super::{check_inputs, DiffFeatures, LENGTH_EPS, NUM_TERMS};
use crate::geometry::Graph;
use crate::{Error, Result};

/// Directed graph with one dummy vertex per edge midpoint. Original vertices
/// keep ids `0..|V|`; the midpoint of edge `e` is vertex `|V| + e`.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryGraph {
    pub num_original: usize,
    pub num_edges: usize,
    /// Positions of all `|V| + |E|` vertices.
    pub positions: Vec<[f64; 3]>,
    /// Vertex → midpoint arcs, two per edge.
    pub arcs: Vec<(usize, usize)>,
    /// Arc-flipped copy: midpoint → vertex.
    pub transposed_arcs: Vec<(usize, usize)>,
}

impl AuxiliaryGraph {
    pub fn num_vertices(&self) -> usize {
        self.num_original + self.num_edges
    }

    fn dist(&self, a: usize, b: usize) -> f64 {
        let (p, q) = (self.positions[a], self.positions[b]);
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2))
            .sqrt()
            .max(LENGTH_EPS / 2.0)
    }

    /// Two-stage message passing over the auxiliary graph and its
    /// transpose: sum aggregation of gradient messages on midpoints, then
    /// identity and edge-Laplacian messages back with mean aggregation.
    pub fn message_passing(&self, f: &Array2<f64>) -> Result<DiffFeatures> {
        let (nv, ne) = (self.num_original, self.num_edges);
        if f.nrows() != nv {
            return Err(Error::dims(format!("{} feature rows for {nv} vertices", f.nrows())));
        }
        let c = f.ncols();
        let mut edge_grad = vec![[0.0; 3]; ne * c];
        for &(v, m) in &self.arcs {
            let e = m - nv;
            let scale = 1.0 / (2.0 * self.dist(v, m));
            for b in 0..3 {
                let dir = self.positions[v][b] - self.positions[m][b];
                for ch in 0..c {
                    edge_grad[e * c + ch][b] += f[[v, ch]] * scale * dir;
                }
            }
        }
        let mut out = Array2::zeros((nv, NUM_TERMS * c));
        let mut count = vec![0usize; nv];
        for &(m, v) in &self.transposed_arcs {
            let e = m - nv;
            count[v] += 1;
            let scale = 1.0 / (2.0 * self.dist(v, m));
            for b in 0..3 {
                let dir = self.positions[m][b] - self.positions[v][b];
                for ch in 0..c {
                    let g = edge_grad[e * c + ch][b];
                    out[[v, (1 + b) * c + ch]] += g;
                    out[[v, (4 + b) * c + ch]] += g * scale * dir;
                }
            }
        }
        for v in 0..nv {
            for ch in 0..c {
                out[[v, ch]] = f[[v, ch]];
            }
            if count[v] > 0 {
                let inv = 1.0 / count[v] as f64;
                for k in c..NUM_TERMS * c {
                    out[[v, k]] *= inv;
                }
            }
        }
        DiffFeatures::from_array(out, c)
    }
}

pub fn build_auxiliary_graph(graph: &Graph, positions: &[[f64; 3]]) -> Result<AuxiliaryGraph> {
    check_inputs(graph, positions)?;
    let nv = graph.num_vertices();
    let mut all = positions.to_vec();
    let mut arcs = Vec::with_capacity(2 * graph.num_edges());
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        let (a, b) = (positions[i], positions[j]);
        all.push([(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0, (a[2] + b[2]) / 2.0]);
        arcs.push((i, nv + e));
        arcs.push((j, nv + e));
    }
    let transposed_arcs = arcs.iter().map(|&(a, b)| (b, a)).collect();
    Ok(AuxiliaryGraph {
        num_original: nv,
        num_edges: graph.num_edges(),
        positions: all,
        arcs,
        transposed_arcs,
    })
}
