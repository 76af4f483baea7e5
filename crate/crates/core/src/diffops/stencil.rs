use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;

use super::{DiffOperator, Term};
use crate::geometry::{Graph, PointCloud};
use crate::{Error, Result};

/// Lattice offset `(dx, dy, dz)` in units of the grid spacing.
pub type StencilOffset = [i64; 3];

/// Coefficients one differential-feature block applies around a vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    pub term: Term,
    pub vertex: usize,
    pub entries: BTreeMap<StencilOffset, f64>,
    /// The vertex lacks a neighbour on one side of some axis.
    pub boundary: bool,
}

impl Stencil {
    /// Largest coefficient magnitude outside the 7-point star.
    pub fn max_off_star(&self) -> f64 {
        self.entries
            .iter()
            .filter(|(o, _)| o.iter().filter(|&&x| x != 0).count() > 1 || o.iter().any(|x| x.abs() > 1))
            .fold(0.0, |m, (_, v)| m.max(v.abs()))
    }
}

/// Applies the operator to indicator features and reads off the
/// coefficients of `term` at `vertex`, keyed by lattice offset. The grid
/// spacing is taken as the shortest edge.
pub fn extract_stencil(cloud: &PointCloud, graph: &Graph, term: Term, vertex: usize) -> Result<Stencil> {
    let n = graph.num_vertices();
    if vertex >= n {
        return Err(Error::invalid(format!("vertex {vertex} out of range")));
    }
    let pos = &cloud.positions;
    let h = graph
        .edges()
        .iter()
        .map(|&(i, j)| dist(pos[i], pos[j]))
        .fold(f64::INFINITY, f64::min);
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::invalid("grid has no edges of positive length"));
    }
    let offset = |u: usize| -> StencilOffset {
        [0, 1, 2].map(|k| ((pos[u][k] - pos[vertex][k]) / h).round() as i64)
    };

    // only vertices within two hops can influence `vertex`
    let mut support = BTreeSet::from([vertex]);
    for u in graph.neighbors(vertex) {
        support.insert(u);
        support.extend(graph.neighbors(u));
    }
    let support: Vec<usize> = support.into_iter().collect();
    let mut indicators = Array2::zeros((n, support.len()));
    for (k, &u) in support.iter().enumerate() {
        indicators[[u, k]] = 1.0;
    }
    let feats = DiffOperator::new(graph, pos)?.apply(&indicators)?;
    let block = feats.block(term);

    let mut entries = BTreeMap::new();
    for (k, &u) in support.iter().enumerate() {
        let v = block[[vertex, k]];
        if v != 0.0 {
            entries.insert(offset(u), v);
        }
    }
    let nbr: BTreeSet<StencilOffset> = graph.neighbors(vertex).map(offset).collect();
    let boundary = (0..3).any(|a| {
        let mut plus = [0; 3];
        plus[a] = 1;
        let mut minus = [0; 3];
        minus[a] = -1;
        nbr.contains(&plus) != nbr.contains(&minus)
    });
    Ok(Stencil { term, vertex, entries, boundary })
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Unit-scale finite-difference pattern of a term on a lattice:
/// `[1]` for mass, `[−1, 0, 1]` for a gradient and `[1, −2, 1]` for a
/// second derivative along the term's axis.
pub fn reference_pattern(term: Term) -> BTreeMap<StencilOffset, f64> {
    let Some(a) = term.axis() else {
        return BTreeMap::from([([0, 0, 0], 1.0)]);
    };
    let mut plus = [0; 3];
    plus[a] = 1;
    let minus = plus.map(|x| -x);
    match term {
        Term::GradX | Term::GradY | Term::GradZ => BTreeMap::from([(minus, -1.0), (plus, 1.0)]),
        _ => BTreeMap::from([(minus, 1.0), ([0, 0, 0], -2.0), (plus, 1.0)]),
    }
}

/// Least-squares scale of `pattern` matching `stencil`, and the largest
/// residual over the union of both supports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatternFit {
    pub scale: f64,
    pub max_deviation: f64,
}

pub fn fit_pattern(stencil: &BTreeMap<StencilOffset, f64>, pattern: &BTreeMap<StencilOffset, f64>) -> PatternFit {
    let dot: f64 = pattern.iter().map(|(o, p)| p * stencil.get(o).copied().unwrap_or(0.0)).sum();
    let norm: f64 = pattern.values().map(|p| p * p).sum();
    let scale = if norm > 0.0 { dot / norm } else { 0.0 };
    let keys: BTreeSet<_> = stencil.keys().chain(pattern.keys()).collect();
    let max_deviation = keys
        .into_iter()
        .map(|o| {
            let s = stencil.get(o).copied().unwrap_or(0.0);
            let p = pattern.get(o).copied().unwrap_or(0.0);
            (s - scale * p).abs()
        })
        .fold(0.0, f64::max);
    PatternFit { scale, max_deviation }
}
