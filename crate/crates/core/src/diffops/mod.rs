//! Differential operators on graphs.
//!
//! Features live on vertices. For an edge `e = (i, j)`, `i < j`, with
//! coordinate difference `Δ = p_i − p_j` and length `d`, the projected
//! derivative on the edge midpoint along axis `b` is
//!
//! ```text
//! g_e^b = (f_i − f_j) · Δ_b / (2 d)
//! ```
//!
//! which is the sum of the two vertex→midpoint messages. The gradient
//! features on a vertex are the mean of `g_e` over its incident edges; the
//! per-axis second-derivative features are the mean of
//! `g_e^b · (b(e) − b(v)) / (2 · dist(v, e))`, where `dist(v, e) = d / 2`.
//!
//! The message form differs from the plain projected difference
//! `(f_i − f_j) Δ_b / d` by a factor of 2, and the mean aggregation adds a
//! further positive factor on regular grids (1/8 for first and 1/16 for
//! second derivatives in 2D). Any positive factor is absorbed by the learned
//! weights of the convolution, so the message normalization is used
//! throughout.

mod assemble;
mod aux;
mod stencil;

pub use assemble::{
    assemble_edge_average, assemble_gradient, assemble_transposed_derivative,
    diff_features_reference,
};
pub use aux::{build_auxiliary_graph, AuxiliaryGraph};
pub use stencil::{extract_stencil, fit_pattern, reference_pattern, PatternFit, Stencil, StencilOffset};

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView2};

use crate::geometry::Graph;
use crate::{Error, Result};

/// Edge lengths below this are clamped before dividing.
pub const LENGTH_EPS: f64 = 1e-12;

/// Number of differential-feature blocks.
pub const NUM_TERMS: usize = 7;

/// One block of the differential feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Mass,
    GradX,
    GradY,
    GradZ,
    LapX,
    LapY,
    LapZ,
}

impl Term {
    pub const ALL: [Term; NUM_TERMS] = [
        Term::Mass,
        Term::GradX,
        Term::GradY,
        Term::GradZ,
        Term::LapX,
        Term::LapY,
        Term::LapZ,
    ];

    /// Block position in [`DiffFeatures`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Term::Mass => "mass",
            Term::GradX => "gradx",
            Term::GradY => "grady",
            Term::GradZ => "gradz",
            Term::LapX => "lapx",
            Term::LapY => "lapy",
            Term::LapZ => "lapz",
        }
    }

    /// Axis 0..3 for derivative terms.
    pub fn axis(self) -> Option<usize> {
        match self {
            Term::Mass => None,
            Term::GradX | Term::LapX => Some(0),
            Term::GradY | Term::LapY => Some(1),
            Term::GradZ | Term::LapZ => Some(2),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Term {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Term::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown term '{s}'")))
    }
}

/// Per-vertex `[mass | grad_x | grad_y | grad_z | lap_x | lap_y | lap_z]`,
/// each block `c_in` columns wide.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffFeatures {
    data: Array2<f64>,
    channels: usize,
}

impl DiffFeatures {
    pub fn from_array(data: Array2<f64>, channels: usize) -> Result<Self> {
        if data.ncols() != NUM_TERMS * channels {
            return Err(Error::dims(format!(
                "{} columns is not 7 x {channels}",
                data.ncols()
            )));
        }
        Ok(DiffFeatures { data, channels })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn block(&self, term: Term) -> ArrayView2<'_, f64> {
        let c = self.channels;
        self.data.slice(s![.., term.index() * c..(term.index() + 1) * c])
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }
}

/// Precomputed edge coefficients for the fused sweep and its adjoint.
#[derive(Debug, Clone)]
pub struct DiffOperator {
    num_vertices: usize,
    edges: Vec<(usize, usize)>,
    // Δ_b / (2 d) per edge and axis
    coef: Vec<[f64; 3]>,
    inv_degree: Vec<f64>,
    clamped: usize,
}

impl DiffOperator {
    pub fn new(graph: &Graph, positions: &[[f64; 3]]) -> Result<Self> {
        check_inputs(graph, positions)?;
        let mut clamped = 0;
        let coef = graph
            .edges()
            .iter()
            .map(|&(i, j)| {
                let delta = [
                    positions[i][0] - positions[j][0],
                    positions[i][1] - positions[j][1],
                    positions[i][2] - positions[j][2],
                ];
                let mut d = (delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2]).sqrt();
                if d < LENGTH_EPS {
                    d = LENGTH_EPS;
                    clamped += 1;
                }
                delta.map(|x| x / (2.0 * d))
            })
            .collect();
        if clamped > 0 {
            log::warn!("{clamped} edges shorter than {LENGTH_EPS:e} were clamped");
        }
        let inv_degree = (0..graph.num_vertices())
            .map(|v| match graph.degree(v) {
                0 => 0.0,
                d => 1.0 / d as f64,
            })
            .collect();
        Ok(DiffOperator {
            num_vertices: graph.num_vertices(),
            edges: graph.edges().to_vec(),
            coef,
            inv_degree,
            clamped,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    /// Edges whose length was clamped to [`LENGTH_EPS`].
    pub fn clamped_edges(&self) -> usize {
        self.clamped
    }

    /// Fused evaluation: one sweep over edges accumulates both the gradient
    /// and the second-derivative messages into the endpoint rows, then a
    /// mean normalization per vertex.
    pub fn apply(&self, f: &Array2<f64>) -> Result<DiffFeatures> {
        if f.nrows() != self.num_vertices {
            return Err(Error::dims(format!(
                "features have {} rows, graph has {} vertices",
                f.nrows(),
                self.num_vertices
            )));
        }
        let c = f.ncols();
        let w = NUM_TERMS * c;
        let f = f.as_standard_layout();
        let fs = f.as_slice().unwrap();
        let mut out = vec![0.0; self.num_vertices * w];
        for v in 0..self.num_vertices {
            out[v * w..v * w + c].copy_from_slice(&fs[v * c..(v + 1) * c]);
        }
        for (&(i, j), g) in self.edges.iter().zip(&self.coef) {
            let (fi, fj) = (&fs[i * c..(i + 1) * c], &fs[j * c..(j + 1) * c]);
            for b in 0..3 {
                let gb = g[b];
                let (grad, lap) = ((1 + b) * c, (4 + b) * c);
                for ch in 0..c {
                    let edge_grad = gb * (fi[ch] - fj[ch]);
                    out[i * w + grad + ch] += edge_grad;
                    out[j * w + grad + ch] += edge_grad;
                    out[i * w + lap + ch] -= gb * edge_grad;
                    out[j * w + lap + ch] += gb * edge_grad;
                }
            }
        }
        for v in 0..self.num_vertices {
            let inv = self.inv_degree[v];
            for x in &mut out[v * w + c..(v + 1) * w] {
                *x *= inv;
            }
        }
        let data = Array2::from_shape_vec((self.num_vertices, w), out).expect("shape");
        DiffFeatures::from_array(data, c)
    }

    /// Adjoint of [`DiffOperator::apply`]: maps a cotangent on the
    /// `N × 7c` features back to `N × c`.
    pub fn adjoint(&self, d_features: &Array2<f64>) -> Result<Array2<f64>> {
        let w = d_features.ncols();
        if d_features.nrows() != self.num_vertices || w % NUM_TERMS != 0 {
            return Err(Error::dims(format!(
                "cotangent of shape {:?} for {} vertices",
                d_features.dim(),
                self.num_vertices
            )));
        }
        let c = w / NUM_TERMS;
        let dd = d_features.as_standard_layout();
        let ds = dd.as_slice().unwrap();
        let mut out = vec![0.0; self.num_vertices * c];
        for v in 0..self.num_vertices {
            out[v * c..(v + 1) * c].copy_from_slice(&ds[v * w..v * w + c]);
        }
        for (&(i, j), g) in self.edges.iter().zip(&self.coef) {
            let (inv_i, inv_j) = (self.inv_degree[i], self.inv_degree[j]);
            for b in 0..3 {
                let gb = g[b];
                let (grad, lap) = ((1 + b) * c, (4 + b) * c);
                for ch in 0..c {
                    let d_edge = inv_i * (ds[i * w + grad + ch] - gb * ds[i * w + lap + ch])
                        + inv_j * (ds[j * w + grad + ch] + gb * ds[j * w + lap + ch]);
                    let d_diff = gb * d_edge;
                    out[i * c + ch] += d_diff;
                    out[j * c + ch] -= d_diff;
                }
            }
        }
        Ok(Array2::from_shape_vec((self.num_vertices, c), out).expect("shape"))
    }
}

pub(crate) fn check_inputs(graph: &Graph, positions: &[[f64; 3]]) -> Result<()> {
    if positions.len() != graph.num_vertices() {
        return Err(Error::dims(format!(
            "{} positions for {} vertices",
            positions.len(),
            graph.num_vertices()
        )));
    }
    crate::geometry::check_finite(positions)
}

/// Differential features `[F | A∇F | T∇F]` by the fused edge sweep.
pub fn diff_features(graph: &Graph, positions: &[[f64; 3]], f: &Array2<f64>) -> Result<DiffFeatures> {
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite input feature"));
    }
    DiffOperator::new(graph, positions)?.apply(f)
}

/// `max |a − b| / max |b|`, or the absolute deviation when `b` is zero.
pub fn relative_deviation(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let dev = a
        .iter()
        .zip(b.iter())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale > 0.0 {
        dev / scale
    } else {
        dev
    }
}

#[cfg(test)]
mod tests;
