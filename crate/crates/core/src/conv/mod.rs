//! The differential-operator convolution layer.
//!
//! `F' = ReLU(BN(W · mask(D(F)) + b))` where `D` is the 7-block
//! differential feature map of [`crate::diffops`] and `W` is a
//! `c_out × 7·c_in` pointwise map.

mod gradcheck;
mod grid;
pub mod layers;

pub use gradcheck::{gradcheck_layer, KINK_MARGIN};
pub use grid::{cross_correlate_2d, grid_equivalence_check, structured_kernel_2d, Kernel3x3};
pub use layers::{load_state, BatchNorm, BnCache, Linear, Mode, Pointwise, PointwiseGrads, PointwiseTape, BN_EPS, BN_MOMENTUM};

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{s, Array1, Array2};
use rand::Rng;

use crate::diffops::{DiffOperator, Term, NUM_TERMS};
use crate::geometry::Graph;
use crate::tensors::NamedTensor;
use crate::{Error, Result};

/// On/off switch per differential-feature block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TermMask(pub [bool; NUM_TERMS]);

impl TermMask {
    pub const ALL: TermMask = TermMask([true; NUM_TERMS]);
    pub const MASS: TermMask = TermMask([true, false, false, false, false, false, false]);
    pub const MASS_GRAD: TermMask = TermMask([true, true, true, true, false, false, false]);
    pub const MASS_LAP: TermMask = TermMask([true, false, false, false, true, true, true]);

    pub fn enabled(&self, t: Term) -> bool {
        self.0[t.index()]
    }

    pub fn only_mass(&self) -> bool {
        *self == TermMask::MASS
    }
}

impl Default for TermMask {
    fn default() -> Self {
        TermMask::ALL
    }
}

impl FromStr for TermMask {
    type Err = Error;

    /// `"all"`, or `+`-joined groups: `mass`, `grad`, `lap`, or single
    /// term names such as `gradx`.
    fn from_str(s: &str) -> Result<Self> {
        let mut m = [false; NUM_TERMS];
        for tok in s.split('+').map(str::trim) {
            match tok {
                "all" => m = [true; NUM_TERMS],
                "grad" => (1..4).for_each(|i| m[i] = true),
                "lap" => (4..7).for_each(|i| m[i] = true),
                t => m[t.parse::<Term>()?.index()] = true,
            }
        }
        Ok(TermMask(m))
    }
}

impl fmt::Display for TermMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self == TermMask::ALL {
            return f.write_str("all");
        }
        let m = &self.0;
        let mut parts = Vec::new();
        if m[0] {
            parts.push("mass".to_string());
        }
        for (range, group) in [(1..4, "grad"), (4..7, "lap")] {
            if m[range.clone()].iter().all(|&b| b) {
                parts.push(group.to_string());
            } else {
                parts.extend(range.filter(|&i| m[i]).map(|i| Term::ALL[i].name().to_string()));
            }
        }
        f.write_str(&parts.join("+"))
    }
}

impl serde::Serialize for TermMask {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for TermMask {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One convolution: learnable `c_out × 7·c_in` map with batch norm.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub c_in: usize,
    pub mlp: Pointwise,
    pub term_mask: TermMask,
}

/// Forward intermediates needed by [`conv_backward`].
#[derive(Debug, Clone)]
pub struct ConvTape {
    pub op: Arc<DiffOperator>,
    pub input: Array2<f64>,
    pub mlp: PointwiseTape,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Array2<f64>,
    pub params: PointwiseGrads,
}

impl ConvLayer {
    pub fn init(c_in: usize, c_out: usize, term_mask: TermMask, rng: &mut impl Rng) -> Self {
        ConvLayer {
            c_in,
            mlp: Pointwise::init(NUM_TERMS * c_in, c_out, true, true, rng),
            term_mask,
        }
    }

    /// Layer with explicit weights and no batch norm or activation.
    pub fn linear(weight: Array2<f64>, bias: Array1<f64>, term_mask: TermMask) -> Result<Self> {
        if weight.ncols() % NUM_TERMS != 0 || bias.len() != weight.nrows() {
            return Err(Error::dims(format!(
                "weight {:?} with bias of length {}",
                weight.dim(),
                bias.len()
            )));
        }
        Ok(ConvLayer {
            c_in: weight.ncols() / NUM_TERMS,
            mlp: Pointwise { linear: Linear { weight, bias: Some(bias) }, bn: None, relu: false },
            term_mask,
        })
    }

    pub fn c_out(&self) -> usize {
        self.mlp.linear.c_out()
    }

    pub fn weight(&self) -> &Array2<f64> {
        &self.mlp.linear.weight
    }

    fn zero_masked(&self, a: &mut Array2<f64>) {
        let c = self.c_in;
        for t in Term::ALL.into_iter().filter(|&t| !self.term_mask.enabled(t)) {
            a.slice_mut(s![.., t.index() * c..(t.index() + 1) * c]).fill(0.0);
        }
    }

    /// Differential features with masked-off blocks zeroed.
    pub fn masked_features(&self, op: &DiffOperator, f: &Array2<f64>) -> Result<Array2<f64>> {
        if f.ncols() != self.c_in {
            return Err(Error::dims(format!(
                "layer expects {} input channels, got {}",
                self.c_in,
                f.ncols()
            )));
        }
        if self.term_mask.only_mass() {
            let mut d = Array2::zeros((f.nrows(), NUM_TERMS * self.c_in));
            d.slice_mut(s![.., 0..self.c_in]).assign(f);
            return Ok(d);
        }
        let mut d = op.apply(f)?.into_array();
        self.zero_masked(&mut d);
        Ok(d)
    }

    pub fn forward_with(&mut self, op: Arc<DiffOperator>, f: &Array2<f64>, mode: Mode) -> Result<(Array2<f64>, ConvTape)> {
        let d = self.masked_features(&op, f)?;
        let (out, mlp) = self.mlp.forward(d, mode)?;
        Ok((out, ConvTape { op, input: f.clone(), mlp }))
    }

    pub fn backward(&self, tape: &ConvTape, d_out: &Array2<f64>) -> Result<ConvGrads> {
        let (mut dd, params) = self.mlp.backward(&tape.mlp, d_out)?;
        self.zero_masked(&mut dd);
        let input = if self.term_mask.only_mass() {
            dd.slice(s![.., 0..self.c_in]).to_owned()
        } else {
            tape.op.adjoint(&dd)?
        };
        Ok(ConvGrads { input, params })
    }

    /// `W · mask(D(F)) + b`, ignoring batch norm and the activation.
    pub fn linear_response(&self, graph: &Graph, positions: &[[f64; 3]], f: &Array2<f64>) -> Result<Array2<f64>> {
        let op = DiffOperator::new(graph, positions)?;
        self.mlp.linear.forward(&self.masked_features(&op, f)?)
    }

    pub fn tensors(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.mlp.tensors(prefix, out);
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.mlp.params_mut(out);
    }

    pub fn state_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
        self.mlp.state_mut(prefix, out);
    }
}

pub fn conv_forward(
    layer: &mut ConvLayer,
    graph: &Graph,
    positions: &[[f64; 3]],
    f: &Array2<f64>,
    mode: Mode,
) -> Result<(Array2<f64>, ConvTape)> {
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite input feature"));
    }
    let op = Arc::new(DiffOperator::new(graph, positions)?);
    layer.forward_with(op, f, mode)
}

pub fn conv_backward(layer: &ConvLayer, tape: &ConvTape, d_out: &Array2<f64>) -> Result<ConvGrads> {
    layer.backward(tape, d_out)
}
