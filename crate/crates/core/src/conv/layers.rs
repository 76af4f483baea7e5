//! Dense building blocks shared by the convolution and the network head.

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

use crate::tensors::NamedTensor;
use crate::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// `y = x·Wᵀ + b`, applied row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// out × in
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
}

impl Linear {
    /// Uniform in `±1/sqrt(fan_in)`, zero bias.
    pub fn init(c_in: usize, c_out: usize, bias: bool, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (c_in as f64).sqrt();
        Linear {
            weight: Array2::from_shape_fn((c_out, c_in), |_| rng.random_range(-bound..bound)),
            bias: bias.then(|| Array1::zeros(c_out)),
        }
    }

    pub fn c_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn c_out(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.c_in() {
            return Err(Error::dims(format!(
                "linear map expects {} columns, got {}",
                self.c_in(),
                x.ncols()
            )));
        }
        let mut y = x.dot(&self.weight.t());
        if let Some(b) = &self.bias {
            for mut row in y.rows_mut() {
                row.iter_mut().zip(b).for_each(|(v, b)| *v += b);
            }
        }
        Ok(y)
    }

    /// Returns `(dX, dW, db)`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Option<Array1<f64>>) {
        let dx = dy.dot(&self.weight);
        let dw = dy.t().dot(x);
        let db = self.bias.as_ref().map(|_| column_sums(&dy.view()));
        (dx, dw, db)
    }

    pub fn tensors(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        out.push(tensor(format!("{prefix}.weight"), &self.weight));
        if let Some(b) = &self.bias {
            out.push(vector(format!("{prefix}.bias"), b));
        }
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(self.weight.as_slice_mut().expect("standard layout"));
        if let Some(b) = &mut self.bias {
            out.push(b.as_slice_mut().unwrap());
        }
    }

    pub fn state_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
        out.push((format!("{prefix}.weight"), self.weight.as_slice_mut().expect("standard layout")));
        if let Some(b) = &mut self.bias {
            out.push((format!("{prefix}.bias"), b.as_slice_mut().unwrap()));
        }
    }
}

/// Per-channel batch normalization over rows.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub eps: f64,
    pub momentum: f64,
}

/// Forward intermediates of [`BatchNorm`].
#[derive(Debug, Clone)]
pub struct BnCache {
    pub normalized: Array2<f64>,
    pub inv_std: Array1<f64>,
    /// Batch statistics were used (train mode with more than one row).
    pub batch_stats: bool,
}

impl BatchNorm {
    pub fn new(c: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(c),
            beta: Array1::zeros(c),
            running_mean: Array1::zeros(c),
            running_var: Array1::ones(c),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn forward(&mut self, z: &Array2<f64>, mode: Mode) -> (Array2<f64>, BnCache) {
        let (n, c) = z.dim();
        let batch_stats = mode == Mode::Train && n > 1;
        if mode == Mode::Train && n <= 1 {
            log::warn!("batch norm on a single row in train mode; using running statistics");
        }
        let z = z.as_standard_layout();
        let zs = z.as_slice().unwrap();
        let (mean, var) = if batch_stats {
            let mean = column_sums(&z.view()) / n as f64;
            let mut var = vec![0.0; c];
            let mu = mean.as_slice().unwrap();
            for row in zs.chunks_exact(c) {
                for j in 0..c {
                    let d = row[j] - mu[j];
                    var[j] += d * d;
                }
            }
            let var = Array1::from(var) / n as f64;
            let m = self.momentum;
            let unbiased = &var * (n as f64 / (n as f64 - 1.0));
            self.running_mean = &self.running_mean * (1.0 - m) + &mean * m;
            self.running_var = &self.running_var * (1.0 - m) + unbiased * m;
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let mut normalized = vec![0.0; n * c];
        let mut y = vec![0.0; n * c];
        let (mu, is) = (mean.as_slice().unwrap(), inv_std.as_slice().unwrap());
        let (g, b) = (self.gamma.as_slice().unwrap(), self.beta.as_slice().unwrap());
        for ((zr, nr), yr) in zs.chunks_exact(c).zip(normalized.chunks_exact_mut(c)).zip(y.chunks_exact_mut(c)) {
            for j in 0..c {
                nr[j] = (zr[j] - mu[j]) * is[j];
                yr[j] = nr[j] * g[j] + b[j];
            }
        }
        let normalized = Array2::from_shape_vec((n, c), normalized).unwrap();
        let y = Array2::from_shape_vec((n, c), y).unwrap();
        (y, BnCache { normalized, inv_std, batch_stats })
    }

    /// Returns `(dZ, dγ, dβ)`.
    pub fn backward(&self, cache: &BnCache, dy: &Array2<f64>) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
        let (n, c) = dy.dim();
        let dy = dy.as_standard_layout();
        let ds = dy.as_slice().unwrap();
        let ns = cache.normalized.as_slice().expect("standard layout");
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for (dr, nr) in ds.chunks_exact(c).zip(ns.chunks_exact(c)) {
            for j in 0..c {
                dgamma[j] += dr[j] * nr[j];
                dbeta[j] += dr[j];
            }
        }
        let g = self.gamma.as_slice().unwrap();
        let is = cache.inv_std.as_slice().unwrap();
        let mut dz = vec![0.0; n * c];
        if cache.batch_stats {
            // with dN = γ·dY: dZ = inv_std/n · (n·dN − ΣdN − N̂·Σ(dN·N̂))
            let nf = n as f64;
            let sum_dn: Vec<f64> = (0..c).map(|j| dbeta[j] * g[j]).collect();
            let sum_dn_n: Vec<f64> = (0..c).map(|j| dgamma[j] * g[j]).collect();
            for ((out, dr), nr) in dz.chunks_exact_mut(c).zip(ds.chunks_exact(c)).zip(ns.chunks_exact(c)) {
                for j in 0..c {
                    let dn = dr[j] * g[j];
                    out[j] = (nf * dn - sum_dn[j] - nr[j] * sum_dn_n[j]) * is[j] / nf;
                }
            }
        } else {
            for (out, dr) in dz.chunks_exact_mut(c).zip(ds.chunks_exact(c)) {
                for j in 0..c {
                    out[j] = dr[j] * g[j] * is[j];
                }
            }
        }
        (Array2::from_shape_vec((n, c), dz).unwrap(), Array1::from(dgamma), Array1::from(dbeta))
    }

    pub fn tensors(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        out.push(vector(format!("{prefix}.gamma"), &self.gamma));
        out.push(vector(format!("{prefix}.beta"), &self.beta));
        out.push(vector(format!("{prefix}.running_mean"), &self.running_mean));
        out.push(vector(format!("{prefix}.running_var"), &self.running_var));
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        out.push(self.gamma.as_slice_mut().unwrap());
        out.push(self.beta.as_slice_mut().unwrap());
    }

    pub fn state_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
        out.push((format!("{prefix}.gamma"), self.gamma.as_slice_mut().unwrap()));
        out.push((format!("{prefix}.beta"), self.beta.as_slice_mut().unwrap()));
        out.push((format!("{prefix}.running_mean"), self.running_mean.as_slice_mut().unwrap()));
        out.push((format!("{prefix}.running_var"), self.running_var.as_slice_mut().unwrap()));
    }
}

/// Pointwise map → optional batch norm → optional ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Pointwise {
    pub linear: Linear,
    pub bn: Option<BatchNorm>,
    pub relu: bool,
}

#[derive(Debug, Clone)]
pub struct PointwiseTape {
    pub input: Array2<f64>,
    pub bn: Option<BnCache>,
    /// Pre-activation values (after batch norm).
    pub pre_activation: Array2<f64>,
}

impl PointwiseTape {
    /// Recomputes the layer output from the pre-activation.
    pub fn output(&self, relu: bool) -> Array2<f64> {
        if relu {
            self.pre_activation.mapv(|v| v.max(0.0))
        } else {
            self.pre_activation.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointwiseGrads {
    pub weight: Array2<f64>,
    pub bias: Option<Array1<f64>>,
    pub gamma: Option<Array1<f64>>,
    pub beta: Option<Array1<f64>>,
}

impl PointwiseGrads {
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend(self.weight.iter());
        if let Some(b) = &self.bias {
            out.extend(b.iter());
        }
        if let (Some(g), Some(b)) = (&self.gamma, &self.beta) {
            out.extend(g.iter());
            out.extend(b.iter());
        }
    }
}

impl Pointwise {
    pub fn init(c_in: usize, c_out: usize, bn: bool, relu: bool, rng: &mut impl Rng) -> Self {
        Pointwise {
            linear: Linear::init(c_in, c_out, true, rng),
            bn: bn.then(|| BatchNorm::new(c_out)),
            relu,
        }
    }

    pub fn forward(&mut self, x: Array2<f64>, mode: Mode) -> Result<(Array2<f64>, PointwiseTape)> {
        let z = self.linear.forward(&x)?;
        let (pre, bn) = match &mut self.bn {
            Some(bn) => {
                let (y, cache) = bn.forward(&z, mode);
                (y, Some(cache))
            }
            None => (z, None),
        };
        let mut output = pre.as_standard_layout().into_owned();
        if self.relu {
            output.as_slice_mut().unwrap().iter_mut().for_each(|v| *v = v.max(0.0));
        }
        Ok((output, PointwiseTape { input: x, bn, pre_activation: pre }))
    }

    /// Returns the input cotangent and parameter gradients.
    pub fn backward(&self, tape: &PointwiseTape, d_out: &Array2<f64>) -> Result<(Array2<f64>, PointwiseGrads)> {
        if d_out.dim() != tape.pre_activation.dim() {
            return Err(Error::dims(format!(
                "upstream gradient {:?} for output {:?}",
                d_out.dim(),
                tape.pre_activation.dim()
            )));
        }
        let mut d = d_out.as_standard_layout().into_owned();
        if self.relu {
            let pre = tape.pre_activation.as_standard_layout();
            for (g, &p) in d.as_slice_mut().unwrap().iter_mut().zip(pre.as_slice().unwrap()) {
                if p <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let (dz, gamma, beta) = match (&self.bn, &tape.bn) {
            (Some(bn), Some(cache)) => {
                let (dz, dg, db) = bn.backward(cache, &d);
                (dz, Some(dg), Some(db))
            }
            _ => (d, None, None),
        };
        let (dx, dw, db) = self.linear.backward(&tape.input, &dz);
        Ok((dx, PointwiseGrads { weight: dw, bias: db, gamma, beta }))
    }

    pub fn tensors(&self, prefix: &str, out: &mut Vec<NamedTensor>) {
        self.linear.tensors(&format!("{prefix}.linear"), out);
        if let Some(bn) = &self.bn {
            bn.tensors(&format!("{prefix}.bn"), out);
        }
    }

    pub fn params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut [f64]>) {
        self.linear.params_mut(out);
        if let Some(bn) = &mut self.bn {
            bn.params_mut(out);
        }
    }

    pub fn state_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut [f64])>) {
        self.linear.state_mut(&format!("{prefix}.linear"), out);
        if let Some(bn) = &mut self.bn {
            bn.state_mut(&format!("{prefix}.bn"), out);
        }
    }
}

/// Per-column sums, accumulated row by row.
fn column_sums(a: &ArrayView2<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(a.ncols());
    let o = out.as_slice_mut().unwrap();
    for row in a.rows() {
        o.iter_mut().zip(row.iter()).for_each(|(s, v)| *s += v);
    }
    out
}

pub(crate) fn tensor(name: String, a: &Array2<f64>) -> NamedTensor {
    NamedTensor { name, shape: vec![a.nrows(), a.ncols()], data: a.iter().copied().collect() }
}

pub(crate) fn vector(name: String, a: &Array1<f64>) -> NamedTensor {
    NamedTensor { name, shape: vec![a.len()], data: a.to_vec() }
}

/// Copies tensors into matching named slots; every slot must be present
/// with the right number of values.
pub fn load_state(slots: Vec<(String, &mut [f64])>, tensors: &[NamedTensor]) -> Result<()> {
    for (name, slot) in slots {
        let t = tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::invalid(format!("checkpoint lacks tensor '{name}'")))?;
        if t.data.len() != slot.len() {
            return Err(Error::dims(format!(
                "tensor '{name}' has {} values, expected {}",
                t.data.len(),
                slot.len()
            )));
        }
        slot.copy_from_slice(&t.data);
    }
    Ok(())
}
