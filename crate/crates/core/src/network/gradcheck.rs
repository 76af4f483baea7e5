//! End-to-end finite-difference check of [`Network::backward`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::train::cross_entropy;
use super::{ActivationPattern, Network, NetworkConfig};
use crate::conv::Mode;
use crate::geometry::{synth_dataset, PointCloud, Shape};
use crate::{Error, Result};

/// Tensors whose gradients are all below this are compared absolutely.
/// Rounding noise of a central difference at step 1e-4 is about 1e-12,
/// and biases feeding batch norm have exactly zero gradient.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    /// Largest per-tensor relative error, see [`tensor_relative_error`].
    pub max_rel_error: f64,
    /// Index (in parameter-slot order) of the tensor attaining it.
    pub worst_tensor: usize,
    pub tensor_errors: Vec<f64>,
    pub num_params: usize,
    /// Parameters whose perturbation flipped a ReLU or a max; they are
    /// excluded from `max_rel_error`.
    pub kink_crossings: usize,
    /// Distance of the nearest activation from a kink at the base point.
    pub kink_margin: f64,
}

/// `max|a − n| / max(max|a|, max|n|)` over one parameter tensor.
pub fn tensor_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = analytic.iter().chain(numeric).fold(0.0f64, |m, v| m.max(v.abs()));
    diff / scale.max(GRADCHECK_FLOOR)
}

/// Compares analytic parameter gradients of the cross-entropy loss on
/// `clouds` against central differences with the given step. Graphs and
/// pooling operators are frozen at the unperturbed point.
pub fn gradcheck_network(net: &Network, clouds: &[PointCloud], step: f64) -> Result<GradcheckReport> {
    let labels = clouds
        .iter()
        .map(|c| c.label.ok_or_else(|| Error::invalid("gradient check needs labelled clouds")))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&PointCloud> = clouds.iter().collect();
    let mut base = net.clone();
    let (scores, tape) = base.forward(&refs, Mode::Train, None)?;
    let (_, d_scores) = cross_entropy(&scores, &labels)?;
    let analytic = net.backward(&tape, &d_scores)?;
    let pattern = tape.activation_pattern();
    let structure = tape.structure.clone();

    let eval = |p: usize, delta: f64| -> Result<(f64, ActivationPattern)> {
        let mut n = net.clone();
        let mut slots = Vec::new();
        n.params_mut(&mut slots);
        let mut k = p;
        for slot in slots {
            if k < slot.len() {
                slot[k] += delta;
                break;
            }
            k -= slot.len();
        }
        let (s, t) = n.forward(&refs, Mode::Train, Some(&structure))?;
        Ok((cross_entropy(&s, &labels)?.0, t.activation_pattern()))
    };

    let sizes: Vec<usize> = {
        let mut n = net.clone();
        let mut slots = Vec::new();
        n.params_mut(&mut slots);
        slots.iter().map(|s| s.len()).collect()
    };
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst_tensor: 0,
        tensor_errors: Vec::new(),
        num_params: analytic.len(),
        kink_crossings: 0,
        kink_margin: tape.kink_margin(),
    };
    let mut start = 0;
    for (t, &len) in sizes.iter().enumerate() {
        let (mut a, mut num) = (Vec::new(), Vec::new());
        for p in start..start + len {
            let (lp, pp) = eval(p, step)?;
            let (lm, pm) = eval(p, -step)?;
            if pp != pattern || pm != pattern {
                report.kink_crossings += 1;
                continue;
            }
            a.push(analytic[p]);
            num.push((lp - lm) / (2.0 * step));
        }
        let e = tensor_relative_error(&a, &num);
        if e > report.max_rel_error {
            report.max_rel_error = e;
            report.worst_tensor = t;
        }
        report.tensor_errors.push(e);
        start += len;
    }
    Ok(report)
}

/// Step used by [`gradcheck_instance`].
pub const GRADCHECK_STEP: f64 = 1e-4;

/// Most nudges tried before giving up on finding a kink-free input.
const MAX_NUDGES: usize = 20;

/// Gradient check of a freshly initialized network (`cfg` with the given
/// seed, random conv biases) on two 14-point synthetic clouds. Whenever a
/// perturbation crosses a ReLU or max kink the positions are nudged by
/// up to 1e-3 and the check is repeated. Returns the report and the
/// number of nudges.
pub fn gradcheck_instance(cfg: &NetworkConfig, seed: u64) -> Result<(GradcheckReport, usize)> {
    let mut net = Network::new(NetworkConfig { seed, ..cfg.clone() })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    for c in net.blocks.iter_mut().flat_map(|b| [&mut b.conv1, &mut b.conv2]) {
        if let Some(b) = c.mlp.linear.bias.as_mut() {
            b.mapv_inplace(|_| rng.random_range(-0.3..0.3));
        }
    }
    let shapes: Vec<Shape> = Shape::ALL.iter().copied().cycle().skip(seed as usize % 5).take(cfg.num_classes).collect();
    let mut clouds = synth_dataset(&shapes, 1, 14, 0.02, seed)?;
    clouds.truncate(2);
    for nudges in 0..=MAX_NUDGES {
        let report = gradcheck_network(&net, &clouds, GRADCHECK_STEP)?;
        if report.kink_crossings == 0 {
            return Ok((report, nudges));
        }
        for c in &mut clouds {
            for p in &mut c.positions {
                p.iter_mut().for_each(|v| *v += rng.random_range(-1e-3..1e-3));
            }
        }
    }
    Err(Error::invalid(format!("seed {seed}: no kink-free input after {MAX_NUDGES} nudges")))
}
