//! Finite-difference check of [`conv_backward`] on a random instance.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{conv_backward, conv_forward, ConvLayer, Mode, TermMask};
use crate::geometry::{knn_graph, Graph};
use crate::network::tensor_relative_error;
use crate::Result;

/// Pre-activations closer to zero than this make an instance unusable:
/// a central difference could straddle the ReLU kink.
pub const KINK_MARGIN: f64 = 1e-3;

const STEP: f64 = 1e-4;

fn loss(layer: &ConvLayer, g: &Graph, pos: &[[f64; 3]], f: &Array2<f64>, r: &Array2<f64>) -> Result<f64> {
    let (out, _) = conv_forward(&mut layer.clone(), g, pos, f, Mode::Train)?;
    Ok((&out * r).sum())
}

/// Largest per-tensor relative error (see [`tensor_relative_error`]) between
/// analytic and central-difference gradients of `⟨layer(F), R⟩` with respect to the input and every
/// parameter. The instance is a 10-vertex 3-NN graph with 2 → 3 channels, a
/// random upstream `R` and randomized batch-norm affine parameters and
/// biases, all drawn from `seed`. Returns `None` when a pre-activation lies
/// within [`KINK_MARGIN`] of zero.
pub fn gradcheck_layer(mask: TermMask, seed: u64) -> Result<Option<f64>> {
    let (n, c_in, c_out) = (10, 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos: Vec<[f64; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let g = knn_graph(&pos, 3)?;
    let f = Array2::from_shape_fn((n, c_in), |_| rng.random_range(-1.0..1.0));
    let mut layer = ConvLayer::init(c_in, c_out, mask, &mut rng);
    let bn = layer.mlp.bn.as_mut().expect("conv layers normalize");
    bn.gamma.mapv_inplace(|_| rng.random_range(0.5..1.5));
    bn.beta.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    layer.mlp.linear.bias.as_mut().expect("conv layers have a bias").mapv_inplace(|_| rng.random_range(-0.5..0.5));
    let r = Array2::from_shape_fn((n, c_out), |_| rng.random_range(-1.0..1.0));

    let (_, tape) = conv_forward(&mut layer.clone(), &g, &pos, &f, Mode::Train)?;
    if tape.mlp.pre_activation.iter().any(|v| v.abs() < KINK_MARGIN) {
        return Ok(None);
    }
    let grads = conv_backward(&layer, &tape, &r)?;

    let mut numeric = Array2::zeros(f.dim());
    for ((i, j), v) in numeric.indexed_iter_mut() {
        let mut fp = f.clone();
        fp[[i, j]] += STEP;
        let mut fm = f.clone();
        fm[[i, j]] -= STEP;
        *v = (loss(&layer, &g, &pos, &fp, &r)? - loss(&layer, &g, &pos, &fm, &r)?) / (2.0 * STEP);
    }
    let flat = |a: &Array2<f64>| a.iter().copied().collect::<Vec<_>>();
    let mut worst = tensor_relative_error(&flat(&grads.input), &flat(&numeric));

    let mut analytic = Vec::new();
    grads.params.flatten_into(&mut analytic);
    let sizes: Vec<usize> = {
        let mut l = layer.clone();
        let mut slots = Vec::new();
        l.params_mut(&mut slots);
        slots.iter().map(|s| s.len()).collect()
    };
    let mut start = 0;
    for len in sizes {
        let mut numeric = Vec::with_capacity(len);
        for p in start..start + len {
            let eval = |delta: f64| {
                let mut l = layer.clone();
                let mut slots = Vec::new();
                l.params_mut(&mut slots);
                let mut k = p;
                for slot in slots {
                    if k < slot.len() {
                        slot[k] += delta;
                        break;
                    }
                    k -= slot.len();
                }
                loss(&l, &g, &pos, &f, &r)
            };
            numeric.push((eval(STEP)? - eval(-STEP)?) / (2.0 * STEP));
        }
        worst = worst.max(tensor_relative_error(&analytic[start..start + len], &numeric));
        start += len;
    }
    Ok(Some(worst))
}
