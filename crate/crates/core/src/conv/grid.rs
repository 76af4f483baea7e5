//! Structured-grid kernels and the check that a single-channel layer on a
//! 2D grid is a 3×3 cross-correlation.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ConvLayer, TermMask};
use crate::diffops::{extract_stencil, fit_pattern, StencilOffset, Term, NUM_TERMS};
use crate::geometry::regular_grid;
use crate::{Error, Result};

/// `k[r][c]` weights the sample at `(x + c − 1, y + r − 1)`.
pub type Kernel3x3 = [[f64; 3]; 3];

/// `θ1·mass + θ2·[−1,0,1]_x + θ3·[1,−2,1]_x + θ4·[−1,0,1]_y + θ5·[1,−2,1]_y`.
pub fn structured_kernel_2d(theta: [f64; 5]) -> Kernel3x3 {
    let [m, gx, lx, gy, ly] = theta;
    let mut k = [[0.0; 3]; 3];
    k[1][1] = m - 2.0 * lx - 2.0 * ly;
    k[1][0] = -gx + lx;
    k[1][2] = gx + lx;
    k[0][1] = -gy + ly;
    k[2][1] = gy + ly;
    k
}

/// Cross-correlation of an `nx × ny` field (index `x + nx·y`) at one
/// interior point.
pub fn cross_correlate_2d(field: &[f64], nx: usize, k: &Kernel3x3, x: usize, y: usize) -> f64 {
    let mut acc = 0.0;
    for (r, row) in k.iter().enumerate() {
        for (c, &w) in row.iter().enumerate() {
            acc += w * field[(x + c - 1) + nx * (y + r - 1)];
        }
    }
    acc
}

fn pattern(k: &Kernel3x3) -> BTreeMap<StencilOffset, f64> {
    let mut p = BTreeMap::new();
    for (r, row) in k.iter().enumerate() {
        for (c, &w) in row.iter().enumerate() {
            if w != 0.0 {
                p.insert([c as i64 - 1, r as i64 - 1, 0], w);
            }
        }
    }
    p
}

/// Runs a single-channel layer whose weights are `θ` divided by the
/// measured per-term stencil scale, and compares it against direct
/// cross-correlation with [`structured_kernel_2d`] on a random field.
/// Returns the largest deviation over interior vertices.
pub fn grid_equivalence_check(theta: [f64; 5], nx: usize, ny: usize, seed: u64) -> Result<f64> {
    if nx < 3 || ny < 3 {
        return Err(Error::invalid(format!("grid {nx}x{ny} needs at least 3 points per axis")));
    }
    let (cloud, graph) = regular_grid(nx, ny, 1, 1.0)?;
    let centre = 1 + nx;
    let terms = [Term::Mass, Term::GradX, Term::LapX, Term::GradY, Term::LapY];

    let mut weight = Array2::zeros((1, NUM_TERMS));
    for (k, &t) in terms.iter().enumerate() {
        if theta[k] == 0.0 {
            continue;
        }
        let mut unit = [0.0; 5];
        unit[k] = 1.0;
        let stencil = extract_stencil(&cloud, &graph, t, centre)?;
        let scale = fit_pattern(&stencil.entries, &pattern(&structured_kernel_2d(unit))).scale;
        if scale == 0.0 {
            return Err(Error::invalid(format!("term {t} has no stencil on this grid")));
        }
        weight[[0, t.index()]] = theta[k] / scale;
    }
    let layer = ConvLayer::linear(weight, Array1::zeros(1), TermMask::ALL)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field: Vec<f64> = (0..nx * ny).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f = Array2::from_shape_vec((nx * ny, 1), field.clone()).expect("column shape");
    let out = layer.linear_response(&graph, &cloud.positions, &f)?;

    let kernel = structured_kernel_2d(theta);
    let mut worst = 0.0f64;
    for y in 1..ny - 1 {
        for x in 1..nx - 1 {
            let direct = cross_correlate_2d(&field, nx, &kernel, x, y);
            worst = worst.max((out[[x + nx * y, 0]] - direct).abs());
        }
    }
    Ok(worst)
}
