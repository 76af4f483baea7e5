use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::check_finite;
use crate::{Error, Positions, Result};

/// Translates the bounding box to the origin and scales uniformly by the
/// largest extent so the cloud fits `[0, 1]^3` with aspect ratio preserved.
/// A cloud with zero extent collapses to the origin.
pub fn normalize_unit_cube(positions: &[[f64; 3]]) -> Result<Positions> {
    if positions.is_empty() {
        return Err(Error::invalid("cannot normalize an empty cloud"));
    }
    check_finite(positions)?;
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in positions {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    Ok(fit_box(positions, lo, hi))
}

/// Maps the box `[lo, hi]` onto the unit cube (uniform scale).
pub(crate) fn fit_box(positions: &[[f64; 3]], lo: [f64; 3], hi: [f64; 3]) -> Positions {
    let extent = (0..3).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    let scale = if extent > 0.0 { 1.0 / extent } else { 0.0 };
    positions
        .iter()
        .map(|p| {
            [
                (p[0] - lo[0]) * scale,
                (p[1] - lo[1]) * scale,
                (p[2] - lo[2]) * scale,
            ]
        })
        .collect()
}

/// Parameters drawn by [`augment`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augmentation {
    pub scale: f64,
    /// Rotation angle about the z axis, radians.
    pub angle: f64,
}

/// Random uniform scaling in `scale_range` and, if `rotate`, a random
/// rotation about the vertical (z) axis through the origin.
pub fn augment(
    positions: &[[f64; 3]],
    scale_range: [f64; 2],
    rotate: bool,
    seed: u64,
) -> Result<(Positions, Augmentation)> {
    let [lo, hi] = scale_range;
    if !(lo.is_finite() && hi.is_finite()) || lo > hi || lo <= 0.0 {
        return Err(Error::invalid(format!("bad scale range [{lo}, {hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = if lo == hi { lo } else { rng.random_range(lo..hi) };
    let angle = if rotate { rng.random_range(0.0..2.0 * PI) } else { 0.0 };
    let (s, c) = angle.sin_cos();
    let out = positions
        .iter()
        .map(|p| {
            if rotate {
                [
                    scale * (c * p[0] - s * p[1]),
                    scale * (s * p[0] + c * p[1]),
                    scale * p[2],
                ]
            } else {
                [scale * p[0], scale * p[1], scale * p[2]]
            }
        })
        .collect();
    Ok((out, Augmentation { scale, angle }))
}
