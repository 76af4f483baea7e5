use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::transform::fit_box;
use super::PointCloud;
use crate::{Error, Result};

/// Analytic surfaces used for the synthetic classification dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Sphere,
    Cube,
    Torus,
    Cylinder,
    Cone,
}

const TORUS_MAJOR: f64 = 1.0;
const TORUS_MINOR: f64 = 0.35;

impl Shape {
    pub const ALL: [Shape; 5] = [
        Shape::Sphere,
        Shape::Cube,
        Shape::Torus,
        Shape::Cylinder,
        Shape::Cone,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Sphere => "sphere",
            Shape::Cube => "cube",
            Shape::Torus => "torus",
            Shape::Cylinder => "cylinder",
            Shape::Cone => "cone",
        }
    }

    /// Parses a comma-separated class list such as `"sphere,cube"`.
    pub fn parse_list(s: &str) -> Result<Vec<Shape>> {
        s.split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect()
    }

    /// Axis-aligned bounds of the surface in its canonical frame.
    fn bounds(self) -> ([f64; 3], [f64; 3]) {
        match self {
            Shape::Sphere | Shape::Cube | Shape::Cylinder | Shape::Cone => ([-1.0; 3], [1.0; 3]),
            Shape::Torus => {
                let r = TORUS_MAJOR + TORUS_MINOR;
                ([-r, -r, -TORUS_MINOR], [r, r, TORUS_MINOR])
            }
        }
    }

    /// One area-uniform sample on the surface.
    fn sample(self, rng: &mut impl Rng) -> [f64; 3] {
        match self {
            Shape::Sphere => loop {
                let v: [f64; 3] = [
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                    rng.sample(StandardNormal),
                ];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if n > 1e-12 {
                    break [v[0] / n, v[1] / n, v[2] / n];
                }
            },
            Shape::Cube => {
                let face = rng.random_range(0..6usize);
                let a = rng.random_range(-1.0..1.0);
                let b = rng.random_range(-1.0..1.0);
                let s = if face % 2 == 0 { 1.0 } else { -1.0 };
                match face / 2 {
                    0 => [s, a, b],
                    1 => [a, s, b],
                    _ => [a, b, s],
                }
            }
            Shape::Torus => loop {
                // rejection on the tube angle makes the density area-uniform
                let u = rng.random_range(0.0..2.0 * PI);
                let v = rng.random_range(0.0..2.0 * PI);
                let w: f64 = rng.random();
                if w <= (TORUS_MAJOR + TORUS_MINOR * v.cos()) / (TORUS_MAJOR + TORUS_MINOR) {
                    let rr = TORUS_MAJOR + TORUS_MINOR * v.cos();
                    break [rr * u.cos(), rr * u.sin(), TORUS_MINOR * v.sin()];
                }
            },
            Shape::Cylinder => {
                // radius 1, height 2: side area 4*pi, caps 2*pi
                let t = rng.random_range(0.0..2.0 * PI);
                if rng.random::<f64>() < 4.0 / 6.0 {
                    [t.cos(), t.sin(), rng.random_range(-1.0..1.0)]
                } else {
                    let r = rng.random::<f64>().sqrt();
                    let z = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    [r * t.cos(), r * t.sin(), z]
                }
            }
            Shape::Cone => {
                // apex at z = 1, unit base disc at z = -1
                let lateral = PI * 5f64.sqrt();
                let base = PI;
                let t = rng.random_range(0.0..2.0 * PI);
                if rng.random::<f64>() < lateral / (lateral + base) {
                    let s = rng.random::<f64>().sqrt();
                    [s * t.cos(), s * t.sin(), 1.0 - 2.0 * s]
                } else {
                    let r = rng.random::<f64>().sqrt();
                    [r * t.cos(), r * t.sin(), -1.0]
                }
            }
        }
    }
}

impl FromStr for Shape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Shape::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown shape class '{s}'")))
    }
}

/// Labeled clouds sampled from analytic surfaces, mapped to the unit cube by
/// the analytic bounding box, then jittered with Gaussian noise.
///
/// Clouds are grouped by class in `classes` order; label = class position.
pub fn synth_dataset(
    classes: &[Shape],
    n_per_class: usize,
    points_per_cloud: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<Vec<PointCloud>> {
    if classes.is_empty() {
        return Err(Error::invalid("no classes given"));
    }
    if points_per_cloud == 0 {
        return Err(Error::invalid("points_per_cloud must be positive"));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(Error::invalid(format!("bad noise level {noise_sd}")));
    }
    let mut out = Vec::with_capacity(classes.len() * n_per_class);
    for (label, &shape) in classes.iter().enumerate() {
        for i in 0..n_per_class {
            let stream = (label * n_per_class + i) as u64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            let raw: Vec<[f64; 3]> = (0..points_per_cloud).map(|_| shape.sample(&mut rng)).collect();
            let (lo, hi) = shape.bounds();
            let mut pts = fit_box(&raw, lo, hi);
            if noise_sd > 0.0 {
                for p in &mut pts {
                    for c in p.iter_mut() {
                        *c += noise_sd * rng.sample::<f64, _>(StandardNormal);
                    }
                }
            }
            out.push(PointCloud::new(pts)?.with_label(label));
        }
    }
    Ok(out)
}
