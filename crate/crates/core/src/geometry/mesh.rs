use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_finite, PointCloud};
use crate::{Error, Result};

/// Triangle mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<[f64; 3]>, faces: Vec<[usize; 3]>) -> Result<Self> {
        check_finite(&vertices)?;
        if let Some(f) = faces.iter().find(|f| f.iter().any(|&i| i >= vertices.len())) {
            return Err(Error::invalid(format!(
                "face {f:?} references a vertex out of range ({} vertices)",
                vertices.len()
            )));
        }
        Ok(Mesh { vertices, faces })
    }

    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f].map(|i| self.vertices[i]);
        let u = sub(b, a);
        let v = sub(c, a);
        let n = cross(u, v);
        0.5 * (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt()
    }

    /// Drops faces with zero area (repeated or collinear corners).
    pub fn clean(mut self) -> Self {
        let keep: Vec<bool> = (0..self.faces.len()).map(|f| self.face_area(f) > 0.0).collect();
        let mut it = keep.iter();
        self.faces.retain(|_| *it.next().unwrap());
        self
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(u: [f64; 3], v: [f64; 3]) -> [f64; 3] {
    [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ]
}

/// Samples `n` points uniformly over the surface: faces are chosen
/// proportionally to area, positions inside a face by reflected
/// barycentric coordinates.
pub fn sample_mesh(mesh: &Mesh, n: usize, seed: u64) -> Result<PointCloud> {
    if mesh.faces.is_empty() {
        return Err(Error::invalid("mesh has no faces"));
    }
    if n == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let mut cdf = Vec::with_capacity(mesh.faces.len());
    let mut total = 0.0;
    for f in 0..mesh.faces.len() {
        total += mesh.face_area(f);
        cdf.push(total);
    }
    if total <= 0.0 {
        return Err(Error::invalid("mesh has zero surface area"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let t = rng.random::<f64>() * total;
        let f = cdf.partition_point(|&c| c <= t).min(cdf.len() - 1);
        let [a, b, c] = mesh.faces[f].map(|i| mesh.vertices[i]);
        let (mut u, mut v) = (rng.random::<f64>(), rng.random::<f64>());
        if u + v > 1.0 {
            u = 1.0 - u;
            v = 1.0 - v;
        }
        let w = 1.0 - u - v;
        points.push([
            w * a[0] + u * b[0] + v * c[0],
            w * a[1] + u * b[1] + v * c[1],
            w * a[2] + u * b[2] + v * c[2],
        ]);
    }
    PointCloud::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_triangles() -> Mesh {
        // areas 4.5 and 0.5 -> ratio 9:1
        Mesh::new(
            vec![
                [0.0, 0.0, 0.0],
                [3.0, 0.0, 0.0],
                [0.0, 3.0, 0.0],
                [10.0, 0.0, 0.0],
                [11.0, 0.0, 0.0],
                [10.0, 1.0, 0.0],
            ],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap()
    }

    #[test]
    fn single_triangle_points_inside() {
        let m = Mesh::new(
            vec![[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0]],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let c = sample_mesh(&m, 100, 3).unwrap();
        for p in &c.positions {
            assert_eq!(p[2], 1.0);
            assert!(p[0] >= 0.0 && p[1] >= 0.0 && p[0] + p[1] <= 1.0 + 1e-15);
        }
    }

    #[test]
    fn area_proportional_counts() {
        let n = 10_000;
        let c = sample_mesh(&two_triangles(), n, 11).unwrap();
        let big = c.positions.iter().filter(|p| p[0] < 5.0).count() as f64;
        // binomial(n, 0.9): mean 9000, sigma = sqrt(n p (1-p)) = 30
        let sigma = (n as f64 * 0.9 * 0.1).sqrt();
        assert!((big - 9000.0).abs() <= 3.0 * sigma, "big = {big}");
    }

    #[test]
    fn deterministic_per_seed() {
        let a = sample_mesh(&two_triangles(), 50, 5).unwrap();
        let b = sample_mesh(&two_triangles(), 50, 5).unwrap();
        assert_eq!(a, b);
        let c = sample_mesh(&two_triangles(), 50, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn errors_and_cleaning() {
        let m = Mesh::new(vec![[0.0; 3]], vec![]).unwrap();
        assert!(sample_mesh(&m, 10, 0).is_err());
        assert!(Mesh::new(vec![[0.0; 3]], vec![[0, 0, 1]]).is_err());
        let m = Mesh::new(
            vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            vec![[0, 1, 2], [0, 1, 3]],
        )
        .unwrap()
        .clean();
        assert_eq!(m.faces, vec![[0, 1, 3]]);
    }
}
