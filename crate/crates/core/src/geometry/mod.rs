//! Discrete supports: point clouds, graphs, grids and meshes.

mod graph;
pub mod io;
mod knn;
mod mesh;
mod synth;
mod transform;

pub use graph::Graph;
pub use knn::{feature_knn_graph, knn_graph};
pub use mesh::{sample_mesh, Mesh};
pub use synth::{synth_dataset, Shape};
pub use transform::{augment, normalize_unit_cube, Augmentation};

use ndarray::Array2;

use crate::{Error, Positions, Result};

/// A sampled signal carrier: positions plus optional features and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub positions: Positions,
    pub features: Option<Array2<f64>>,
    pub label: Option<usize>,
    pub point_labels: Option<Vec<usize>>,
}

impl PointCloud {
    pub fn new(positions: Positions) -> Result<Self> {
        let cloud = PointCloud {
            positions,
            features: None,
            label: None,
            point_labels: None,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::invalid("point cloud has no points"));
        }
        check_finite(&self.positions)?;
        if let Some(f) = &self.features {
            if f.nrows() != self.positions.len() {
                return Err(Error::dims(format!(
                    "features have {} rows for {} points",
                    f.nrows(),
                    self.positions.len()
                )));
            }
        }
        if let Some(pl) = &self.point_labels {
            if pl.len() != self.positions.len() {
                return Err(Error::dims(format!(
                    "{} point labels for {} points",
                    pl.len(),
                    self.positions.len()
                )));
            }
        }
        Ok(())
    }

    /// Positions as an N×3 feature matrix.
    pub fn position_matrix(&self) -> Array2<f64> {
        positions_to_array(&self.positions)
    }
}

pub(crate) fn check_finite(positions: &[[f64; 3]]) -> Result<()> {
    if let Some(i) = positions
        .iter()
        .position(|p| p.iter().any(|c| !c.is_finite()))
    {
        return Err(Error::invalid(format!("non-finite coordinate at point {i}")));
    }
    Ok(())
}

pub fn positions_to_array(positions: &[[f64; 3]]) -> Array2<f64> {
    Array2::from_shape_fn((positions.len(), 3), |(i, k)| positions[i][k])
}

/// Lattice of `nx × ny × nz` points with spacing `h` and axis-aligned
/// nearest-neighbour connectivity (4-neighbour in 2D, 6-neighbour in 3D).
///
/// Vertex `(ix, iy, iz)` has index `ix + nx * (iy + ny * iz)`.
pub fn regular_grid(nx: usize, ny: usize, nz: usize, h: f64) -> Result<(PointCloud, Graph)> {
    if nx == 0 || ny == 0 || nz == 0 {
        return Err(Error::invalid(format!(
            "grid dimensions must be positive, got {nx}x{ny}x{nz}"
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::invalid(format!("grid spacing must be positive, got {h}")));
    }
    let index = |ix: usize, iy: usize, iz: usize| ix + nx * (iy + ny * iz);
    let mut positions = Vec::with_capacity(nx * ny * nz);
    let mut edges = Vec::new();
    for iz in 0..nz {
        for iy in 0..ny {
            for ix in 0..nx {
                positions.push([ix as f64 * h, iy as f64 * h, iz as f64 * h]);
                let v = index(ix, iy, iz);
                if ix + 1 < nx {
                    edges.push((v, index(ix + 1, iy, iz)));
                }
                if iy + 1 < ny {
                    edges.push((v, index(ix, iy + 1, iz)));
                }
                if iz + 1 < nz {
                    edges.push((v, index(ix, iy, iz + 1)));
                }
            }
        }
    }
    let graph = Graph::from_edges(positions.len(), edges)?;
    Ok((PointCloud::new(positions)?, graph))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_counts() {
        let (c, g) = regular_grid(3, 3, 1, 1.0).unwrap();
        assert_eq!(c.len(), 9);
        assert_eq!(g.num_edges(), 12);

        let (c, g) = regular_grid(2, 1, 1, 2.0).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(c.positions[1], [2.0, 0.0, 0.0]);

        let (c, g) = regular_grid(3, 3, 3, 1.0).unwrap();
        assert_eq!(c.len(), 27);
        // 3 axes * n^2 * (n-1)
        assert_eq!(g.num_edges(), 3 * 9 * 2);
    }

    #[test]
    fn grid_edge_lengths_and_interior_degree() {
        let h = 0.25;
        let (c, g) = regular_grid(4, 5, 3, h).unwrap();
        for &(i, j) in g.edges() {
            let d: f64 = (0..3)
                .map(|k| (c.positions[i][k] - c.positions[j][k]).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!((d - h).abs() < 1e-15);
        }
        // interior vertex (1,1,1)
        let v = 1 + 4 * (1 + 5);
        assert_eq!(g.degree(v), 6);

        let (_, g2) = regular_grid(4, 4, 1, 1.0).unwrap();
        assert_eq!(g2.degree(1 + 4), 4);
    }

    #[test]
    fn grid_rejects_zero_dimension() {
        assert!(matches!(
            regular_grid(0, 3, 1, 1.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(regular_grid(3, 3, 1, 0.0).is_err());
    }

    #[test]
    fn cloud_validation() {
        assert!(PointCloud::new(vec![]).is_err());
        assert!(PointCloud::new(vec![[0.0, f64::NAN, 0.0]]).is_err());
        let mut c = PointCloud::new(vec![[0.0; 3]; 2]).unwrap();
        c.features = Some(Array2::zeros((3, 1)));
        assert!(matches!(c.validate(), Err(Error::DimensionMismatch(_))));
    }
}
