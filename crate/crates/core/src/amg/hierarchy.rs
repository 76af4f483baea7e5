use serde::Serialize;

use super::{
    adjacency_matrix, coarse_graph, coarse_positions, distance_weights, graclus_cluster,
    restriction_matrix, smoothed_prolongation, Aggregation, VisitOrder,
};
use crate::geometry::Graph;
use crate::sparse::SparseOperator;
use crate::{Error, Positions, Result};

/// One resolution of the hierarchy.
#[derive(Debug, Clone)]
pub struct Level {
    pub graph: Graph,
    /// Weighted adjacency; level 0 is the 0/1 adjacency of the input graph.
    pub adjacency: SparseOperator,
    pub positions: Positions,
}

/// Operators between level `ℓ` (fine) and `ℓ + 1` (coarse).
#[derive(Debug, Clone)]
pub struct Transfer {
    pub aggregation: Aggregation,
    /// coarse × fine
    pub restriction: SparseOperator,
    /// fine × coarse
    pub prolongation: SparseOperator,
}

#[derive(Debug, Clone)]
pub struct Hierarchy {
    pub levels: Vec<Level>,
    pub transfers: Vec<Transfer>,
    pub requested_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HierarchySummary {
    pub requested_depth: usize,
    pub achieved_depth: usize,
    pub level_sizes: Vec<usize>,
    pub level_edges: Vec<usize>,
    pub restriction_nnz: Vec<usize>,
    pub prolongation_nnz: Vec<usize>,
}

impl Hierarchy {
    pub fn achieved_depth(&self) -> usize {
        self.transfers.len()
    }

    pub fn level_sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.graph.num_vertices()).collect()
    }

    pub fn summary(&self) -> HierarchySummary {
        HierarchySummary {
            requested_depth: self.requested_depth,
            achieved_depth: self.achieved_depth(),
            level_sizes: self.level_sizes(),
            level_edges: self.levels.iter().map(|l| l.graph.num_edges()).collect(),
            restriction_nnz: self.transfers.iter().map(|t| t.restriction.nnz()).collect(),
            prolongation_nnz: self.transfers.iter().map(|t| t.prolongation.nnz()).collect(),
        }
    }
}

/// Coarsens one level: matching on distance weights, Galerkin product,
/// smoothed prolongation, centroid positions.
pub fn coarsen(level: &Level, order: VisitOrder) -> Result<(Level, Transfer)> {
    let weights = distance_weights(&level.graph, &level.positions);
    let aggregation = graclus_cluster(&level.graph, &weights, order)?;
    let restriction = restriction_matrix(&aggregation);
    let prolongation = smoothed_prolongation(&restriction, &level.adjacency)?;
    let ac = restriction.matmul(&level.adjacency)?.matmul(&restriction.transpose())?;
    let coarse = Level {
        graph: coarse_graph(&ac)?,
        adjacency: ac,
        positions: coarse_positions(&aggregation, &level.positions)?,
    };
    Ok((coarse, Transfer { aggregation, restriction, prolongation }))
}

/// Repeated coarsening up to `depth` times. Stops early once a level has no
/// edges (matching cannot merge anything).
pub fn build_hierarchy(graph: &Graph, positions: &[[f64; 3]], depth: usize, order: VisitOrder) -> Result<Hierarchy> {
    if positions.len() != graph.num_vertices() {
        return Err(Error::dims(format!(
            "{} positions for {} vertices",
            positions.len(),
            graph.num_vertices()
        )));
    }
    let mut levels = vec![Level {
        graph: graph.clone(),
        adjacency: adjacency_matrix(graph),
        positions: positions.to_vec(),
    }];
    let mut transfers = Vec::new();
    for step in 0..depth {
        let fine = levels.last().unwrap();
        if fine.graph.num_edges() == 0 {
            log::info!("coarsening stalled after {step} levels");
            break;
        }
        let order = match order {
            VisitOrder::Natural => VisitOrder::Natural,
            VisitOrder::Shuffled(s) => VisitOrder::Shuffled(s.wrapping_add(step as u64)),
        };
        let (coarse, transfer) = coarsen(fine, order)?;
        levels.push(coarse);
        transfers.push(transfer);
    }
    Ok(Hierarchy { levels, transfers, requested_depth: depth })
}
