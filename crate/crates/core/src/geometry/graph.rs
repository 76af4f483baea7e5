use std::collections::BTreeSet;

use crate::{Error, Result};

/// Undirected simple graph. Each edge is stored once as `(i, j)` with
/// `i < j`, edges sorted lexicographically; edge ids index that list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_vertices: usize,
    edges: Vec<(usize, usize)>,
    // CSR: incident edge ids of vertex v are incidence[offsets[v]..offsets[v+1]]
    offsets: Vec<usize>,
    incidence: Vec<usize>,
    degenerate: Vec<usize>,
}

impl Graph {
    /// Builds a graph from arbitrary undirected pairs. Orientation is
    /// normalized, duplicates are merged. Self-loops are rejected.
    pub fn from_edges(
        num_vertices: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        let mut set = BTreeSet::new();
        for (a, b) in pairs {
            if a >= num_vertices || b >= num_vertices {
                return Err(Error::invalid(format!(
                    "edge ({a}, {b}) out of range for {num_vertices} vertices"
                )));
            }
            if a == b {
                return Err(Error::invalid(format!("self-loop at vertex {a}")));
            }
            set.insert((a.min(b), a.max(b)));
        }
        let edges: Vec<_> = set.into_iter().collect();

        let mut counts = vec![0usize; num_vertices + 1];
        for &(i, j) in &edges {
            counts[i + 1] += 1;
            counts[j + 1] += 1;
        }
        for v in 0..num_vertices {
            counts[v + 1] += counts[v];
        }
        let offsets = counts;
        let mut fill = offsets.clone();
        let mut incidence = vec![0usize; 2 * edges.len()];
        for (e, &(i, j)) in edges.iter().enumerate() {
            incidence[fill[i]] = e;
            fill[i] += 1;
            incidence[fill[j]] = e;
            fill[j] += 1;
        }
        Ok(Graph {
            num_vertices,
            edges,
            offsets,
            incidence,
            degenerate: Vec::new(),
        })
    }

    pub fn empty(num_vertices: usize) -> Self {
        Graph {
            num_vertices,
            edges: Vec::new(),
            offsets: vec![0; num_vertices + 1],
            incidence: Vec::new(),
            degenerate: Vec::new(),
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Ids of the edges incident to `v`, ascending.
    pub fn incident_edges(&self, v: usize) -> &[usize] {
        &self.incidence[self.offsets[v]..self.offsets[v + 1]]
    }

    /// `|N_e(v)|`
    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.num_vertices).map(|v| self.degree(v)).collect()
    }

    /// The endpoint of edge `e` that is not `v`.
    pub fn other(&self, e: usize, v: usize) -> usize {
        let (i, j) = self.edges[e];
        if i == v {
            j
        } else {
            i
        }
    }

    /// Neighbour vertices of `v` in incident-edge order.
    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.incident_edges(v).iter().map(move |&e| self.other(e, v))
    }

    /// Zero-length edges recorded by the k-NN builders.
    pub fn degenerate_edges(&self) -> &[usize] {
        &self.degenerate
    }

    pub(crate) fn set_degenerate(&mut self, ids: Vec<usize>) {
        self.degenerate = ids;
    }

    /// Disjoint union: vertices of `other` are shifted by `self.num_vertices()`.
    pub fn disjoint_union(graphs: &[Graph]) -> Graph {
        let mut offset = 0;
        let mut pairs = Vec::new();
        let mut degenerate = Vec::new();
        let mut edge_offset = 0;
        for g in graphs {
            pairs.extend(g.edges.iter().map(|&(i, j)| (i + offset, j + offset)));
            degenerate.extend(g.degenerate.iter().map(|e| e + edge_offset));
            offset += g.num_vertices;
            edge_offset += g.num_edges();
        }
        // pairs are already sorted, unique and oriented, so ids are preserved
        let mut g = Graph::from_edges(offset, pairs).expect("union of valid graphs");
        g.degenerate = degenerate;
        g
    }

    /// Checks edge orientation, uniqueness and incidence consistency.
    pub fn validate(&self) -> Result<()> {
        for w in self.edges.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::invalid("edges not sorted or duplicated"));
            }
        }
        for (e, &(i, j)) in self.edges.iter().enumerate() {
            if i >= j || j >= self.num_vertices {
                return Err(Error::invalid(format!("malformed edge {e}: ({i}, {j})")));
            }
            if !self.incident_edges(i).contains(&e) || !self.incident_edges(j).contains(&e) {
                return Err(Error::invalid(format!("incidence missing edge {e}")));
            }
        }
        let total: usize = (0..self.num_vertices).map(|v| self.degree(v)).sum();
        if total != 2 * self.edges.len() {
            return Err(Error::invalid("degree sum does not match edge count"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dedup_and_orientation() {
        let g = Graph::from_edges(4, [(1, 0), (0, 1), (3, 2), (1, 2)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1), (1, 2), (2, 3)]);
        assert_eq!(g.degrees(), vec![1, 2, 2, 1]);
        assert_eq!(g.incident_edges(1), &[0, 1]);
        assert_eq!(g.neighbors(2).collect::<Vec<_>>(), vec![1, 3]);
        g.validate().unwrap();
    }

    #[test]
    fn rejects_self_loops_and_range() {
        assert!(Graph::from_edges(3, [(1, 1)]).is_err());
        assert!(Graph::from_edges(3, [(1, 3)]).is_err());
    }

    #[test]
    fn union_shifts_ids() {
        let a = Graph::from_edges(2, [(0, 1)]).unwrap();
        let b = Graph::from_edges(3, [(0, 2), (1, 2)]).unwrap();
        let u = Graph::disjoint_union(&[a, b]);
        assert_eq!(u.num_vertices(), 5);
        assert_eq!(u.edges(), &[(0, 1), (2, 4), (3, 4)]);
    }
}
