//! Distance-thresholded proximity graph over events.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;
pub const DEFAULT_THRESHOLD_KM: f64 = 50.0;

/// Great-circle distance in km between two `(lat, lon)` points in degrees.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lat1, lon1) = (a.0.to_radians(), a.1.to_radians());
    let (lat2, lon2) = (b.0.to_radians(), b.1.to_radians());
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Undirected graph on `0..n` with edges `(i, j, km)`, `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph")]
pub struct ProximityGraph {
    n: usize,
    threshold_km: f64,
    edges: Vec<(usize, usize, f64)>,
    #[serde(skip)]
    adjacency: Vec<Vec<usize>>,
}

#[derive(Deserialize)]
struct RawGraph {
    n: usize,
    threshold_km: f64,
    edges: Vec<(usize, usize, f64)>,
}

impl TryFrom<RawGraph> for ProximityGraph {
    type Error = Error;

    fn try_from(raw: RawGraph) -> Result<Self> {
        ProximityGraph::from_edges(raw.n, raw.threshold_km, &raw.edges)
    }
}

impl ProximityGraph {
    /// Connect every pair of points within `threshold_km` of each other.
    pub fn build(points: &[(f64, f64)], threshold_km: f64) -> Result<Self> {
        if !(threshold_km > 0.0) || !threshold_km.is_finite() {
            return Err(Error::arg(format!(
                "proximity threshold must be positive, got {threshold_km}"
            )));
        }
        let mut edges = Vec::new();
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                let d = haversine_km(points[i], points[j]);
                if d <= threshold_km {
                    edges.push((i, j, d));
                }
            }
        }
        Ok(Self::assemble(points.len(), threshold_km, edges))
    }

    /// Build from an explicit edge list; pairs are canonicalized to `i < j`.
    pub fn from_edges(n: usize, threshold_km: f64, edges: &[(usize, usize, f64)]) -> Result<Self> {
        if !(threshold_km > 0.0) {
            return Err(Error::arg("threshold must be positive"));
        }
        let mut out: Vec<(usize, usize, f64)> = Vec::with_capacity(edges.len());
        for &(a, b, d) in edges {
            if a >= n || b >= n {
                return Err(Error::arg(format!("edge ({a}, {b}) outside 0..{n}")));
            }
            if a == b {
                return Err(Error::arg(format!("self-loop on node {a}")));
            }
            if !(d >= 0.0) || d > threshold_km {
                return Err(Error::arg(format!(
                    "edge ({a}, {b}) distance {d} outside [0, {threshold_km}]"
                )));
            }
            out.push((a.min(b), a.max(b), d));
        }
        out.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        if out.windows(2).any(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
            return Err(Error::arg("duplicate edge"));
        }
        Ok(Self::assemble(n, threshold_km, out))
    }

    /// Unit-distance graph from index pairs, for synthetic topologies.
    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let edges: Vec<_> = pairs.iter().map(|&(a, b)| (a, b, 1.0)).collect();
        Self::from_edges(n, 1.0, &edges)
    }

    fn assemble(n: usize, threshold_km: f64, edges: Vec<(usize, usize, f64)>) -> Self {
        let mut g = ProximityGraph {
            n,
            threshold_km,
            edges,
            adjacency: Vec::new(),
        };
        g.rebuild_adjacency();
        g
    }

    fn rebuild_adjacency(&mut self) {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j, _) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        self.adjacency = adj;
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn threshold_km(&self) -> f64 {
        self.threshold_km
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    /// Sorted neighbor indices of `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Same graph with node `i` renamed to `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.n {
            return Err(Error::arg("permutation length differs from node count"));
        }
        let edges: Vec<_> = self
            .edges
            .iter()
            .map(|&(i, j, d)| (perm[i], perm[j], d))
            .collect();
        Self::from_edges(self.n, self.threshold_km, &edges)
    }

    /// Text export, one `i j distance_km` line per edge.
    pub fn write_edge_list<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for &(i, j, d) in &self.edges {
            writeln!(out, "{i} {j} {d:.6}")?;
        }
        Ok(())
    }

    pub fn summary(&self) -> GraphSummary {
        graph_summary(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSummary {
    pub edge_count: usize,
    pub mean_degree: f64,
    pub max_degree: usize,
    pub isolated: usize,
    pub components: usize,
}

pub fn build_proximity_graph(points: &[(f64, f64)], threshold_km: f64) -> Result<ProximityGraph> {
    ProximityGraph::build(points, threshold_km)
}

pub fn graph_summary(g: &ProximityGraph) -> GraphSummary {
    let n = g.node_count();
    let degrees: Vec<usize> = (0..n).map(|i| g.degree(i)).collect();
    let mean_degree = if n == 0 {
        0.0
    } else {
        degrees.iter().sum::<usize>() as f64 / n as f64
    };

    let mut seen = vec![false; n];
    let mut components = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        components += 1;
        seen[start] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            for &v in g.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }

    GraphSummary {
        edge_count: g.edges().len(),
        mean_degree,
        max_degree: degrees.iter().copied().max().unwrap_or(0),
        isolated: degrees.iter().filter(|&&d| d == 0).count(),
        components,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn anchor_distances() {
        assert_eq!(haversine_km((28.0, 84.0), (28.0, 84.0)), 0.0);
        let degree = 2.0 * std::f64::consts::PI * EARTH_RADIUS_KM / 360.0;
        assert_abs_diff_eq!(haversine_km((0.0, 0.0), (0.0, 1.0)), degree, epsilon = 1e-9);
        assert_abs_diff_eq!(haversine_km((0.0, 0.0), (0.0, 1.0)), 111.1949, epsilon = 1e-3);
        assert_abs_diff_eq!(haversine_km((0.0, 0.0), (0.0, 180.0)), 20015.09, epsilon = 0.01);
    }

    #[test]
    fn threshold_controls_single_edge() {
        // 10 km due north
        let b = (28.0 + 10.0 / (EARTH_RADIUS_KM.to_radians()), 84.0);
        let pts = [(28.0, 84.0), b];
        assert_eq!(build_proximity_graph(&pts, 25.0).unwrap().edges().len(), 1);
        assert_eq!(build_proximity_graph(&pts, 5.0).unwrap().edges().len(), 0);
    }

    #[test]
    fn nonpositive_threshold_is_rejected() {
        assert!(build_proximity_graph(&[], 0.0).is_err());
        assert!(build_proximity_graph(&[], -3.0).is_err());
        assert!(build_proximity_graph(&[], f64::NAN).is_err());
    }

    #[test]
    fn summary_of_edgeless_graph() {
        let g = ProximityGraph::from_pairs(5, &[]).unwrap();
        let s = graph_summary(&g);
        assert_eq!((s.components, s.isolated, s.edge_count), (5, 5, 0));
    }

    #[test]
    fn summary_of_path_and_complete() {
        let path = ProximityGraph::from_pairs(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let s = graph_summary(&path);
        assert_eq!(s.mean_degree, 1.5);
        assert_eq!(s.components, 1);
        assert_eq!(s.max_degree, 2);

        let k4 = ProximityGraph::from_pairs(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)])
            .unwrap();
        assert_eq!(graph_summary(&k4).max_degree, 3);
    }

    #[test]
    fn from_edges_rejects_bad_input() {
        assert!(ProximityGraph::from_pairs(2, &[(0, 0)]).is_err());
        assert!(ProximityGraph::from_pairs(2, &[(0, 1), (1, 0)]).is_err());
        assert!(ProximityGraph::from_pairs(2, &[(0, 2)]).is_err());
        assert!(ProximityGraph::from_edges(2, 5.0, &[(0, 1, 6.0)]).is_err());
    }

    #[test]
    fn edge_list_format() {
        let g = ProximityGraph::from_edges(3, 10.0, &[(2, 0, 1.25)]).unwrap();
        let mut buf = Vec::new();
        g.write_edge_list(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0 2 1.250000\n");
    }

    #[test]
    fn json_round_trip_restores_adjacency() {
        let g = build_proximity_graph(&[(28.0, 84.0), (28.1, 84.0), (35.0, 70.0)], 50.0).unwrap();
        let back = serde_json::from_str::<ProximityGraph>(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.neighbors(0), &[1]);
    }

    proptest! {
        #[test]
        fn haversine_symmetric_nonnegative(
            a in (-90.0f64..=90.0, -180.0f64..=180.0),
            b in (-90.0f64..=90.0, -180.0f64..=180.0),
        ) {
            let d = haversine_km(a, b);
            prop_assert!(d >= 0.0);
            prop_assert!((d - haversine_km(b, a)).abs() < 1e-9);
            prop_assert!(d <= std::f64::consts::PI * EARTH_RADIUS_KM + 1e-9);
        }

        #[test]
        fn adjacency_is_symmetric_and_irreflexive(
            pts in proptest::collection::vec((27.0f64..29.0, 84.0f64..86.0), 0..40),
            t in 1.0f64..100.0,
        ) {
            let g = build_proximity_graph(&pts, t).unwrap();
            for i in 0..g.node_count() {
                prop_assert!(!g.neighbors(i).contains(&i));
                for &j in g.neighbors(i) {
                    prop_assert!(g.neighbors(j).contains(&i));
                }
            }
            for &(i, j, d) in g.edges() {
                prop_assert!(i < j && d <= t);
            }
        }
    }
}
