//! Patient-similarity graphs.
//!
//! Each patient `i` picks its own neighbourhood size `k_i` from the mean of
//! its standardized features, then takes its `k_i` most cosine-similar other
//! patients as in-neighbours. Edges are directed `j -> i` (message from
//! neighbour `j` to patient `i`) and weighted by the raw cosine similarity.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientGraph {
    node_count: usize,
    edges: Vec<Edge>,
    k: Vec<usize>,
    in_edges: Vec<Vec<usize>>,
}

const NORM_EPS: f64 = 1e-12;

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!(
            "cosine similarity of lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if nu < NORM_EPS || nv < NORM_EPS {
        return Ok(0.0);
    }
    Ok(dot / (nu * nv))
}

/// Neighbourhood size from the sigmoid of the row mean, rounded half up.
pub fn adaptive_k(x: &[f64], k_min: usize, k_max: usize) -> usize {
    let mean = if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    };
    let raw = k_min as f64 + (k_max as f64 - k_min as f64) * sigmoid(mean);
    ((raw + 0.5).floor() as usize).clamp(k_min, k_max)
}

fn check_bounds(k_min: usize, k_max: usize) -> Result<()> {
    if k_min < 1 || k_max < k_min {
        return Err(Error::Invalid(format!(
            "neighbourhood bounds k_min={k_min}, k_max={k_max}"
        )));
    }
    Ok(())
}

/// Candidates for `target` ordered by descending similarity, ties by lower index.
fn ranked_candidates(sims: &[f64], target: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sims.len()).filter(|&j| j != target).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    order
}

pub fn build_adaptive_knn_graph(x: &Matrix, k_min: usize, k_max: usize) -> Result<PatientGraph> {
    check_bounds(k_min, k_max)?;
    let n = x.rows();
    if n < k_min + 1 {
        return Err(Error::Invalid(format!(
            "{n} patients cannot give each node {k_min} neighbours"
        )));
    }
    let cap = k_max.min(n - 1);
    let mut sims = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s = cosine_similarity(x.row(i), x.row(j))?;
            sims[i * n + j] = s;
            sims[j * n + i] = s;
        }
    }
    let mut edges = Vec::new();
    let mut ks = Vec::with_capacity(n);
    for i in 0..n {
        let k_i = adaptive_k(x.row(i), k_min, k_max).min(cap);
        let row = &sims[i * n..(i + 1) * n];
        for j in ranked_candidates(row, i).into_iter().take(k_i) {
            edges.push(Edge {
                src: j,
                dst: i,
                weight: row[j],
            });
        }
        ks.push(k_i);
    }
    PatientGraph::from_parts(n, edges, ks)
}

impl PatientGraph {
    fn from_parts(node_count: usize, edges: Vec<Edge>, k: Vec<usize>) -> Result<Self> {
        let mut in_edges = vec![Vec::new(); node_count];
        for (e, edge) in edges.iter().enumerate() {
            if edge.src >= node_count || edge.dst >= node_count {
                return Err(Error::Invalid(format!(
                    "edge {}->{} outside {node_count} nodes",
                    edge.src, edge.dst
                )));
            }
            if edge.src == edge.dst {
                return Err(Error::Invalid(format!("self-edge on node {}", edge.src)));
            }
            if !edge.weight.is_finite() {
                return Err(Error::NonFinite(format!("edge {}->{} weight", edge.src, edge.dst)));
            }
            in_edges[edge.dst].push(e);
        }
        Ok(Self {
            node_count,
            edges,
            k,
            in_edges,
        })
    }

    /// Hand-assembled graph; `k_i` is taken to be each node's in-degree.
    pub fn from_edges(node_count: usize, edges: Vec<Edge>) -> Result<Self> {
        let mut k = vec![0; node_count];
        for e in &edges {
            if e.dst < node_count {
                k[e.dst] += 1;
            }
        }
        Self::from_parts(node_count, edges, k)
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn k(&self) -> &[usize] {
        &self.k
    }

    /// Edge indices whose destination is `node`, in neighbour-rank order.
    pub fn in_edges(&self, node: usize) -> &[usize] {
        &self.in_edges[node]
    }

    pub fn in_neighbors(&self, node: usize) -> Vec<usize> {
        self.in_edges[node].iter().map(|&e| self.edges[e].src).collect()
    }

    pub fn in_degree(&self, node: usize) -> usize {
        self.in_edges[node].len()
    }

    pub fn src_indices(&self) -> Arc<[usize]> {
        self.edges.iter().map(|e| e.src).collect()
    }

    pub fn dst_indices(&self) -> Arc<[usize]> {
        self.edges.iter().map(|e| e.dst).collect()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.weight).collect()
    }

    /// Scales every in-edge of node `i` by `1 - c_i`; topology is unchanged.
    pub fn modulate_edges(&self, confidence: &[f64]) -> Result<PatientGraph> {
        if confidence.len() != self.node_count {
            return Err(Error::Invalid(format!(
                "{} confidences for {} nodes",
                confidence.len(),
                self.node_count
            )));
        }
        if let Some(c) = confidence.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::Invalid(format!("confidence {c} outside [0, 1]")));
        }
        let mut out = self.clone();
        for e in &mut out.edges {
            e.weight *= 1.0 - confidence[e.dst];
        }
        Ok(out)
    }

    pub fn export(&self) -> GraphExport {
        GraphExport {
            nodes: (0..self.node_count)
                .map(|i| NodeExport {
                    id: i,
                    k: self.k[i],
                    in_degree: self.in_degree(i),
                })
                .collect(),
            edges: self
                .edges
                .iter()
                .map(|e| EdgeExport {
                    source: e.src,
                    target: e.dst,
                    weight: e.weight,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeExport {
    pub id: usize,
    pub k: usize,
    pub in_degree: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeExport {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
}

/// JSON view of a graph for visualization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphExport {
    pub nodes: Vec<NodeExport>,
    pub edges: Vec<EdgeExport>,
}

/// Local graph around one unseen patient. Node 0 is the new patient; node
/// `l >= 1` is training row `train_rows[l - 1]`, the `l`-th most similar.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniGraph {
    pub graph: PatientGraph,
    pub train_rows: Vec<usize>,
    pub similarities: Vec<f64>,
    /// `(k + 1) x d` local features, new patient first.
    pub features: Matrix,
}

impl MiniGraph {
    pub fn neighbor_count(&self) -> usize {
        self.train_rows.len()
    }
}

pub fn build_mini_graph(
    x_new: &[f64],
    x_train: &Matrix,
    k: usize,
    k_min: usize,
    k_max: usize,
) -> Result<MiniGraph> {
    check_bounds(k_min, k_max)?;
    if x_train.rows() == 0 {
        return Err(Error::Invalid("mini-graph needs training rows".into()));
    }
    if x_new.len() != x_train.cols() {
        return Err(Error::Shape(format!(
            "patient has {} features, training matrix {}",
            x_new.len(),
            x_train.cols()
        )));
    }
    if k == 0 {
        return Err(Error::Invalid("mini-graph k must be positive".into()));
    }
    let k = k.min(x_train.rows());
    let sims = (0..x_train.rows())
        .map(|r| cosine_similarity(x_new, x_train.row(r)))
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..sims.len()).collect();
    order.sort_by(|&a, &b| sims[b].total_cmp(&sims[a]).then(a.cmp(&b)));
    order.truncate(k);

    let mut data = x_new.to_vec();
    for &r in &order {
        data.extend_from_slice(x_train.row(r));
    }
    let features = Matrix::new(k + 1, x_new.len(), data)?;
    let graph = build_adaptive_knn_graph(&features, k_min.min(k), k_max.min(k))?;
    Ok(MiniGraph {
        graph,
        similarities: order.iter().map(|&r| sims[r]).collect(),
        train_rows: order,
        features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    /// Full-sort reference: every pair scored, every candidate list sorted.
    fn oracle_neighbors(x: &Matrix, k_min: usize, k_max: usize) -> Vec<Vec<usize>> {
        let n = x.rows();
        (0..n)
            .map(|i| {
                let mut scored: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| (cosine_similarity(x.row(i), x.row(j)).unwrap(), j))
                    .collect();
                scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
                let k = adaptive_k(x.row(i), k_min, k_max).min(n - 1);
                scored.into_iter().take(k).map(|(_, j)| j).collect()
            })
            .collect()
    }

    #[test]
    fn cosine_cases() {
        assert!((cosine_similarity(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[-1.0, 0.0]).unwrap(), -1.0);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn adaptive_k_cases() {
        assert_eq!(adaptive_k(&[50.0; 4], 3, 10), 10);
        assert_eq!(adaptive_k(&[-50.0; 4], 3, 10), 3);
        assert_eq!(adaptive_k(&[1.0, -1.0], 3, 10), 7);
        assert_eq!(adaptive_k(&[0.3], 5, 5), 5);
    }

    #[test]
    fn identical_rows_tie_break_to_lowest_index() {
        let x = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let g = build_adaptive_knn_graph(&x, 1, 1).unwrap();
        assert_eq!(g.in_neighbors(0), vec![1]);
        assert_eq!(g.in_neighbors(1), vec![0]);
        assert_eq!(g.in_neighbors(2), vec![0]);
        for e in g.edges() {
            assert!((e.weight - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn orthogonal_clusters_stay_apart() {
        let x = Matrix::from_rows(&[
            vec![1.0, 0.1],
            vec![1.0, 0.2],
            vec![1.0, 0.0],
            vec![0.1, 1.0],
            vec![0.0, 1.0],
            vec![0.2, 1.0],
        ])
        .unwrap();
        let g = build_adaptive_knn_graph(&x, 1, 1).unwrap();
        for i in 0..6 {
            let j = g.in_neighbors(i)[0];
            assert_eq!(i < 3, j < 3, "node {i} picked {j}");
        }
    }

    #[test]
    fn random_graph_matches_full_sort() {
        let x = Rng::seed(20).uniform_matrix(20, 5, -2.0, 2.0);
        let g = build_adaptive_knn_graph(&x, 2, 6).unwrap();
        let oracle = oracle_neighbors(&x, 2, 6);
        for (i, expected) in oracle.iter().enumerate() {
            assert_eq!(&g.in_neighbors(i), expected);
        }
    }

    #[test]
    fn too_few_nodes() {
        let x = Matrix::zeros(3, 2);
        assert!(build_adaptive_knn_graph(&x, 3, 5).is_err());
        assert!(build_adaptive_knn_graph(&x, 0, 5).is_err());
        assert!(build_adaptive_knn_graph(&x, 2, 1).is_err());
    }

    #[test]
    fn modulation_cases() {
        let g = PatientGraph::from_edges(
            2,
            vec![
                Edge { src: 1, dst: 0, weight: 0.8 },
                Edge { src: 0, dst: 1, weight: 0.6 },
            ],
        )
        .unwrap();
        assert_eq!(g.modulate_edges(&[0.0, 0.0]).unwrap(), g);
        let m = g.modulate_edges(&[0.5, 1.0]).unwrap();
        assert!((m.edges()[0].weight - 0.4).abs() < 1e-15);
        assert_eq!(m.edges()[1].weight, 0.0);
        assert!(g.modulate_edges(&[1.5, 0.0]).is_err());
        assert!(g.modulate_edges(&[0.5]).is_err());
    }

    #[test]
    fn hand_built_graph_rejects_self_edges() {
        assert!(PatientGraph::from_edges(2, vec![Edge { src: 1, dst: 1, weight: 1.0 }]).is_err());
        assert!(PatientGraph::from_edges(2, vec![Edge { src: 2, dst: 1, weight: 1.0 }]).is_err());
    }

    #[test]
    fn mini_graph_duplicate_row_ranks_first() {
        let x = Rng::seed(4).uniform_matrix(30, 4, -2.0, 2.0);
        let m = build_mini_graph(x.row(17), &x, 10, 3, 10).unwrap();
        assert_eq!(m.train_rows[0], 17);
        assert!((m.similarities[0] - 1.0).abs() < 1e-12);
        assert_eq!(m.graph.node_count(), 11);
        assert!(m.similarities.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn mini_graph_clamps_k() {
        let x = Rng::seed(5).uniform_matrix(5, 3, -2.0, 2.0);
        let m = build_mini_graph(&[0.1, 0.2, 0.3], &x, 10, 3, 10).unwrap();
        assert_eq!(m.graph.node_count(), 6);
        assert_eq!(m.neighbor_count(), 5);
        let single = build_mini_graph(&[0.1, 0.2, 0.3], &x.select_rows(&[0]), 10, 3, 10).unwrap();
        assert_eq!(single.graph.node_count(), 2);
        assert_eq!(single.graph.in_degree(0), 1);
    }

    #[test]
    fn mini_graph_matches_top_k_oracle() {
        let mut rng = Rng::seed(6);
        let x = rng.uniform_matrix(40, 5, -2.0, 2.0);
        let q: Vec<f64> = (0..5).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let mut scored: Vec<(f64, usize)> =
            (0..40).map(|r| (cosine_similarity(&q, x.row(r)).unwrap(), r)).collect();
        scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let expected: Vec<usize> = scored.iter().take(10).map(|s| s.1).collect();
        let m = build_mini_graph(&q, &x, 10, 3, 10).unwrap();
        assert_eq!(m.train_rows, expected);
    }

    #[test]
    fn export_lists_everything() {
        let x = Rng::seed(8).uniform_matrix(8, 3, -1.0, 1.0);
        let g = build_adaptive_knn_graph(&x, 2, 4).unwrap();
        let ex = g.export();
        assert_eq!(ex.nodes.len(), 8);
        assert_eq!(ex.edges.len(), g.edge_count());
        let json = serde_json::to_string(&ex).unwrap();
        assert!(json.contains("\"source\""));
    }

    proptest! {
        #[test]
        fn in_degree_within_bounds(seed in any::<u64>(), n in 4usize..25, k_min in 1usize..4, extra in 0usize..6) {
            let k_max = k_min + extra;
            prop_assume!(n > k_min);
            let x = Rng::seed(seed).uniform_matrix(n, 4, -3.0, 3.0);
            let g = build_adaptive_knn_graph(&x, k_min, k_max).unwrap();
            for i in 0..n {
                let d = g.in_degree(i);
                prop_assert!(d >= k_min && d <= k_max && d < n);
                prop_assert_eq!(d, g.k()[i]);
                prop_assert!(!g.in_neighbors(i).contains(&i));
            }
        }

        #[test]
        fn relabeling_rows_relabels_graph(seed in any::<u64>()) {
            let mut rng = Rng::seed(seed);
            let n = 15;
            let x = rng.uniform_matrix(n, 4, -2.0, 2.0);
            let mut perm: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut perm);
            // row r of the permuted matrix is original row perm[r]
            let xp = x.select_rows(&perm);
            let g = build_adaptive_knn_graph(&x, 2, 5).unwrap();
            let gp = build_adaptive_knn_graph(&xp, 2, 5).unwrap();
            for r in 0..n {
                let mut mapped: Vec<usize> = gp.in_neighbors(r).iter().map(|&j| perm[j]).collect();
                let mut orig = g.in_neighbors(perm[r]);
                mapped.sort_unstable();
                orig.sort_unstable();
                prop_assert_eq!(mapped, orig);
            }
        }

        #[test]
        fn zero_confidence_is_identity(seed in any::<u64>()) {
            let x = Rng::seed(seed).uniform_matrix(10, 3, -2.0, 2.0);
            let g = build_adaptive_knn_graph(&x, 2, 4).unwrap();
            prop_assert_eq!(g.modulate_edges(&[0.0; 10]).unwrap(), g.clone());
            let c: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
            let m = g.modulate_edges(&c).unwrap();
            prop_assert_eq!(m.src_indices(), g.src_indices());
            prop_assert_eq!(m.dst_indices(), g.dst_indices());
        }

        #[test]
        fn mini_graph_center_degree(seed in any::<u64>(), n_train in 1usize..30, k in 1usize..12) {
            let mut rng = Rng::seed(seed);
            let x = rng.uniform_matrix(n_train, 3, -2.0, 2.0);
            let q = [rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)];
            let m = build_mini_graph(&q, &x, k, 3, 10).unwrap();
            prop_assert_eq!(m.neighbor_count(), k.min(n_train));
            prop_assert!(m.graph.in_degree(0) >= 3.min(k).min(n_train));
        }
    }
}
