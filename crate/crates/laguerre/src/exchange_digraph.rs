//! The exchange digraph between two partitions: an edge `i -> j` carries the
//! mass that moves from cell `i` of the first partition to cell `j` of the second.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridded_measure::{intersection_matrix, CellPartition, GriddedMeasure};
use crate::storage_fee::HyperrectangleFee;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangeDigraph {
    pub n_vertices: usize,
    /// Sorted by `(from, to)`.
    pub edges: Vec<Edge>,
    pub threshold: f64,
    /// Pairs whose weight lies within a factor of two of the threshold, kept
    /// or not; their presence is resolution dependent.
    pub near_threshold: Vec<Edge>,
}

impl ExchangeDigraph {
    /// Graph from an explicit edge list. Self-loops and nonpositive weights are rejected.
    pub fn from_edges(n_vertices: usize, mut edges: Vec<Edge>) -> Result<Self> {
        for e in &edges {
            if e.from >= n_vertices || e.to >= n_vertices {
                return Err(Error::IndexOutOfRange { index: e.from.max(e.to), n: n_vertices });
            }
            if e.from == e.to || !(e.weight > 0.0) {
                return Err(Error::InvalidInput(format!("bad edge {} -> {}", e.from, e.to)));
            }
        }
        edges.sort_by_key(|e| (e.from, e.to));
        Ok(Self { n_vertices, edges, threshold: 0.0, near_threshold: vec![] })
    }

    pub fn out_degree(&self, i: usize) -> f64 {
        self.edges.iter().filter(|e| e.from == i).map(|e| e.weight).sum()
    }

    pub fn in_degree(&self, i: usize) -> f64 {
        self.edges.iter().filter(|e| e.to == i).map(|e| e.weight).sum()
    }

    pub fn has_incoming(&self, i: usize) -> bool {
        self.edges.iter().any(|e| e.to == i)
    }

    pub fn has_outgoing(&self, i: usize) -> bool {
        self.edges.iter().any(|e| e.from == i)
    }

    fn successors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_vertices];
        for e in &self.edges {
            adj[e.from].push(e.to);
        }
        adj
    }

    /// One `i j weight` line per edge.
    pub fn to_edge_list(&self) -> String {
        self.edges.iter().map(|e| format!("{} {} {:e}\n", e.from, e.to, e.weight)).collect()
    }

    pub fn write_edge_list(&self, mut w: impl Write) -> Result<()> {
        w.write_all(self.to_edge_list().as_bytes())?;
        Ok(())
    }
}

/// Builds the digraph, keeping pairs whose intersection mass exceeds `threshold`.
/// `None` uses three times the largest pixel mass, the smallest allowed value.
pub fn build_digraph(p1: &CellPartition, p2: &CellPartition, mu: &GriddedMeasure, threshold: Option<f64>) -> Result<ExchangeDigraph> {
    let floor = mu.empty_cell_threshold();
    let threshold = threshold.unwrap_or(floor);
    if threshold < floor * (1.0 - 1e-12) {
        return Err(Error::InvalidInput(format!("threshold {threshold:e} is below three pixel masses {floor:e}")));
    }
    if p1.n_sites() != p2.n_sites() {
        return Err(Error::SizeMismatch { expected: p1.n_sites(), got: p2.n_sites() });
    }
    let m = intersection_matrix(p1, p2, mu)?;
    let n = p1.n_sites();
    let mut edges = Vec::new();
    let mut near = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let w = m[(i, j)];
            let e = Edge { from: i, to: j, weight: w };
            if w > threshold {
                edges.push(e);
            }
            if w > 0.5 * threshold && w < 2.0 * threshold {
                near.push(e);
            }
        }
    }
    Ok(ExchangeDigraph { n_vertices: n, edges, threshold, near_threshold: near })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcyclicityCheck {
    pub acyclic: bool,
    /// A shortest cycle, starting at its smallest vertex.
    pub witness_cycle: Option<Vec<usize>>,
}

/// Kahn peeling; on failure, a shortest cycle among the unpeeled vertices.
pub fn check_acyclic(g: &ExchangeDigraph) -> AcyclicityCheck {
    let adj = g.successors();
    let n = g.n_vertices;
    let mut indeg = vec![0usize; n];
    for e in &g.edges {
        indeg[e.to] += 1;
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&v| indeg[v] == 0).collect();
    let mut peeled = vec![false; n];
    while let Some(v) = queue.pop_front() {
        peeled[v] = true;
        for &w in &adj[v] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                queue.push_back(w);
            }
        }
    }
    if peeled.iter().all(|&p| p) {
        return AcyclicityCheck { acyclic: true, witness_cycle: None };
    }
    let mut best: Option<Vec<usize>> = None;
    for s in (0..n).filter(|&v| !peeled[v]) {
        // Shortest path from s back to s through unpeeled vertices.
        let mut parent = vec![usize::MAX; n];
        let mut seen = vec![false; n];
        let mut q = VecDeque::from([s]);
        seen[s] = true;
        let mut closing = None;
        'bfs: while let Some(v) = q.pop_front() {
            for &w in &adj[v] {
                if peeled[w] {
                    continue;
                }
                if w == s {
                    closing = Some(v);
                    break 'bfs;
                }
                if !seen[w] {
                    seen[w] = true;
                    parent[w] = v;
                    q.push_back(w);
                }
            }
        }
        if let Some(mut v) = closing {
            let mut cyc = vec![v];
            while v != s {
                v = parent[v];
                cyc.push(v);
            }
            cyc.reverse();
            if best.as_ref().is_none_or(|b| cyc.len() < b.len()) {
                best = Some(cyc);
            }
        }
    }
    AcyclicityCheck { acyclic: false, witness_cycle: best }
}

/// Topological order with ties broken by smallest index.
pub fn topological_order(g: &ExchangeDigraph) -> Result<Vec<usize>> {
    let adj = g.successors();
    let n = g.n_vertices;
    let mut indeg = vec![0usize; n];
    for e in &g.edges {
        indeg[e.to] += 1;
    }
    let mut heap: BinaryHeap<Reverse<usize>> = (0..n).filter(|&v| indeg[v] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(v)) = heap.pop() {
        order.push(v);
        for &w in &adj[v] {
            indeg[w] -= 1;
            if indeg[w] == 0 {
                heap.push(Reverse(w));
            }
        }
    }
    if order.len() < n {
        let witness = check_acyclic(g).witness_cycle.unwrap_or_default();
        return Err(Error::Cyclic(witness));
    }
    Ok(order)
}

/// Clause-by-clause check of the structure of the digraph when the second
/// fee raises one upper bound of the first by `eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingleBoxReport {
    pub enlarged: usize,
    pub eps: f64,
    pub tolerance: f64,
    pub acyclic: bool,
    pub max_out_degree: f64,
    pub out_degree_ok: bool,
    pub l1_change: f64,
    pub l1_ok: bool,
    pub symmetric_difference: f64,
    pub symmetric_difference_ok: bool,
    /// Largest `|lambda_2 - lambda_1 - indeg + outdeg|` over vertices.
    pub degree_identity_error: f64,
    pub degree_identity_ok: bool,
    /// Vertices with an incoming edge whose first mass is below its upper bound.
    pub receivers_below_capacity: Vec<usize>,
    pub receivers_at_capacity: bool,
    /// Vertices other than the enlarged one that gained mass.
    pub gainers: Vec<usize>,
    pub others_do_not_gain: bool,
    pub enlarged_has_no_outgoing: bool,
    /// Every vertex other than the enlarged one that receives more than `tolerance` also sends.
    pub receivers_also_send: bool,
    pub order_ends_at_enlarged: bool,
}

impl SingleBoxReport {
    pub fn all_hold(&self) -> bool {
        self.acyclic
            && self.out_degree_ok
            && self.l1_ok
            && self.symmetric_difference_ok
            && self.degree_identity_ok
            && self.receivers_at_capacity
            && self.others_do_not_gain
            && self.enlarged_has_no_outgoing
            && self.receivers_also_send
    }
}

/// Checks the single-enlargement structure. `tol` is the mass tolerance used for
/// every clause; three thresholds per vertex is the natural choice.
pub fn verify_single_box_perturbation(
    g: &ExchangeDigraph,
    fee1: &HyperrectangleFee,
    fee2: &HyperrectangleFee,
    lambda1: &[f64],
    lambda2: &[f64],
    tol: f64,
) -> Result<SingleBoxReport> {
    let n = g.n_vertices;
    for len in [fee1.len(), fee2.len(), lambda1.len(), lambda2.len()] {
        if len != n {
            return Err(Error::SizeMismatch { expected: n, got: len });
        }
    }
    let (k, eps) = fee1
        .single_enlargement(fee2)
        .ok_or_else(|| Error::InvalidInput("fees must differ in exactly one upper bound".into()))?;
    let acyclic = check_acyclic(g).acyclic;
    let out: Vec<f64> = (0..n).map(|i| g.out_degree(i)).collect();
    let inn: Vec<f64> = (0..n).map(|i| g.in_degree(i)).collect();
    let max_out = out.iter().cloned().fold(0.0, f64::max);
    let l1: f64 = lambda1.iter().zip(lambda2).map(|(a, b)| (a - b).abs()).sum();
    let sym: f64 = out.iter().sum::<f64>() + inn.iter().sum::<f64>();
    let deg_err = (0..n).map(|i| (lambda2[i] - lambda1[i] - inn[i] + out[i]).abs()).fold(0.0, f64::max);
    let below: Vec<usize> = (0..n).filter(|&i| g.has_incoming(i) && lambda1[i] < fee1.upper[i] - tol).collect();
    let gainers: Vec<usize> = (0..n).filter(|&i| i != k && lambda2[i] > lambda1[i] + tol).collect();
    // A receiver whose intake is within `tol` may pass it on through sub-threshold edges.
    let receivers_also_send = (0..n).filter(|&i| i != k && inn[i] > tol).all(|i| g.has_outgoing(i));
    let order_ends = topological_order(g).map(|o| o.last() == Some(&k) || g.edges.is_empty()).unwrap_or(false);
    Ok(SingleBoxReport {
        enlarged: k,
        eps,
        tolerance: tol,
        acyclic,
        max_out_degree: max_out,
        out_degree_ok: max_out <= eps + tol,
        l1_change: l1,
        l1_ok: l1 <= 2.0 * eps + tol,
        symmetric_difference: sym,
        symmetric_difference_ok: sym <= 2.0 * n as f64 * eps + n as f64 * tol,
        degree_identity_error: deg_err,
        degree_identity_ok: deg_err <= tol,
        receivers_at_capacity: below.is_empty(),
        receivers_below_capacity: below,
        others_do_not_gain: gainers.is_empty(),
        gainers,
        enlarged_has_no_outgoing: !g.has_outgoing(k),
        receivers_also_send,
        order_ends_at_enlarged: order_ends,
    })
}
