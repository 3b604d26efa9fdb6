//! Pairwise CRF model: graph, potentials, labelings, relaxed marginals, and
//! the quadratic score every solver in this crate maximizes.
//!
//! The score of a relaxed assignment `mu` is
//!
//! ```text
//! B(mu) = sum_i sum_p phi_i(p) mu_i(p)
//!       + sum_{(i,j) in edges} sum_{p,q} psi_ij(p,q) [mu_i(p) mu_j(q) + mu_j(p) mu_i(q)]
//! ```
//!
//! Each stored undirected edge therefore contributes once per direction,
//! which is the ordered-pair neighbourhood sum of the log-likelihood.

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row sums of a valid [`Marginals`] must be within this distance of 1.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct CrfGraph {
    num_nodes: usize,
    num_labels: usize,
    edges: Vec<(usize, usize)>,
    /// `adjacency[i]` lists `(neighbour, edge index)`.
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl CrfGraph {
    pub fn new(num_nodes: usize, num_labels: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::InvalidGraph("graph must have at least one node".into()));
        }
        if num_labels < 2 {
            return Err(Error::InvalidGraph(format!(
                "need at least 2 labels, got {num_labels}"
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        let mut adjacency = vec![Vec::new(); num_nodes];
        for (e, &(i, j)) in edges.iter().enumerate() {
            if i >= num_nodes || j >= num_nodes {
                return Err(Error::InvalidGraph(format!(
                    "edge {e} = ({i}, {j}) references a node >= {num_nodes}"
                )));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("edge {e} is a self-loop on {i}")));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::InvalidGraph(format!("duplicate edge ({i}, {j})")));
            }
            adjacency[i].push((j, e));
            adjacency[j].push((i, e));
        }
        Ok(Self {
            num_nodes,
            num_labels,
            edges,
            adjacency,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, node: usize) -> &[(usize, usize)] {
        &self.adjacency[node]
    }

    /// True when the edge set contains no cycle (a forest).
    pub fn is_forest(&self) -> bool {
        let mut parent: Vec<usize> = (0..self.num_nodes).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(i, j) in &self.edges {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a == b {
                return false;
            }
            parent[a] = b;
        }
        true
    }
}

/// Unary scores `phi_i(p)` and per-edge pairwise scores `psi_ij(p, q)`.
///
/// `pairwise[e]` is indexed `[label of edges[e].0, label of edges[e].1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Potentials {
    pub unary: Array2<f64>,
    pub pairwise: Vec<Array2<f64>>,
}

impl Potentials {
    pub fn new(graph: &CrfGraph, unary: Array2<f64>, pairwise: Vec<Array2<f64>>) -> Result<Self> {
        let p = Self { unary, pairwise };
        p.validate(graph)?;
        Ok(p)
    }

    /// All-zero potentials shaped for `graph`.
    pub fn zeros(graph: &CrfGraph) -> Self {
        let k = graph.num_labels();
        Self {
            unary: Array2::zeros((graph.num_nodes(), k)),
            pairwise: vec![Array2::zeros((k, k)); graph.num_edges()],
        }
    }

    pub fn validate(&self, graph: &CrfGraph) -> Result<()> {
        let (n, k) = (graph.num_nodes(), graph.num_labels());
        check_dim("unary rows", n, self.unary.nrows())?;
        check_dim("unary columns", k, self.unary.ncols())?;
        check_dim("pairwise matrices", graph.num_edges(), self.pairwise.len())?;
        for m in &self.pairwise {
            check_dim("pairwise rows", k, m.nrows())?;
            check_dim("pairwise columns", k, m.ncols())?;
        }
        if !self.unary.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("unary potentials"));
        }
        if !self.pairwise.iter().flat_map(|m| m.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite("pairwise potentials"));
        }
        Ok(())
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            what,
            expected,
            actual,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Labeling(Vec<usize>);

impl Labeling {
    pub fn new(labels: Vec<usize>, num_labels: usize) -> Result<Self> {
        if let Some((node, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_labels) {
            return Err(Error::LabelOutOfRange {
                node,
                label,
                num_labels,
            });
        }
        Ok(Self(labels))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<usize> {
        self.0
    }

    pub(crate) fn from_vec_unchecked(labels: Vec<usize>) -> Self {
        Self(labels)
    }
}

/// Relaxed indicator variables: one probability simplex over labels per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginals(Array2<f64>);

impl Marginals {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        for (i, row) in values.rows().into_iter().enumerate() {
            if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidMarginals(format!(
                    "row {i} has entry {v} outside [0, 1]"
                )));
            }
            let s = row.sum();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidMarginals(format!("row {i} sums to {s}")));
            }
        }
        Ok(Self(values))
    }

    pub fn uniform(num_nodes: usize, num_labels: usize) -> Self {
        Self(Array2::from_elem((num_nodes, num_labels), 1.0 / num_labels as f64))
    }

    pub fn one_hot(labeling: &Labeling, num_labels: usize) -> Result<Self> {
        let mut m = Array2::zeros((labeling.len(), num_labels));
        for (i, &l) in labeling.as_slice().iter().enumerate() {
            if l >= num_labels {
                return Err(Error::LabelOutOfRange {
                    node: i,
                    label: l,
                    num_labels,
                });
            }
            m[[i, l]] = 1.0;
        }
        Ok(Self(m))
    }

    pub(crate) fn from_array_unchecked(values: Array2<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.0
    }

    pub fn num_nodes(&self) -> usize {
        self.0.nrows()
    }

    pub fn num_labels(&self) -> usize {
        self.0.ncols()
    }

    pub fn row(&self, node: usize) -> ArrayView1<'_, f64> {
        self.0.row(node)
    }

    /// Largest deviation of any row from the simplex (sum error or box violation).
    pub fn simplex_violation(&self) -> f64 {
        self.0
            .rows()
            .into_iter()
            .map(|row| {
                let box_err = row
                    .iter()
                    .map(|&v| (-v).max(v - 1.0).max(0.0))
                    .fold(0.0, f64::max);
                (row.sum() - 1.0).abs().max(box_err)
            })
            .fold(0.0, f64::max)
    }
}

/// Relaxed objective `B(mu)`.
pub fn objective(graph: &CrfGraph, potentials: &Potentials, marginals: &Marginals) -> Result<f64> {
    potentials.validate(graph)?;
    check_dim("marginal rows", graph.num_nodes(), marginals.num_nodes())?;
    check_dim("marginal columns", graph.num_labels(), marginals.num_labels())?;
    let mu = marginals.values();
    let mut total = (&potentials.unary * mu).sum();
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        let psi = &potentials.pairwise[e];
        let (mi, mj) = (mu.row(i), mu.row(j));
        total += mi.dot(&psi.dot(&mj)) + mj.dot(&psi.dot(&mi));
    }
    Ok(total)
}

/// Integral objective of a hard labeling; equals [`objective`] on its one-hot marginals.
pub fn objective_of_labeling(
    graph: &CrfGraph,
    potentials: &Potentials,
    labeling: &Labeling,
) -> Result<f64> {
    check_dim("labeling length", graph.num_nodes(), labeling.len())?;
    let k = graph.num_labels();
    let x = labeling.as_slice();
    if let Some((node, &label)) = x.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::LabelOutOfRange {
            node,
            label,
            num_labels: k,
        });
    }
    Ok(labeling_score(graph, potentials, x))
}

/// Unchecked integral score used in hot loops.
pub(crate) fn labeling_score(graph: &CrfGraph, potentials: &Potentials, x: &[usize]) -> f64 {
    let unary: f64 = x
        .iter()
        .enumerate()
        .map(|(i, &l)| potentials.unary[[i, l]])
        .sum();
    let pairwise: f64 = graph
        .edges()
        .iter()
        .zip(&potentials.pairwise)
        .map(|(&(i, j), psi)| psi[[x[i], x[j]]] + psi[[x[j], x[i]]])
        .sum();
    unary + pairwise
}

/// Per-node argmax, lowest label index on ties.
pub fn extract_labeling(marginals: &Marginals) -> Labeling {
    let labels = marginals
        .values()
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (p, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = p;
                }
            }
            best
        })
        .collect();
    Labeling(labels)
}
