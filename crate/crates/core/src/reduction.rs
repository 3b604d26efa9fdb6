//! Equality-constraint elimination for label-consistency sets.
//!
//! A constraint set `C` asks every node in `C` to share one label. Written as
//! linear equalities over the stacked indicator vector `A` (variable
//! `i * K + p` holds `mu_i(p)`), each consecutive pair `(a, b)` of a set gives
//! one row per label: `mu_a(p) - mu_b(p) = 0`. The null space of that system
//! is spanned by "supernode" columns that copy one label distribution onto all
//! members of a set, so it is built structurally as a node to supernode map
//! rather than through a numerical factorization.

use std::collections::HashMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::crf::{check_dim, CrfGraph, Labeling, Marginals, Potentials};
use crate::error::{Error, Result};

/// Disjoint groups of nodes that must take a common label. Each set is sorted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSets {
    sets: Vec<Vec<usize>>,
}

impl ConstraintSets {
    pub fn new(sets: Vec<Vec<usize>>, num_nodes: usize) -> Result<Self> {
        let mut owner = HashMap::new();
        let mut out = Vec::with_capacity(sets.len());
        for (k, mut set) in sets.into_iter().enumerate() {
            set.sort_unstable();
            set.dedup();
            if set.len() < 2 {
                return Err(Error::InvalidConstraints(format!(
                    "set {k} has fewer than 2 distinct nodes"
                )));
            }
            for &node in &set {
                if node >= num_nodes {
                    return Err(Error::InvalidConstraints(format!(
                        "set {k} references node {node} >= {num_nodes}"
                    )));
                }
                if let Some(prev) = owner.insert(node, k) {
                    return Err(Error::InvalidConstraints(format!(
                        "node {node} appears in sets {prev} and {k}"
                    )));
                }
            }
            out.push(set);
        }
        Ok(Self { sets: out })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    /// Number of nodes belonging to some set.
    pub fn covered_nodes(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    /// Sets whose nodes do not all share one label in `labeling`.
    pub fn violations(&self, labeling: &Labeling) -> usize {
        let x = labeling.as_slice();
        self.sets
            .iter()
            .filter(|set| set.iter().any(|&i| x[i] != x[set[0]]))
            .count()
    }

    fn check_against(&self, num_nodes: usize) -> Result<()> {
        match self.sets.iter().flatten().find(|&&i| i >= num_nodes) {
            Some(&i) => Err(Error::InvalidConstraints(format!(
                "node {i} out of range for {num_nodes} nodes"
            ))),
            None => Ok(()),
        }
    }
}

/// Sparse `E` in `E A = 0`. Every row has exactly two entries, `+1` and `-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMatrix {
    num_cols: usize,
    rows: Vec<[(usize, f64); 2]>,
}

impl ConstraintMatrix {
    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn num_cols(&self) -> usize {
        self.num_cols
    }

    pub fn rows(&self) -> &[[(usize, f64); 2]] {
        &self.rows
    }

    /// Right-hand side `d`; always zero for difference constraints.
    pub fn rhs(&self) -> Vec<f64> {
        vec![0.0; self.rows.len()]
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.rows.len(), self.num_cols));
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                m[[r, c]] = v;
            }
        }
        m
    }

    /// `E * Z` for the structural null-space operator, accumulated sparsely.
    pub fn times_null_space(&self, z: &ExpansionMap) -> Array2<f64> {
        let k = z.num_labels;
        let mut out = Array2::zeros((self.rows.len(), z.reduced_dim()));
        for (r, row) in self.rows.iter().enumerate() {
            for &(c, v) in row {
                let (node, label) = (c / k, c % k);
                out[[r, z.node_to_super[node] * k + label]] += v;
            }
        }
        out
    }
}

pub fn build_constraint_matrix(graph: &CrfGraph, sets: &ConstraintSets) -> Result<ConstraintMatrix> {
    sets.check_against(graph.num_nodes())?;
    let k = graph.num_labels();
    let mut rows = Vec::new();
    for set in sets.sets() {
        for pair in set.windows(2) {
            for p in 0..k {
                rows.push([(pair[0] * k + p, 1.0), (pair[1] * k + p, -1.0)]);
            }
        }
    }
    Ok(ConstraintMatrix {
        num_cols: graph.num_nodes() * k,
        rows,
    })
}

/// The surjection node -> supernode. As a linear map it is `Z`, the
/// `(N*K) x (M*K)` 0/1 matrix with `Z[(i,p), (I,p)] = 1` iff node `i` maps to `I`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionMap {
    node_to_super: Vec<usize>,
    num_super: usize,
    num_labels: usize,
}

impl ExpansionMap {
    pub fn identity(num_nodes: usize, num_labels: usize) -> Self {
        Self {
            node_to_super: (0..num_nodes).collect(),
            num_super: num_nodes,
            num_labels,
        }
    }

    pub fn node_to_super(&self) -> &[usize] {
        &self.node_to_super
    }

    pub fn supernode_of(&self, node: usize) -> usize {
        self.node_to_super[node]
    }

    pub fn num_supernodes(&self) -> usize {
        self.num_super
    }

    pub fn num_nodes(&self) -> usize {
        self.node_to_super.len()
    }

    /// Column count of `Z`, i.e. `M * K`.
    pub fn reduced_dim(&self) -> usize {
        self.num_super * self.num_labels
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let k = self.num_labels;
        let mut z = Array2::zeros((self.num_nodes() * k, self.reduced_dim()));
        for (i, &s) in self.node_to_super.iter().enumerate() {
            for p in 0..k {
                z[[i * k + p, s * k + p]] = 1.0;
            }
        }
        z
    }

    pub fn expand_labeling(&self, reduced: &Labeling) -> Result<Labeling> {
        check_dim("reduced labeling length", self.num_super, reduced.len())?;
        let x = reduced.as_slice();
        Ok(Labeling::from_vec_unchecked(
            self.node_to_super.iter().map(|&s| x[s]).collect(),
        ))
    }
}

pub fn build_null_space_operator(graph: &CrfGraph, sets: &ConstraintSets) -> Result<ExpansionMap> {
    sets.check_against(graph.num_nodes())?;
    let n = graph.num_nodes();
    let mut set_of = vec![usize::MAX; n];
    for (k, set) in sets.sets().iter().enumerate() {
        for &i in set {
            set_of[i] = k;
        }
    }
    let mut set_super = vec![usize::MAX; sets.len()];
    let mut node_to_super = Vec::with_capacity(n);
    let mut next = 0;
    for &k in &set_of {
        let s = if k == usize::MAX {
            next += 1;
            next - 1
        } else {
            if set_super[k] == usize::MAX {
                set_super[k] = next;
                next += 1;
            }
            set_super[k]
        };
        node_to_super.push(s);
    }
    Ok(ExpansionMap {
        node_to_super,
        num_super: next,
        num_labels: graph.num_labels(),
    })
}

/// The constrained problem rewritten over supernodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedProblem {
    pub graph: CrfGraph,
    pub potentials: Potentials,
    pub expansion: ExpansionMap,
}

/// Builds supernode potentials: `rho = Z^T b` plus the folded diagonal of
/// edges internal to a supernode, and `tau = Z^T Q Z` summed over parallel edges.
///
/// An internal edge contributes `psi(p,p)` once per direction, matching the
/// integral objective of the expanded labeling exactly.
pub fn reduce_problem(
    graph: &CrfGraph,
    potentials: &Potentials,
    sets: &ConstraintSets,
) -> Result<ReducedProblem> {
    potentials.validate(graph)?;
    let expansion = build_null_space_operator(graph, sets)?;
    let k = graph.num_labels();
    let m = expansion.num_supernodes();

    let mut unary = Array2::zeros((m, k));
    for (i, row) in potentials.unary.rows().into_iter().enumerate() {
        let mut target = unary.row_mut(expansion.supernode_of(i));
        target += &row;
    }

    let mut edge_index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut edges = Vec::new();
    let mut pairwise: Vec<Array2<f64>> = Vec::new();
    for (e, &(i, j)) in graph.edges().iter().enumerate() {
        let psi = &potentials.pairwise[e];
        let (a, b) = (expansion.supernode_of(i), expansion.supernode_of(j));
        if a == b {
            for p in 0..k {
                unary[[a, p]] += 2.0 * psi[[p, p]];
            }
            continue;
        }
        let key = (a.min(b), a.max(b));
        let idx = *edge_index.entry(key).or_insert_with(|| {
            edges.push(key);
            pairwise.push(Array2::zeros((k, k)));
            edges.len() - 1
        });
        if a < b {
            pairwise[idx] += psi;
        } else {
            pairwise[idx] += &psi.t();
        }
    }

    let reduced_graph = CrfGraph::new(m, k, edges)?;
    Ok(ReducedProblem {
        potentials: Potentials {
            unary,
            pairwise,
        },
        graph: reduced_graph,
        expansion,
    })
}

/// `A = Z R`: copies each supernode row onto its member nodes.
pub fn expand_solution(reduced: &ReducedProblem, marginals: &Marginals) -> Result<Marginals> {
    let map = &reduced.expansion;
    check_dim("reduced marginal rows", map.num_supernodes(), marginals.num_nodes())?;
    check_dim("reduced marginal columns", map.num_labels, marginals.num_labels())?;
    let src = marginals.values();
    let out = Array2::from_shape_fn((map.num_nodes(), map.num_labels), |(i, p)| {
        src[[map.supernode_of(i), p]]
    });
    Ok(Marginals::from_array_unchecked(out))
}
