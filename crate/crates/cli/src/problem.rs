//! Self-contained JSON problem files.

use gcrf::eval::PlantedScene;
use gcrf::potentials::{dissimilarity, pairwise_potential, NodeFeatures};
use gcrf::{ConstraintSets, CrfGraph, Potentials};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeEntry {
    pub i: usize,
    pub j: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<Vec<Vec<f64>>>,
    /// Dissimilarity in `[0, 1]`; the pairwise matrix is derived from it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dis: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub version: u32,
    pub num_labels: usize,
    pub num_nodes: usize,
    pub unary: Vec<Vec<f64>>,
    pub edges: Vec<EdgeEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub constraints: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<NodeFeatures>>,
}

/// Validated in-memory form of a problem file.
#[derive(Debug, Clone)]
pub struct Problem {
    pub graph: CrfGraph,
    pub potentials: Potentials,
    pub constraints: ConstraintSets,
}

fn schema(msg: String) -> CliError {
    CliError::Input(msg)
}

fn matrix(rows: &[Vec<f64>], nrows: usize, ncols: usize, field: &str) -> Result<Array2<f64>, CliError> {
    if rows.len() != nrows {
        return Err(schema(format!("{field}: expected {nrows} rows, got {}", rows.len())));
    }
    let mut out = Array2::zeros((nrows, ncols));
    for (r, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(schema(format!(
                "{field}[{r}]: expected {ncols} entries, got {}",
                row.len()
            )));
        }
        for (c, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(schema(format!("{field}[{r}][{c}]: not finite")));
            }
            out[[r, c]] = v;
        }
    }
    Ok(out)
}

fn rows_of(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| {
            schema(format!("line {} column {}: {e}", e.line(), e.column()))
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem files always serialize")
    }

    pub fn validate(&self) -> Result<Problem, CliError> {
        if self.version != VERSION {
            return Err(schema(format!(
                "version: unsupported value {} (expected {VERSION})",
                self.version
            )));
        }
        let (n, k) = (self.num_nodes, self.num_labels);
        if k == 0 {
            return Err(schema("num_labels: must be positive".into()));
        }
        let unary = matrix(&self.unary, n, k, "unary")?;

        let mut edges = Vec::with_capacity(self.edges.len());
        let mut pairwise = Vec::with_capacity(self.edges.len());
        for (e, edge) in self.edges.iter().enumerate() {
            if edge.i >= n || edge.j >= n {
                return Err(schema(format!(
                    "edges[{e}]: endpoint ({}, {}) out of range for {n} nodes",
                    edge.i, edge.j
                )));
            }
            let psi = match (&edge.psi, edge.dis) {
                (Some(psi), None) => matrix(psi, k, k, &format!("edges[{e}].psi"))?,
                (None, Some(d)) if (0.0..=1.0).contains(&d) => pairwise_potential(d, k),
                (None, Some(d)) => {
                    return Err(schema(format!("edges[{e}].dis: {d} not in [0, 1]")));
                }
                _ => {
                    return Err(schema(format!(
                        "edges[{e}]: exactly one of psi or dis is required"
                    )));
                }
            };
            edges.push((edge.i, edge.j));
            pairwise.push(psi);
        }
        let graph = CrfGraph::new(n, k, edges).map_err(|e| schema(format!("edges: {e}")))?;
        let potentials =
            Potentials::new(&graph, unary, pairwise).map_err(|e| schema(format!("potentials: {e}")))?;
        let constraints = ConstraintSets::new(self.constraints.clone(), n)
            .map_err(|e| schema(format!("constraints: {e}")))?;
        if let Some(features) = &self.features {
            if features.len() != n {
                return Err(schema(format!(
                    "features: expected {n} entries, got {}",
                    features.len()
                )));
            }
            for (i, f) in features.iter().enumerate() {
                f.validate().map_err(|e| schema(format!("features[{i}]: {e}")))?;
            }
        }
        Ok(Problem {
            graph,
            potentials,
            constraints,
        })
    }

    /// Problem file with explicit pairwise matrices.
    pub fn from_model(graph: &CrfGraph, potentials: &Potentials, constraints: &ConstraintSets) -> Self {
        let edges = graph
            .edges()
            .iter()
            .zip(&potentials.pairwise)
            .map(|(&(i, j), psi)| EdgeEntry {
                i,
                j,
                psi: Some(rows_of(psi)),
                dis: None,
            })
            .collect();
        Self {
            version: VERSION,
            num_labels: graph.num_labels(),
            num_nodes: graph.num_nodes(),
            unary: rows_of(&potentials.unary),
            edges,
            constraints: constraints.sets().to_vec(),
            features: None,
        }
    }

    /// Compact form of a planted scene: edges carry dissimilarities and the
    /// node features travel along.
    pub fn from_scene(scene: &PlantedScene, constraints: &ConstraintSets) -> Result<Self, CliError> {
        let edges = scene
            .graph
            .edges()
            .iter()
            .map(|&(i, j)| {
                let d = dissimilarity(&scene.features[i], &scene.features[j], &scene.potential_params)?;
                Ok(EdgeEntry {
                    i,
                    j,
                    psi: None,
                    dis: Some(d),
                })
            })
            .collect::<gcrf::Result<Vec<_>>>()
            .map_err(|e| CliError::Input(e.to_string()))?;
        Ok(Self {
            version: VERSION,
            num_labels: scene.graph.num_labels(),
            num_nodes: scene.graph.num_nodes(),
            unary: rows_of(&scene.potentials.unary),
            edges,
            constraints: constraints.sets().to_vec(),
            features: Some(scene.features.clone()),
        })
    }
}
