//! Runtime benchmark over scene sizes and constraint coverage.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::reduction::reduce_problem;
use crate::solver::{solve, solve_constrained, SolverConfig};

use super::scene::{generate, SceneConfig};

pub const CSV_HEADER: &str = "nodes,labels,constraint_fraction,reduced_vars,iterations,wall_ms,objective,solver";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub nodes: usize,
    pub labels: usize,
    pub constraint_fraction: f64,
    pub reduced_vars: usize,
    pub iterations: usize,
    pub wall_ms: f64,
    pub objective: f64,
    pub solver: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub fractions: Vec<f64>,
    pub seed: u64,
    pub num_labels: usize,
    pub noise: f64,
    /// Roughly one object per this many nodes.
    pub nodes_per_object: usize,
    pub solver: SolverConfig,
}

impl BenchConfig {
    pub fn new(sizes: Vec<usize>, fractions: Vec<f64>, seed: u64) -> Self {
        Self {
            sizes,
            fractions,
            seed,
            num_labels: 7,
            noise: 0.6,
            nodes_per_object: 80,
            solver: SolverConfig::default(),
        }
    }

    /// Scene for one benchmark cell. The layout depends only on `seed` and
    /// `size`, so larger fractions cover a superset of objects.
    pub fn scene_config(&self, size: usize, fraction: f64) -> SceneConfig {
        let objects = (size / self.nodes_per_object.max(1)).max(3);
        let mut cfg = SceneConfig::with_node_count(size, objects, self.num_labels, self.noise);
        cfg.coverage = Some(fraction);
        cfg
    }

    pub fn scene_seed(&self, size: usize) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(size as u64)
    }
}

/// For each `(size, fraction)`: one unconstrained (`qp`) and one constrained
/// (`cqp`) row. Constraints come from the scene's point cloud.
pub fn run_benchmark(config: &BenchConfig) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &size in &config.sizes {
        for &fraction in &config.fractions {
            let scene = generate(&config.scene_config(size, fraction), config.scene_seed(size))?;
            let sets = scene.constraint_sets()?;
            let k = scene.graph.num_labels();

            let (_, report) = solve(&scene.graph, &scene.potentials, &config.solver)?;
            rows.push(BenchRow {
                nodes: size,
                labels: k,
                constraint_fraction: fraction,
                reduced_vars: size * k,
                iterations: report.iterations,
                wall_ms: report.wall_time.as_secs_f64() * 1e3,
                objective: report.final_objective,
                solver: "qp".into(),
            });

            let reduced_vars = reduce_problem(&scene.graph, &scene.potentials, &sets)?
                .expansion
                .reduced_dim();
            let (_, _, report) =
                solve_constrained(&scene.graph, &scene.potentials, &sets, &config.solver)?;
            rows.push(BenchRow {
                nodes: size,
                labels: k,
                constraint_fraction: fraction,
                reduced_vars,
                iterations: report.iterations,
                wall_ms: report.wall_time.as_secs_f64() * 1e3,
                objective: report.final_objective,
                solver: "cqp".into(),
            });
        }
    }
    Ok(rows)
}

pub fn write_csv<W: Write>(rows: &[BenchRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| crate::Error::Csv(e.to_string()))?;
    Ok(())
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<BenchRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let rows = r.deserialize().collect::<std::result::Result<Vec<BenchRow>, _>>()?;
    Ok(rows)
}

/// `(nodes, fraction, qp_ms / cqp_ms)` for every cell with both rows.
pub fn speedups(rows: &[BenchRow]) -> Vec<(usize, f64, f64)> {
    rows.iter()
        .filter(|r| r.solver == "qp")
        .filter_map(|qp| {
            rows.iter()
                .find(|c| {
                    c.solver == "cqp"
                        && c.nodes == qp.nodes
                        && c.constraint_fraction == qp.constraint_fraction
                })
                .map(|c| (qp.nodes, qp.constraint_fraction, qp.wall_ms / c.wall_ms.max(1e-9)))
        })
        .collect()
}
