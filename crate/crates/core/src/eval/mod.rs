//! Planted-scene generation, segmentation metrics, and runtime benchmarking.

pub mod bench;
pub mod metrics;
pub mod scene;

pub use bench::{run_benchmark, BenchConfig, BenchRow};
pub use metrics::{compute_metrics, format_method_table, summarize, ClassMetrics, MeanStd, MethodSummary, MetricsReport};
pub use scene::{generate, generate_scene, PlantedObject, PlantedScene, SceneConfig};
