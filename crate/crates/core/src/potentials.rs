//! Graph and potential construction from superpixel-style node descriptors.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::crf::{CrfGraph, Potentials};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFeatures {
    /// Centre of mass in image-plane units.
    pub centroid: [f64; 2],
    pub mean_color: [f64; 3],
    pub color_histogram: Vec<f64>,
}

impl NodeFeatures {
    pub fn validate(&self) -> Result<()> {
        if self.color_histogram.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "histogram entries must be finite and nonnegative".into(),
            ));
        }
        if self.color_histogram.iter().sum::<f64>() <= 0.0 {
            return Err(Error::ZeroHistogram);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialParams {
    /// Edge threshold on centroid distance.
    pub theta: f64,
    /// Scales mean-colour distance into `[0, 1]`.
    pub theta_color: f64,
    /// Scales centroid distance into `[0, 1]`.
    pub theta_location: f64,
}

impl PotentialParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta_color > 0.0 && self.theta_location > 0.0) {
            return Err(Error::InvalidParameter(
                "theta, theta_color and theta_location must be positive".into(),
            ));
        }
        Ok(())
    }
}

fn dist<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Connects every pair of nodes whose centroids are strictly closer than `theta`.
/// Edges come out as `(i, j)` with `i < j`, sorted.
pub fn build_edges(features: &[NodeFeatures], theta: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for (i, a) in features.iter().enumerate() {
        for (j, b) in features.iter().enumerate().skip(i + 1) {
            if dist(&a.centroid, &b.centroid) < theta {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// `sqrt(1 - sum_i sqrt(a_i b_i) / sqrt(sum a * sum b * N^2))`, radicand clamped to `[0, 1]`.
///
/// The normalization includes the bin count `N`, so identical histograms do
/// not score 0 unless `N = 1`.
pub fn bhattacharyya_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            what: "histogram bins",
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if !(sa > 0.0 && sb > 0.0) {
        return Err(Error::ZeroHistogram);
    }
    let n = a.len() as f64;
    let overlap: f64 = a.iter().zip(b).map(|(x, y)| (x * y).sqrt()).sum();
    let radicand = 1.0 - overlap / (sa * sb * n * n).sqrt();
    Ok(radicand.clamp(0.0, 1.0).sqrt())
}

/// Mean of the histogram distance and the normalized colour and location
/// distances; the latter two are clamped at 1.
pub fn dissimilarity(a: &NodeFeatures, b: &NodeFeatures, params: &PotentialParams) -> Result<f64> {
    let hist = bhattacharyya_distance(&a.color_histogram, &b.color_histogram)?;
    let color = (params.theta_color * dist(&a.mean_color, &b.mean_color)).min(1.0);
    let location = (params.theta_location * dist(&a.centroid, &b.centroid)).min(1.0);
    Ok(((hist + color + location) / 3.0).clamp(0.0, 1.0))
}

/// `1 - dis^2` on the diagonal, `dis^2` elsewhere.
pub fn pairwise_potential(dis: f64, num_labels: usize) -> Array2<f64> {
    let d2 = dis * dis;
    Array2::from_shape_fn((num_labels, num_labels), |(p, q)| if p == q { 1.0 - d2 } else { d2 })
}

/// Accepts externally computed unary scores (e.g. classifier posteriors) as-is.
pub fn ingest_unary(scores: Array2<f64>) -> Result<Array2<f64>> {
    if !scores.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("unary scores"));
    }
    Ok(scores)
}

/// Full model from features and unary scores: threshold graph plus
/// dissimilarity-derived pairwise matrices.
pub fn build_model(
    features: &[NodeFeatures],
    unary: Array2<f64>,
    params: &PotentialParams,
) -> Result<(CrfGraph, Potentials)> {
    params.validate()?;
    for f in features {
        f.validate()?;
    }
    let unary = ingest_unary(unary)?;
    let k = unary.ncols();
    let edges = build_edges(features, params.theta);
    let pairwise = edges
        .iter()
        .map(|&(i, j)| Ok(pairwise_potential(dissimilarity(&features[i], &features[j], params)?, k)))
        .collect::<Result<Vec<_>>>()?;
    let graph = CrfGraph::new(features.len(), k, edges)?;
    let potentials = Potentials::new(&graph, unary, pairwise)?;
    Ok((graph, potentials))
}
