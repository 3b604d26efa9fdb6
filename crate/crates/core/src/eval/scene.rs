//! Synthetic planted scenes: a grid of superpixel stand-ins with rectangular
//! objects, noisy classifier-style unaries, appearance features, and a point
//! cloud in which every object is one elevated blob above a ground plane.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{build_constraint_sets, CloudParams, NodeProjection, Point3, PointCloud};
use crate::crf::{CrfGraph, Labeling, Potentials};
use crate::error::{Error, Result};
use crate::potentials::{build_model, NodeFeatures, PotentialParams};
use crate::reduction::ConstraintSets;

/// Smallest rectangle side, in grid cells.
const MIN_SIDE: usize = 2;
const HISTOGRAM_BINS: usize = 8;
const BLOB_SPACING: f64 = 0.2;
const BLOB_DEPTH_STEP: f64 = 8.0;
pub const DEFAULT_UNARY_WEIGHT: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, col: usize, row: usize) -> bool {
        col >= self.x && col < self.x + self.width && row >= self.y && row < self.y + self.height
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedObject {
    pub rect: Rect,
    pub label: usize,
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    /// Number of grid cells that are actual nodes (row-major, last row may be
    /// partial). Defaults to `width * height`.
    pub num_nodes: Option<usize>,
    pub num_objects: usize,
    pub num_labels: usize,
    pub noise: f64,
    /// Scale applied to the normalized unary rows. The pairwise form always
    /// favours agreement, so unit-sum unaries are swamped by an
    /// 8-neighbourhood and the optimum degenerates to a constant labeling.
    pub unary_weight: f64,
    /// When set, objects are added until at least this fraction of nodes is
    /// covered and `num_objects` only controls the granularity of the layout.
    pub coverage: Option<f64>,
    /// Per-channel standard deviation of node colour around its region colour.
    pub color_jitter: f64,
    pub potential_params: Option<PotentialParams>,
    pub cloud_params: CloudParams,
}

impl SceneConfig {
    pub fn new(width: usize, height: usize, num_objects: usize, num_labels: usize, noise: f64) -> Self {
        Self {
            width,
            height,
            num_nodes: None,
            num_objects,
            num_labels,
            noise,
            unary_weight: DEFAULT_UNARY_WEIGHT,
            coverage: None,
            color_jitter: 0.05,
            potential_params: None,
            cloud_params: CloudParams::default(),
        }
    }

    /// Near-square grid holding exactly `num_nodes` nodes.
    pub fn with_node_count(num_nodes: usize, num_objects: usize, num_labels: usize, noise: f64) -> Self {
        let width = ((num_nodes as f64).sqrt().round() as usize).max(1);
        let height = num_nodes.div_ceil(width);
        Self {
            num_nodes: Some(num_nodes),
            ..Self::new(width, height, num_objects, num_labels, noise)
        }
    }

    pub fn node_count(&self) -> usize {
        self.num_nodes.unwrap_or(self.width * self.height)
    }

    /// Edge threshold of 1.5 cells (8-neighbourhood) with colour and location
    /// distances normalized by their largest possible values.
    pub fn default_potential_params(&self) -> PotentialParams {
        let diag = ((self.width * self.width + self.height * self.height) as f64).sqrt().max(1.0);
        PotentialParams {
            theta: 1.5,
            theta_color: 1.0 / 3f64.sqrt(),
            theta_location: 1.0 / diag,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedScene {
    pub width: usize,
    pub height: usize,
    pub graph: CrfGraph,
    pub potentials: Potentials,
    pub true_labels: Labeling,
    pub features: Vec<NodeFeatures>,
    pub objects: Vec<PlantedObject>,
    pub cloud: PointCloud,
    pub projection: NodeProjection,
    pub noise_level: f64,
    pub potential_params: PotentialParams,
    pub cloud_params: CloudParams,
}

impl PlantedScene {
    /// Constraint sets recovered from the scene's cloud.
    pub fn constraint_sets(&self) -> Result<ConstraintSets> {
        build_constraint_sets(&self.cloud, &self.cloud_params, &self.projection)
    }

    /// Constraint sets read straight off the planted objects.
    pub fn planted_sets(&self) -> ConstraintSets {
        let sets = self
            .objects
            .iter()
            .filter(|o| o.nodes.len() >= 2)
            .map(|o| o.nodes.clone())
            .collect();
        ConstraintSets::new(sets, self.graph.num_nodes()).expect("objects are disjoint")
    }

    /// Per-node argmax of the unary scores.
    pub fn unary_argmax(&self) -> Labeling {
        let labels = self
            .potentials
            .unary
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
        Labeling::new(labels, self.graph.num_labels()).expect("argmax in range")
    }
}

/// Recursive axis-aligned splits of the grid until `leaves` rectangles exist.
fn partition(rng: &mut ChaCha8Rng, width: usize, height: usize, leaves: usize) -> Result<Vec<Rect>> {
    let mut rects = vec![Rect {
        x: 0,
        y: 0,
        width,
        height,
    }];
    while rects.len() < leaves {
        let splittable: Vec<usize> = (0..rects.len())
            .filter(|&i| rects[i].width.max(rects[i].height) >= 2 * MIN_SIDE)
            .collect();
        let Some(&pick) = splittable.iter().max_by_key(|&&i| (rects[i].area(), usize::MAX - i)) else {
            return Err(Error::Placement(format!(
                "a {width}x{height} grid cannot hold {leaves} regions with side >= {MIN_SIDE}"
            )));
        };
        let r = rects[pick];
        let vertical = if r.width >= 2 * MIN_SIDE && r.height >= 2 * MIN_SIDE {
            r.width >= r.height
        } else {
            r.width >= 2 * MIN_SIDE
        };
        let (a, b) = if vertical {
            let cut = rng.gen_range(MIN_SIDE..=r.width - MIN_SIDE);
            (
                Rect { width: cut, ..r },
                Rect {
                    x: r.x + cut,
                    width: r.width - cut,
                    ..r
                },
            )
        } else {
            let cut = rng.gen_range(MIN_SIDE..=r.height - MIN_SIDE);
            (
                Rect { height: cut, ..r },
                Rect {
                    y: r.y + cut,
                    height: r.height - cut,
                    ..r
                },
            )
        };
        rects[pick] = a;
        rects.push(b);
    }
    Ok(rects)
}

fn region_histogram(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..HISTOGRAM_BINS).map(|_| rng.gen_range(0.0..1.0f64).powi(2) * 100.0 + 1.0).collect()
}

/// Convenience wrapper for the common grid case.
pub fn generate_scene(
    width: usize,
    height: usize,
    num_objects: usize,
    num_labels: usize,
    noise: f64,
    seed: u64,
) -> Result<PlantedScene> {
    generate(&SceneConfig::new(width, height, num_objects, num_labels, noise), seed)
}

pub fn generate(config: &SceneConfig, seed: u64) -> Result<PlantedScene> {
    let (w, h, k) = (config.width, config.height, config.num_labels);
    let n = config.node_count();
    if k < 2 {
        return Err(Error::InvalidParameter("need at least 2 labels".into()));
    }
    if !(0.0..=1.0).contains(&config.noise) {
        return Err(Error::InvalidParameter(format!("noise {} not in [0, 1]", config.noise)));
    }
    if n == 0 || n > w * h || n + w <= w * h {
        return Err(Error::InvalidParameter(format!(
            "{n} nodes do not fit a {w}x{h} grid with only the last row partial"
        )));
    }
    if !(config.unary_weight > 0.0 && config.unary_weight.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "unary weight {} must be positive",
            config.unary_weight
        )));
    }
    if let Some(c) = config.coverage {
        if !(0.0..=1.0).contains(&c) {
            return Err(Error::InvalidParameter(format!("coverage {c} not in [0, 1]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Layout.
    let leaves = (2 * config.num_objects).max(2);
    let mut regions = partition(&mut rng, w, h, leaves)?;
    regions.shuffle(&mut rng);
    let node_at = |col: usize, row: usize| {
        let id = row * w + col;
        (id < n).then_some(id)
    };
    let nodes_in = |r: &Rect| -> Vec<usize> {
        (r.y..r.y + r.height)
            .flat_map(|row| (r.x..r.x + r.width).filter_map(move |col| node_at(col, row)))
            .collect()
    };
    let mut object_rects = Vec::new();
    match config.coverage {
        None => {
            if config.num_objects > regions.len() {
                return Err(Error::Placement("not enough regions".into()));
            }
            object_rects.extend_from_slice(&regions[..config.num_objects]);
        }
        Some(c) => {
            let target = (c * n as f64).ceil() as usize;
            let mut covered = 0;
            for r in &regions {
                if covered >= target {
                    break;
                }
                let count = nodes_in(r).len();
                if count >= 2 {
                    covered += count;
                    object_rects.push(*r);
                }
            }
        }
    }

    let mut truth = vec![0usize; n];
    let mut objects = Vec::with_capacity(object_rects.len());
    for rect in object_rects {
        let label = rng.gen_range(1..k);
        let nodes = nodes_in(&rect);
        for &i in &nodes {
            truth[i] = label;
        }
        objects.push(PlantedObject { rect, label, nodes });
    }

    // Appearance: every region (objects, then the background) has its own
    // colour and histogram; nodes jitter around them.
    let mut region_of = vec![objects.len(); n];
    for (o, obj) in objects.iter().enumerate() {
        for &i in &obj.nodes {
            region_of[i] = o;
        }
    }
    let looks: Vec<([f64; 3], Vec<f64>)> = (0..=objects.len())
        .map(|_| ([rng.gen(), rng.gen(), rng.gen()], region_histogram(&mut rng)))
        .collect();
    let jitter = Normal::new(0.0, config.color_jitter)
        .map_err(|_| Error::InvalidParameter(format!("colour jitter {}", config.color_jitter)))?;
    let features: Vec<NodeFeatures> = (0..n)
        .map(|i| {
            let (color, hist) = &looks[region_of[i]];
            let mut mean_color = *color;
            for c in &mut mean_color {
                *c = (*c + jitter.sample(&mut rng)).clamp(0.0, 1.0);
            }
            let color_histogram = hist.iter().map(|&b| b * rng.gen_range(0.7..1.3)).collect();
            NodeFeatures {
                centroid: [(i % w) as f64, (i / w) as f64],
                mean_color,
                color_histogram,
            }
        })
        .collect();

    // Classifier-style unaries: the true label's indicator mixed with
    // uninformative uniform noise, rows normalized.
    let mut unary = Array2::zeros((n, k));
    for (i, mut row) in unary.rows_mut().into_iter().enumerate() {
        for (p, v) in row.iter_mut().enumerate() {
            let hit = if p == truth[i] { 1.0 } else { 0.0 };
            *v = (1.0 - config.noise) * hit + config.noise * rng.gen::<f64>();
        }
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        } else {
            row.fill(1.0 / k as f64);
        }
        row *= config.unary_weight;
    }

    let params = config
        .potential_params
        .unwrap_or_else(|| config.default_potential_params());
    let (graph, potentials) = build_model(&features, unary, &params)?;

    // Cloud: one jittered lattice blob per object at its own depth, over a
    // noisy ground plane that holds the majority of points.
    let min_blob = config.cloud_params.min_cluster_size + 50;
    let mut points: Vec<Point3> = Vec::new();
    let mut mapping: Vec<Option<usize>> = Vec::new();
    for (o, obj) in objects.iter().enumerate() {
        let count = min_blob.max(2 * obj.nodes.len());
        let side = (count as f64).cbrt().ceil() as usize;
        let origin = [
            0.5 * (obj.rect.x as f64 + obj.rect.width as f64 / 2.0),
            10.0 + BLOB_DEPTH_STEP * o as f64,
            0.5,
        ];
        for t in 0..count {
            let (a, b, c) = (t % side, (t / side) % side, t / (side * side));
            points.push([
                origin[0] + BLOB_SPACING * a as f64 + rng.gen_range(-0.03..0.03),
                origin[1] + BLOB_SPACING * b as f64 + rng.gen_range(-0.03..0.03),
                origin[2] + BLOB_SPACING * c as f64 + rng.gen_range(-0.03..0.03),
            ]);
            mapping.push(Some(obj.nodes[t % obj.nodes.len()]));
        }
    }
    let ground = points.len() + n;
    let depth = 10.0 + BLOB_DEPTH_STEP * (objects.len() as f64 + 1.0);
    for _ in 0..ground {
        points.push([
            rng.gen_range(-5.0..0.5 * w as f64 + 5.0),
            rng.gen_range(0.0..depth),
            rng.gen_range(-0.03..0.03),
        ]);
        mapping.push(Some(rng.gen_range(0..n)));
    }
    let cloud = PointCloud::new(points)?;
    let projection = NodeProjection::new(mapping, n)?;
    let cloud_params = CloudParams {
        rng_seed: seed,
        ..config.cloud_params
    };

    Ok(PlantedScene {
        width: w,
        height: h,
        graph,
        potentials,
        true_labels: Labeling::new(truth, k)?,
        features,
        objects,
        cloud,
        projection,
        noise_level: config.noise,
        potential_params: params,
        cloud_params,
    })
}
