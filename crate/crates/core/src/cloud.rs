//! Label-consistency sets from a 3D point cloud: RANSAC ground removal,
//! fixed-radius Euclidean clustering, size filtering, and projection of the
//! surviving clusters onto graph nodes.

use std::collections::{BTreeSet, HashMap};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reduction::ConstraintSets;

pub type Point3 = [f64; 3];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("point coordinates"));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudParams {
    pub ransac_iterations: usize,
    /// Metres from the plane within which a point counts as ground.
    pub plane_inlier_threshold: f64,
    pub cluster_radius: f64,
    /// Clusters with fewer points are discarded.
    pub min_cluster_size: usize,
    /// Ground is removed only if the chosen plane holds at least this
    /// fraction of the cloud.
    pub min_ground_fraction: f64,
    pub rng_seed: u64,
}

impl Default for CloudParams {
    fn default() -> Self {
        Self {
            ransac_iterations: 500,
            plane_inlier_threshold: 0.15,
            cluster_radius: 0.5,
            min_cluster_size: 150,
            min_ground_fraction: 0.5,
            rng_seed: 0,
        }
    }
}

impl CloudParams {
    pub fn validate(&self) -> Result<()> {
        if self.ransac_iterations == 0
            || !(self.plane_inlier_threshold > 0.0)
            || !(self.cluster_radius > 0.0)
            || self.min_cluster_size == 0
            || !(0.0..=1.0).contains(&self.min_ground_fraction)
        {
            return Err(Error::InvalidParameter(format!("invalid cloud parameters {self:?}")));
        }
        Ok(())
    }
}

/// Point index -> graph node (`None` when the point falls outside the image).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeProjection {
    pub mapping: Vec<Option<usize>>,
    pub num_nodes: usize,
}

impl NodeProjection {
    pub fn new(mapping: Vec<Option<usize>>, num_nodes: usize) -> Result<Self> {
        if let Some(bad) = mapping.iter().flatten().find(|&&n| n >= num_nodes) {
            return Err(Error::InvalidParameter(format!(
                "projection targets node {bad} >= {num_nodes}"
            )));
        }
        Ok(Self { mapping, num_nodes })
    }
}

/// Plane `normal . x + offset = 0` with a unit normal oriented to `z >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl Plane {
    fn through(a: &Point3, b: &Point3, c: &Point3) -> Option<Self> {
        let u = sub(b, a);
        let v = sub(c, a);
        let mut n = cross(&u, &v);
        let len = norm(&n);
        let scale = norm(&u) * norm(&v);
        if !(len > 1e-12 * scale) || scale == 0.0 {
            return None;
        }
        let sign = if n[2] < 0.0 { -1.0 } else { 1.0 };
        n.iter_mut().for_each(|x| *x *= sign / len);
        Some(Self {
            normal: n,
            offset: -dot(&n, a),
        })
    }

    pub fn distance(&self, p: &Point3) -> f64 {
        (dot(&self.normal, p) + self.offset).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundRemoval {
    pub plane: Plane,
    pub inlier_count: usize,
    /// Whether inliers were actually dropped (see [`CloudParams::min_ground_fraction`]).
    pub removed: bool,
    pub non_ground: Vec<usize>,
}

fn sub(a: &Point3, b: &Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: &Point3, b: &Point3) -> Point3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: &Point3, b: &Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: &Point3) -> f64 {
    dot(a, a).sqrt()
}

fn dist2(a: &Point3, b: &Point3) -> f64 {
    let d = sub(a, b);
    dot(&d, &d)
}

/// Deterministic non-collinear triple, used when random sampling found none.
fn fallback_plane(points: &[Point3]) -> Option<Plane> {
    let a = &points[0];
    let b = points
        .iter()
        .max_by(|x, y| dist2(a, x).total_cmp(&dist2(a, y)))?;
    let ab = sub(b, a);
    let c = points
        .iter()
        .max_by(|x, y| norm(&cross(&ab, &sub(x, a))).total_cmp(&norm(&cross(&ab, &sub(y, a)))))?;
    Plane::through(a, b, c)
}

/// RANSAC for the dominant plane. Among planes whose inlier count is within
/// 1% of the best, the one with the most vertical (`+z`) normal wins.
pub fn remove_ground_plane(cloud: &PointCloud, params: &CloudParams) -> Result<GroundRemoval> {
    params.validate()?;
    let pts = cloud.points();
    if pts.len() < 3 {
        return Err(Error::NoPlane(format!("need at least 3 points, got {}", pts.len())));
    }
    let count = |plane: &Plane| {
        pts.iter()
            .filter(|p| plane.distance(p) <= params.plane_inlier_threshold)
            .count()
    };

    let mut candidates: Vec<(usize, Plane)> = Vec::new();
    for it in 0..params.ransac_iterations {
        // One stream per iteration keeps samples independent of evaluation order.
        let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
        rng.set_stream(it as u64);
        let a = rng.gen_range(0..pts.len());
        let mut b = rng.gen_range(0..pts.len() - 1);
        if b >= a {
            b += 1;
        }
        let c = rng.gen_range(0..pts.len());
        if c == a || c == b {
            continue;
        }
        if let Some(plane) = Plane::through(&pts[a], &pts[b], &pts[c]) {
            candidates.push((count(&plane), plane));
        }
    }
    if candidates.is_empty() {
        let plane = fallback_plane(pts)
            .ok_or_else(|| Error::NoPlane("all points are collinear".into()))?;
        candidates.push((count(&plane), plane));
    }

    let best = candidates.iter().map(|c| c.0).max().expect("non-empty");
    let cutoff = 0.99 * best as f64;
    let mut chosen = None::<(usize, Plane)>;
    for &(n, plane) in &candidates {
        if (n as f64) < cutoff {
            continue;
        }
        match chosen {
            Some((_, p)) if p.normal[2] >= plane.normal[2] => {}
            _ => chosen = Some((n, plane)),
        }
    }
    let (inlier_count, plane) = chosen.expect("best candidate passes its own cutoff");
    let removed = inlier_count as f64 >= params.min_ground_fraction * pts.len() as f64;
    let non_ground = if removed {
        (0..pts.len())
            .filter(|&i| plane.distance(&pts[i]) > params.plane_inlier_threshold)
            .collect()
    } else {
        (0..pts.len()).collect()
    };
    Ok(GroundRemoval {
        plane,
        inlier_count,
        removed,
        non_ground,
    })
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }

    /// Groups sorted internally and ordered by smallest member.
    fn groups(&mut self) -> Vec<Vec<usize>> {
        let mut by_root: HashMap<usize, usize> = HashMap::new();
        let mut out: Vec<Vec<usize>> = Vec::new();
        for i in 0..self.parent.len() {
            let r = self.find(i);
            let slot = *by_root.entry(r).or_insert_with(|| {
                out.push(Vec::new());
                out.len() - 1
            });
            out[slot].push(i);
        }
        out
    }
}

/// Single-link clusters: connected components of "within `radius`" (inclusive).
/// Uses a uniform hash grid with cell size `radius`.
pub fn euclidean_cluster(points: &[Point3], radius: f64) -> Vec<Vec<usize>> {
    let cell = |p: &Point3| -> (i64, i64, i64) {
        (
            (p[0] / radius).floor() as i64,
            (p[1] / radius).floor() as i64,
            (p[2] / radius).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(cell(p)).or_default().push(i);
    }
    let r2 = radius * radius;
    let mut sets = DisjointSet::new(points.len());
    for (i, p) in points.iter().enumerate() {
        let (cx, cy, cz) = cell(p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(bucket) = grid.get(&(cx + dx, cy + dy, cz + dz)) else {
                        continue;
                    };
                    for &j in bucket {
                        if j > i && dist2(p, &points[j]) <= r2 {
                            sets.union(i, j);
                        }
                    }
                }
            }
        }
    }
    sets.groups()
}

/// Ground removal, clustering, size filter, projection to nodes, and merging
/// of clusters that land on overlapping node sets.
pub fn build_constraint_sets(
    cloud: &PointCloud,
    params: &CloudParams,
    projection: &NodeProjection,
) -> Result<ConstraintSets> {
    params.validate()?;
    if projection.mapping.len() != cloud.len() {
        return Err(Error::DimensionMismatch {
            what: "projection entries",
            expected: cloud.len(),
            actual: projection.mapping.len(),
        });
    }
    let survivors = if cloud.len() < 3 {
        (0..cloud.len()).collect()
    } else {
        remove_ground_plane(cloud, params)?.non_ground
    };
    if survivors.is_empty() {
        return Ok(ConstraintSets::empty());
    }
    let coords: Vec<Point3> = survivors.iter().map(|&i| cloud.points()[i]).collect();
    let node_sets: Vec<BTreeSet<usize>> = euclidean_cluster(&coords, params.cluster_radius)
        .into_iter()
        .filter(|c| c.len() >= params.min_cluster_size)
        .map(|c| {
            c.iter()
                .filter_map(|&local| projection.mapping[survivors[local]])
                .collect::<BTreeSet<usize>>()
        })
        .filter(|s| s.len() >= 2)
        .collect();

    let mut merge = DisjointSet::new(node_sets.len());
    let mut owner: HashMap<usize, usize> = HashMap::new();
    for (k, set) in node_sets.iter().enumerate() {
        for &node in set {
            if let Some(&other) = owner.get(&node) {
                merge.union(k, other);
            } else {
                owner.insert(node, k);
            }
        }
    }
    let mut merged: Vec<Vec<usize>> = merge
        .groups()
        .into_iter()
        .map(|group| {
            group
                .iter()
                .flat_map(|&k| node_sets[k].iter().copied())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect()
        })
        .collect();
    merged.sort();
    ConstraintSets::new(merged, projection.num_nodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;

    /// Jittered lattice blob; neighbours sit at most ~0.3 apart.
    pub(crate) fn blob(rng: &mut ChaCha8Rng, center: Point3, count: usize) -> Vec<Point3> {
        let side = (count as f64).cbrt().ceil() as usize;
        (0..count)
            .map(|k| {
                let (x, y, z) = (k % side, (k / side) % side, k / (side * side));
                [
                    center[0] + 0.2 * x as f64 + rng.gen_range(-0.03..0.03),
                    center[1] + 0.2 * y as f64 + rng.gen_range(-0.03..0.03),
                    center[2] + 0.2 * z as f64 + rng.gen_range(-0.03..0.03),
                ]
            })
            .collect()
    }

    fn brute_force_clusters(points: &[Point3], radius: f64) -> Vec<Vec<usize>> {
        let mut sets = DisjointSet::new(points.len());
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                if dist2(&points[i], &points[j]) <= radius * radius {
                    sets.union(i, j);
                }
            }
        }
        sets.groups()
    }

    #[test]
    fn ground_plane_removal_keeps_elevated_points() {
        let mut pts: Vec<Point3> = (0..100)
            .map(|k| [(k % 10) as f64, (k / 10) as f64, 0.0])
            .collect();
        pts.extend((0..10).map(|k| [k as f64 * 0.7, 2.0, 5.0]));
        let cloud = PointCloud::new(pts).unwrap();
        let out = remove_ground_plane(&cloud, &CloudParams::default()).unwrap();
        assert!(out.removed);
        assert_eq!(out.non_ground, (100..110).collect::<Vec<_>>());
        assert!((out.plane.normal[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_dominant_plane_keeps_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<Point3> = (0..200)
            .map(|_| [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)])
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let out = remove_ground_plane(&cloud, &CloudParams::default()).unwrap();
        assert!(!out.removed);
        assert_eq!(out.non_ground.len(), 200);
        let tiny = CloudParams {
            plane_inlier_threshold: 1e-300,
            ..CloudParams::default()
        };
        assert_eq!(remove_ground_plane(&cloud, &tiny).unwrap().non_ground.len(), 200);
    }

    #[test]
    fn ransac_is_seed_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut pts: Vec<Point3> = (0..300)
            .map(|_| [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0), rng.gen_range(-0.05..0.05)])
            .collect();
        pts.extend((0..50).map(|_| [rng.gen_range(0.0..10.0), 5.0, rng.gen_range(1.0..3.0)]));
        let cloud = PointCloud::new(pts).unwrap();
        let params = CloudParams {
            rng_seed: 42,
            ..CloudParams::default()
        };
        let a = remove_ground_plane(&cloud, &params).unwrap();
        let b = remove_ground_plane(&cloud, &params).unwrap();
        assert_eq!(a, b);
        assert!(a.removed);
        assert!(a.non_ground.len() <= cloud.len());
    }

    #[test]
    fn collinear_points_have_no_plane() {
        let cloud = PointCloud::new((0..20).map(|k| [k as f64, 2.0 * k as f64, 0.0]).collect()).unwrap();
        assert!(matches!(
            remove_ground_plane(&cloud, &CloudParams::default()),
            Err(Error::NoPlane(_))
        ));
        let two = PointCloud::new(vec![[0.0; 3], [1.0; 3]]).unwrap();
        assert!(remove_ground_plane(&two, &CloudParams::default()).is_err());
    }

    #[test]
    fn separated_blobs_and_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut pts = blob(&mut rng, [0.0, 0.0, 0.0], 30);
        pts.extend(blob(&mut rng, [10.0, 0.0, 0.0], 30));
        assert_eq!(euclidean_cluster(&pts, 0.5).len(), 2);
        let chain: Vec<Point3> = (0..50).map(|k| [0.45 * k as f64, 0.0, 0.0]).collect();
        assert_eq!(euclidean_cluster(&chain, 0.5).len(), 1);
    }

    #[test]
    fn clustering_matches_brute_force_and_ignores_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let pts: Vec<Point3> = (0..500)
                .map(|_| [rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-1.0..1.0)])
                .collect();
            let fast = euclidean_cluster(&pts, 0.4);
            assert_eq!(fast, brute_force_clusters(&pts, 0.4));

            let mut perm: Vec<usize> = (0..pts.len()).collect();
            perm.shuffle(&mut rng);
            let shuffled: Vec<Point3> = perm.iter().map(|&i| pts[i]).collect();
            let mut back: Vec<Vec<usize>> = euclidean_cluster(&shuffled, 0.4)
                .into_iter()
                .map(|c| {
                    let mut c: Vec<usize> = c.into_iter().map(|i| perm[i]).collect();
                    c.sort_unstable();
                    c
                })
                .collect();
            back.sort();
            let mut expect = fast.clone();
            expect.sort();
            assert_eq!(back, expect);
        }
    }

    #[test]
    fn blob_projects_to_node_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = blob(&mut rng, [0.0, 0.0, 1.0], 200);
        let nodes = [4, 5, 9];
        let mapping = (0..pts.len()).map(|k| Some(nodes[k % 3])).collect();
        let cloud = PointCloud::new(pts).unwrap();
        let proj = NodeProjection::new(mapping, 12).unwrap();
        let sets = build_constraint_sets(&cloud, &CloudParams::default(), &proj).unwrap();
        assert_eq!(sets.sets(), &[vec![4, 5, 9]]);
    }

    #[test]
    fn empty_non_ground_cloud_gives_no_sets() {
        let pts: Vec<Point3> = (0..400).map(|k| [(k % 20) as f64, (k / 20) as f64, 0.0]).collect();
        let proj = NodeProjection::new(vec![Some(0); 400], 3).unwrap();
        let cloud = PointCloud::new(pts).unwrap();
        let sets = build_constraint_sets(&cloud, &CloudParams::default(), &proj).unwrap();
        assert!(sets.is_empty());
    }

    #[test]
    fn small_clusters_are_filtered() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut pts = blob(&mut rng, [0.0, 0.0, 1.0], 200);
        pts.extend(blob(&mut rng, [20.0, 0.0, 1.0], 100));
        let mapping = (0..300)
            .map(|k| Some(if k < 200 { k % 4 } else { 4 + k % 4 }))
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let proj = NodeProjection::new(mapping, 8).unwrap();
        let sets = build_constraint_sets(&cloud, &CloudParams::default(), &proj).unwrap();
        assert_eq!(sets.sets(), &[vec![0, 1, 2, 3]]);
    }

    #[test]
    fn overlapping_projections_merge() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut pts = blob(&mut rng, [0.0, 0.0, 1.0], 160);
        pts.extend(blob(&mut rng, [20.0, 0.0, 1.0], 160));
        let mapping = (0..320)
            .map(|k| Some(if k < 160 { k % 3 } else { 2 + k % 3 }))
            .collect();
        let cloud = PointCloud::new(pts).unwrap();
        let proj = NodeProjection::new(mapping, 6).unwrap();
        let sets = build_constraint_sets(&cloud, &CloudParams::default(), &proj).unwrap();
        assert_eq!(sets.sets(), &[vec![0, 1, 2, 3, 4]]);
    }
}
