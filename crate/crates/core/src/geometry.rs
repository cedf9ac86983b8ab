//! Point-cloud representation, normalization and exact neighbor queries.

use std::cmp::Ordering;

use thiserror::Error;

pub mod io;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed point-cloud file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Point3 = [f64; 3];

/// An unordered set of 3-D points with an optional class label.
///
/// Row order carries no meaning; only index-valued outputs (neighbor
/// tables, sampled anchors) refer to it.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
    label: Option<u32>,
}

impl PointCloud {
    /// Builds a cloud, rejecting empty input and non-finite coordinates.
    pub fn new(points: Vec<Point3>) -> Result<Self, GeometryError> {
        if points.is_empty() {
            return Err(GeometryError::InvalidInput("point cloud is empty".into()));
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(GeometryError::InvalidInput(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        Ok(Self {
            points,
            label: None,
        })
    }

    pub fn with_label(mut self, label: Option<u32>) -> Self {
        self.label = label;
        self
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn label(&self) -> Option<u32> {
        self.label
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<Point3> {
        self.points
    }

    /// Returns the sub-cloud made of `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self, GeometryError> {
        let points = indices
            .iter()
            .map(|&i| {
                self.points.get(i).copied().ok_or_else(|| {
                    GeometryError::InvalidArgument(format!(
                        "index {i} out of range for {} points",
                        self.points.len()
                    ))
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(points)?.with_label(self.label))
    }

    pub fn centroid(&self) -> Point3 {
        let n = self.points.len() as f64;
        let mut c = [0.0; 3];
        for p in &self.points {
            for a in 0..3 {
                c[a] += p[a];
            }
        }
        c.map(|v| v / n)
    }
}

#[inline]
pub fn dist(a: &Point3, b: &Point3) -> f64 {
    dist2(a, b).sqrt()
}

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

#[inline]
pub fn norm(p: &Point3) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

/// Centers the cloud at the origin and scales it so the farthest point has
/// unit norm. A cloud whose points all coincide collapses to the origin.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> Result<PointCloud, GeometryError> {
    let c = cloud.centroid();
    let centered: Vec<Point3> = cloud
        .points
        .iter()
        .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect();
    let max_norm = centered.iter().map(norm).fold(0.0, f64::max);
    let points = if max_norm > 0.0 {
        centered.iter().map(|p| p.map(|v| v / max_norm)).collect()
    } else {
        centered
    };
    Ok(PointCloud::new(points)?.with_label(cloud.label))
}

/// Per-point k nearest neighbors, excluding the query point itself.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    k: usize,
    indices: Vec<usize>,
    distances: Vec<f64>,
}

impl NeighborTable {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self, row: usize) -> &[usize] {
        &self.indices[row * self.k..(row + 1) * self.k]
    }

    pub fn distances(&self, row: usize) -> &[f64] {
        &self.distances[row * self.k..(row + 1) * self.k]
    }
}

/// Orders candidates by distance, then by index.
#[inline]
fn by_distance_then_index(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// The `k` points nearest to `query`, skipping `exclude`. Ties go to the
/// lower index. Returns `(distance, index)` pairs in ascending order.
pub(crate) fn nearest_to(
    points: &[Point3],
    query: &Point3,
    k: usize,
    exclude: Option<usize>,
) -> Vec<(f64, usize)> {
    let mut cand: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != exclude)
        .map(|(j, p)| (dist2(query, p), j))
        .collect();
    let k = k.min(cand.len());
    if k == 0 {
        return Vec::new();
    }
    if k < cand.len() {
        cand.select_nth_unstable_by(k - 1, by_distance_then_index);
        cand.truncate(k);
    }
    cand.sort_unstable_by(by_distance_then_index);
    cand.into_iter().map(|(d2, j)| (d2.sqrt(), j)).collect()
}

/// Exact k-nearest neighbors of every point by full pairwise search.
pub fn knn(cloud: &PointCloud, k: usize) -> Result<NeighborTable, GeometryError> {
    let n = cloud.len();
    if k == 0 || k >= n {
        return Err(GeometryError::InvalidArgument(format!(
            "k must satisfy 1 <= k <= N-1 (k = {k}, N = {n})"
        )));
    }
    let mut indices = Vec::with_capacity(n * k);
    let mut distances = Vec::with_capacity(n * k);
    for (i, p) in cloud.points.iter().enumerate() {
        for (d, j) in nearest_to(&cloud.points, p, k, Some(i)) {
            indices.push(j);
            distances.push(d);
        }
    }
    Ok(NeighborTable {
        k,
        indices,
        distances,
    })
}
