//! Anchor-point selection: density-aware sampling (DAS) plus the farthest
//! point and uniform random baselines.
//!
//! DAS scores each point by how many of its `k` nearest neighbors lie closer
//! than the cloud-wide mean neighbor distance `t`, then draws anchors with
//! probability proportional to that score. Isolated points (noise, stray
//! additions) usually score zero and can never become anchors.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, dist2, GeometryError, PointCloud};

/// Neighbor count used for density estimation unless configured otherwise.
pub const DEFAULT_DENSITY_K: usize = 5;
/// Ball radius for the ball-query density variant (unit-sphere coordinates).
pub const BALL_QUERY_RADIUS: f64 = 0.1;
/// Cap on the per-point count in the ball-query variant.
pub const BALL_QUERY_MAX_COUNT: usize = 64;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("cannot draw {requested} distinct samples: only {available} entries have positive weight")]
    Infeasible { requested: usize, available: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// How a point's raw density score is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensityVariant {
    /// Count of kNN neighbors strictly closer than the threshold.
    L0,
    /// Soft count: sum over kNN neighbors of `max(t - distance, 0)`.
    L1,
    /// Count of points within [`BALL_QUERY_RADIUS`] of the point on the
    /// unit-sphere-normalized cloud, capped at [`BALL_QUERY_MAX_COUNT`].
    BallQuery,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityProfile {
    /// Mean distance from each point to its `k` nearest neighbors.
    pub mean_knn_dist: Vec<f64>,
    /// Mean of `mean_knn_dist` over the cloud.
    pub threshold: f64,
    /// Unnormalized per-point scores.
    pub raw_counts: Vec<f64>,
    /// Sampling distribution; uniform when every raw score is zero.
    pub weights: Vec<f64>,
    /// Set when every raw score was zero and `weights` fell back to uniform.
    pub degenerate: bool,
}

impl DensityProfile {
    /// Number of points that can be drawn as anchors.
    pub fn positive_count(&self) -> usize {
        self.weights.iter().filter(|&&w| w > 0.0).count()
    }
}

pub fn density_profile(
    cloud: &PointCloud,
    k: usize,
    variant: DensityVariant,
) -> Result<DensityProfile, SamplingError> {
    let n = cloud.len();
    let table = geometry::knn(cloud, k)?;
    let mean_knn_dist: Vec<f64> = (0..n)
        .map(|i| table.distances(i).iter().sum::<f64>() / k as f64)
        .collect();
    let threshold = mean_knn_dist.iter().sum::<f64>() / n as f64;

    let raw_counts: Vec<f64> = match variant {
        DensityVariant::L0 => (0..n)
            .map(|i| table.distances(i).iter().filter(|&&d| d < threshold).count() as f64)
            .collect(),
        DensityVariant::L1 => (0..n)
            .map(|i| {
                table
                    .distances(i)
                    .iter()
                    .map(|&d| (threshold - d).max(0.0))
                    .sum()
            })
            .collect(),
        DensityVariant::BallQuery => {
            let unit = geometry::normalize_unit_sphere(cloud)?;
            let pts = unit.points();
            let r2 = BALL_QUERY_RADIUS * BALL_QUERY_RADIUS;
            (0..n)
                .map(|i| {
                    let count = pts
                        .iter()
                        .enumerate()
                        .filter(|&(j, q)| j != i && dist2(&pts[i], q) < r2)
                        .count();
                    count.min(BALL_QUERY_MAX_COUNT) as f64
                })
                .collect()
        }
    };

    let total: f64 = raw_counts.iter().sum();
    let degenerate = total <= 0.0;
    let weights = if degenerate {
        vec![1.0 / n as f64; n]
    } else {
        raw_counts.iter().map(|&w| w / total).collect()
    };
    Ok(DensityProfile {
        mean_knn_dist,
        threshold,
        raw_counts,
        weights,
        degenerate,
    })
}

/// Draws `m` distinct indices. Each draw picks among the not-yet-chosen
/// indices with probability proportional to their weights.
pub fn weighted_sample_without_replacement<R: Rng + ?Sized>(
    weights: &[f64],
    m: usize,
    rng: &mut R,
) -> Result<Vec<usize>, SamplingError> {
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(SamplingError::InvalidArgument(format!(
            "weights must be finite and non-negative (found {w})"
        )));
    }
    let available = weights.iter().filter(|&&w| w > 0.0).count();
    if m > available {
        return Err(SamplingError::Infeasible {
            requested: m,
            available,
        });
    }
    let mut remaining = weights.to_vec();
    let mut chosen = Vec::with_capacity(m);
    for _ in 0..m {
        let total: f64 = remaining.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        let mut last_positive = 0;
        for (i, &w) in remaining.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            last_positive = i;
            acc += w;
            if target < acc {
                pick = Some(i);
                break;
            }
        }
        // rounding can leave `target` at or just past the final boundary
        let i = pick.unwrap_or(last_positive);
        remaining[i] = 0.0;
        chosen.push(i);
    }
    Ok(chosen)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerVariant {
    DasL0,
    DasL1,
    DasBallqueryL0,
    Fps,
    Random,
}

impl SamplerVariant {
    pub const ALL: [SamplerVariant; 5] = [
        SamplerVariant::DasL0,
        SamplerVariant::DasL1,
        SamplerVariant::DasBallqueryL0,
        SamplerVariant::Fps,
        SamplerVariant::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SamplerVariant::DasL0 => "das-l0",
            SamplerVariant::DasL1 => "das-l1",
            SamplerVariant::DasBallqueryL0 => "das-ballquery-l0",
            SamplerVariant::Fps => "fps",
            SamplerVariant::Random => "random",
        }
    }

    pub fn density(self) -> Option<DensityVariant> {
        match self {
            SamplerVariant::DasL0 => Some(DensityVariant::L0),
            SamplerVariant::DasL1 => Some(DensityVariant::L1),
            SamplerVariant::DasBallqueryL0 => Some(DensityVariant::BallQuery),
            SamplerVariant::Fps | SamplerVariant::Random => None,
        }
    }

    /// Whether the drawn anchors depend on the random generator.
    pub fn is_stochastic(self) -> bool {
        !matches!(self, SamplerVariant::Fps)
    }

    pub(crate) fn code(self) -> u32 {
        match self {
            SamplerVariant::DasL0 => 0,
            SamplerVariant::DasL1 => 1,
            SamplerVariant::DasBallqueryL0 => 2,
            SamplerVariant::Fps => 3,
            SamplerVariant::Random => 4,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.code() == code)
    }
}

impl fmt::Display for SamplerVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerVariant {
    type Err = SamplingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "das" | "das-l0" => Ok(SamplerVariant::DasL0),
            "das-l1" => Ok(SamplerVariant::DasL1),
            "das-ballquery" | "das-ballquery-l0" => Ok(SamplerVariant::DasBallqueryL0),
            "fps" => Ok(SamplerVariant::Fps),
            "random" | "rs" => Ok(SamplerVariant::Random),
            other => Err(SamplingError::InvalidArgument(format!(
                "unknown sampler '{other}'"
            ))),
        }
    }
}

/// Anchor sampling request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    /// Number of anchors.
    pub m: usize,
    /// Neighbor count for density estimation.
    pub k: usize,
    pub variant: SamplerVariant,
    /// First index for farthest point sampling.
    pub fps_start: usize,
}

impl SampleSpec {
    pub fn new(m: usize, variant: SamplerVariant) -> Self {
        Self {
            m,
            k: DEFAULT_DENSITY_K,
            variant,
            fps_start: 0,
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = k;
        self
    }

    pub fn with_fps_start(mut self, start: usize) -> Self {
        self.fps_start = start;
        self
    }
}

pub fn das_sample<R: Rng + ?Sized>(
    cloud: &PointCloud,
    spec: &SampleSpec,
    rng: &mut R,
) -> Result<Vec<usize>, SamplingError> {
    let density = spec.variant.density().ok_or_else(|| {
        SamplingError::InvalidArgument(format!("{} is not a density-aware sampler", spec.variant))
    })?;
    check_m(spec.m, cloud.len())?;
    let profile = density_profile(cloud, spec.k, density)?;
    weighted_sample_without_replacement(&profile.weights, spec.m, rng)
}

/// Greedy max-min selection starting from `start`. Ties go to the lower index.
pub fn fps_sample(cloud: &PointCloud, m: usize, start: usize) -> Result<Vec<usize>, SamplingError> {
    let n = cloud.len();
    check_m(m, n)?;
    if start >= n {
        return Err(SamplingError::InvalidArgument(format!(
            "start index {start} out of range for {n} points"
        )));
    }
    let pts = cloud.points();
    let mut min_d2: Vec<f64> = pts.iter().map(|p| dist2(p, &pts[start])).collect();
    let mut taken = vec![false; n];
    taken[start] = true;
    let mut order = Vec::with_capacity(m);
    order.push(start);
    while order.len() < m {
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, &d) in min_d2.iter().enumerate() {
            if !taken[i] && d > best_d {
                best = i;
                best_d = d;
            }
        }
        taken[best] = true;
        order.push(best);
        for (i, d) in min_d2.iter_mut().enumerate() {
            *d = d.min(dist2(&pts[i], &pts[best]));
        }
    }
    Ok(order)
}

/// Uniform sampling without replacement.
pub fn random_sample<R: Rng + ?Sized>(
    cloud: &PointCloud,
    m: usize,
    rng: &mut R,
) -> Result<Vec<usize>, SamplingError> {
    check_m(m, cloud.len())?;
    Ok(rand::seq::index::sample(rng, cloud.len(), m).into_vec())
}

/// Dispatches on `spec.variant`.
pub fn sample<R: Rng + ?Sized>(
    cloud: &PointCloud,
    spec: &SampleSpec,
    rng: &mut R,
) -> Result<Vec<usize>, SamplingError> {
    match spec.variant {
        SamplerVariant::Fps => fps_sample(cloud, spec.m, spec.fps_start),
        SamplerVariant::Random => random_sample(cloud, spec.m, rng),
        _ => das_sample(cloud, spec, rng),
    }
}

fn check_m(m: usize, n: usize) -> Result<(), SamplingError> {
    if m == 0 || m > n {
        return Err(SamplingError::InvalidArgument(format!(
            "sample size must satisfy 1 <= m <= N (m = {m}, N = {n})"
        )));
    }
    Ok(())
}
