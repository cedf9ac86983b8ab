//! Seeded corruption generators with five severity levels each.
//!
//! Covers the jitter, drop, add, scale and rotate families plus impulse
//! noise. The magnitude of every kind is a linear function of the severity;
//! the per-kind coefficients live in [`CorruptionSchedule`].

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{dist2, GeometryError, Point3, PointCloud};
use crate::seed;

pub const MAX_SEVERITY: u8 = 5;

#[derive(Debug, Error)]
pub enum CorruptionError {
    #[error("severity {0} outside 1..=5")]
    SeverityOutOfRange(u8),
    #[error("{kind} needs at least {required} points, cloud has {actual}")]
    TooFewPoints {
        kind: CorruptionKind,
        required: usize,
        actual: usize,
    },
    #[error("unknown corruption kind '{0}'")]
    UnknownKind(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorruptionKind {
    Scale,
    Rotate,
    JitterGaussian,
    JitterUniform,
    Impulse,
    DropGlobal,
    DropLocal,
    AddGlobal,
    AddLocal,
}

impl CorruptionKind {
    pub const ALL: [CorruptionKind; 9] = [
        CorruptionKind::Scale,
        CorruptionKind::Rotate,
        CorruptionKind::JitterGaussian,
        CorruptionKind::JitterUniform,
        CorruptionKind::Impulse,
        CorruptionKind::DropGlobal,
        CorruptionKind::DropLocal,
        CorruptionKind::AddGlobal,
        CorruptionKind::AddLocal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CorruptionKind::Scale => "scale",
            CorruptionKind::Rotate => "rotate",
            CorruptionKind::JitterGaussian => "jitter-gaussian",
            CorruptionKind::JitterUniform => "jitter-uniform",
            CorruptionKind::Impulse => "impulse",
            CorruptionKind::DropGlobal => "drop-global",
            CorruptionKind::DropLocal => "drop-local",
            CorruptionKind::AddGlobal => "add-global",
            CorruptionKind::AddLocal => "add-local",
        }
    }

    pub(crate) fn code(self) -> u64 {
        Self::ALL.iter().position(|&k| k == self).expect("listed kind") as u64
    }

    fn changes_count(self) -> bool {
        matches!(
            self,
            CorruptionKind::DropGlobal
                | CorruptionKind::DropLocal
                | CorruptionKind::AddGlobal
                | CorruptionKind::AddLocal
        )
    }
}

impl fmt::Display for CorruptionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorruptionKind {
    type Err = CorruptionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CorruptionError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub kind: CorruptionKind,
    pub severity: u8,
    pub seed: u64,
}

/// Per-kind magnitude coefficients. Every magnitude is `coefficient * s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionSchedule {
    /// Axis scale factors are drawn log-uniformly in `[1/(1+c*s), 1+c*s]`.
    pub scale_step: f64,
    /// Rotation angle bound in radians per severity level.
    pub rotate_step: f64,
    /// Gaussian jitter standard deviation per severity level.
    pub jitter_sigma_step: f64,
    /// Uniform jitter half-width per severity level.
    pub jitter_uniform_step: f64,
    /// Fraction of points replaced by impulse noise per severity level.
    pub impulse_fraction_step: f64,
    /// Fraction of points removed per severity level (both drop kinds).
    pub drop_fraction_step: f64,
    /// Size of each removed cluster in drop-local, as a fraction of N.
    pub drop_local_cluster_fraction: f64,
    /// Fraction of N appended per severity level (both add kinds).
    pub add_fraction_step: f64,
    /// Scatter of add-local points around their centers.
    pub add_local_sigma: f64,
    /// Points per add-local center, as a fraction of N.
    pub add_local_cluster_fraction: f64,
    /// Smallest cloud accepted by the drop/add kinds.
    pub min_points_for_resize: usize,
}

impl Default for CorruptionSchedule {
    fn default() -> Self {
        Self {
            scale_step: 0.1,
            rotate_step: PI / 12.0,
            jitter_sigma_step: 0.01,
            jitter_uniform_step: 0.01,
            impulse_fraction_step: 0.02,
            drop_fraction_step: 0.15,
            drop_local_cluster_fraction: 0.05,
            add_fraction_step: 0.05,
            add_local_sigma: 0.05,
            add_local_cluster_fraction: 0.05,
            min_points_for_resize: 32,
        }
    }
}

impl CorruptionSchedule {
    /// `floor(fraction_step * s * n)`, computed so exact products are not
    /// lost to rounding.
    fn count(fraction_step: f64, severity: u8, n: usize) -> usize {
        (fraction_step * severity as f64 * n as f64 + 1e-9).floor() as usize
    }

    /// Number of points removed, replaced or appended by `kind` at `severity`
    /// on a cloud of `n` points. Zero for kinds that move points.
    pub fn affected_count(&self, kind: CorruptionKind, severity: u8, n: usize) -> usize {
        match kind {
            CorruptionKind::Impulse => Self::count(self.impulse_fraction_step, severity, n),
            CorruptionKind::DropGlobal | CorruptionKind::DropLocal => {
                Self::count(self.drop_fraction_step, severity, n)
            }
            CorruptionKind::AddGlobal | CorruptionKind::AddLocal => {
                Self::count(self.add_fraction_step, severity, n)
            }
            _ => 0,
        }
    }

    /// Point count after applying `kind` at `severity`.
    pub fn output_len(&self, kind: CorruptionKind, severity: u8, n: usize) -> usize {
        let c = self.affected_count(kind, severity, n);
        match kind {
            CorruptionKind::DropGlobal | CorruptionKind::DropLocal => n - c,
            CorruptionKind::AddGlobal | CorruptionKind::AddLocal => n + c,
            _ => n,
        }
    }
}

pub fn apply_corruption(
    cloud: &PointCloud,
    spec: &CorruptionSpec,
) -> Result<PointCloud, CorruptionError> {
    apply_corruption_with(cloud, spec, &CorruptionSchedule::default())
}

/// Applies one corruption. Expects a unit-sphere-normalized cloud; the same
/// `(cloud, spec, schedule)` always yields the same output.
pub fn apply_corruption_with(
    cloud: &PointCloud,
    spec: &CorruptionSpec,
    schedule: &CorruptionSchedule,
) -> Result<PointCloud, CorruptionError> {
    let s = spec.severity;
    if !(1..=MAX_SEVERITY).contains(&s) {
        return Err(CorruptionError::SeverityOutOfRange(s));
    }
    let n = cloud.len();
    if spec.kind.changes_count() && n < schedule.min_points_for_resize {
        return Err(CorruptionError::TooFewPoints {
            kind: spec.kind,
            required: schedule.min_points_for_resize,
            actual: n,
        });
    }
    let mut rng = seed::rng(spec.seed);
    let sf = s as f64;
    let pts = cloud.points();
    let affected = schedule.affected_count(spec.kind, s, n);

    let out: Vec<Point3> = match spec.kind {
        CorruptionKind::Scale => {
            let bound = (1.0 + schedule.scale_step * sf).ln();
            let f: [f64; 3] = std::array::from_fn(|_| (bound * rng.random_range(-1.0..=1.0)).exp());
            pts.iter().map(|p| [p[0] * f[0], p[1] * f[1], p[2] * f[2]]).collect()
        }
        CorruptionKind::Rotate => {
            let axis = random_unit_vector(&mut rng);
            let angle = schedule.rotate_step * sf * rng.random_range(-1.0..=1.0);
            let r = rotation_matrix(axis, angle);
            pts.iter().map(|p| mat_vec(&r, p)).collect()
        }
        CorruptionKind::JitterGaussian => {
            let sigma = schedule.jitter_sigma_step * sf;
            pts.iter()
                .map(|p| p.map(|c| c + sigma * normal(&mut rng)))
                .collect()
        }
        CorruptionKind::JitterUniform => {
            let half = schedule.jitter_uniform_step * sf;
            pts.iter()
                .map(|p| p.map(|c| c + half * rng.random_range(-1.0..=1.0)))
                .collect()
        }
        CorruptionKind::Impulse => {
            let mut out = pts.to_vec();
            for i in rand::seq::index::sample(&mut rng, n, affected.min(n)) {
                out[i] = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
            }
            out
        }
        CorruptionKind::DropGlobal => {
            if affected >= n {
                return Err(too_few(spec.kind, affected + 1, n));
            }
            let mut keep = vec![true; n];
            for i in rand::seq::index::sample(&mut rng, n, affected) {
                keep[i] = false;
            }
            kept(pts, &keep)
        }
        CorruptionKind::DropLocal => {
            if affected >= n {
                return Err(too_few(spec.kind, affected + 1, n));
            }
            let cluster = ((schedule.drop_local_cluster_fraction * n as f64).floor() as usize).max(1);
            let mut keep = vec![true; n];
            let mut removed = 0;
            while removed < affected {
                let alive: Vec<usize> = (0..n).filter(|&i| keep[i]).collect();
                let center = pts[alive[rng.random_range(0..alive.len())]];
                let mut by_dist: Vec<(f64, usize)> =
                    alive.iter().map(|&i| (dist2(&pts[i], &center), i)).collect();
                by_dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                for &(_, i) in by_dist.iter().take(cluster.min(affected - removed)) {
                    keep[i] = false;
                    removed += 1;
                }
            }
            kept(pts, &keep)
        }
        CorruptionKind::AddGlobal => {
            let mut out = pts.to_vec();
            out.extend((0..affected).map(|_| random_in_unit_ball(&mut rng)));
            out
        }
        CorruptionKind::AddLocal => {
            let cluster = ((schedule.add_local_cluster_fraction * n as f64).floor() as usize).max(1);
            let centers: Vec<Point3> = (0..affected.div_ceil(cluster))
                .map(|_| pts[rng.random_range(0..n)])
                .collect();
            let sigma = schedule.add_local_sigma;
            let mut out = pts.to_vec();
            for t in 0..affected {
                let c = centers[t / cluster];
                out.push(c.map(|v| v + sigma * normal(&mut rng)));
            }
            out
        }
    };
    Ok(PointCloud::new(out)?.with_label(cloud.label()))
}

/// Sub-seed for one `(kind, severity)` cell: `master ^ splitmix(kind, s)`.
pub fn suite_seed(master: u64, kind: CorruptionKind, severity: u8) -> u64 {
    master ^ seed::splitmix64(kind.code() * 16 + severity as u64)
}

/// Every `kind x severity` corruption of `cloud`, kinds in the given order
/// and severities ascending.
pub fn corruption_suite(
    cloud: &PointCloud,
    kinds: &[CorruptionKind],
    master_seed: u64,
) -> Result<Vec<(CorruptionSpec, PointCloud)>, CorruptionError> {
    let mut out = Vec::with_capacity(kinds.len() * MAX_SEVERITY as usize);
    for &kind in kinds {
        for severity in 1..=MAX_SEVERITY {
            let spec = CorruptionSpec {
                kind,
                severity,
                seed: suite_seed(master_seed, kind, severity),
            };
            let corrupted = apply_corruption(cloud, &spec)?;
            out.push((spec, corrupted));
        }
    }
    Ok(out)
}

fn too_few(kind: CorruptionKind, required: usize, actual: usize) -> CorruptionError {
    CorruptionError::TooFewPoints {
        kind,
        required,
        actual,
    }
}

fn kept(pts: &[Point3], keep: &[bool]) -> Vec<Point3> {
    pts.iter()
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|(p, _)| *p)
        .collect()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_unit_vector(rng: &mut ChaCha8Rng) -> Point3 {
    loop {
        let v: Point3 = std::array::from_fn(|_| normal(rng));
        let n = crate::geometry::norm(&v);
        if n > 1e-9 {
            return v.map(|c| c / n);
        }
    }
}

fn random_in_unit_ball(rng: &mut ChaCha8Rng) -> Point3 {
    loop {
        let v: Point3 = std::array::from_fn(|_| rng.random_range(-1.0..=1.0));
        if crate::geometry::norm(&v) <= 1.0 {
            return v;
        }
    }
}

/// Rodrigues rotation about a unit `axis`.
pub(crate) fn rotation_matrix(axis: Point3, angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    let [x, y, z] = axis;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

pub(crate) fn mat_vec(r: &[[f64; 3]; 3], p: &Point3) -> Point3 {
    std::array::from_fn(|i| r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::dist;

    fn sphere_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = seed::rng(seed);
        let pts = (0..n).map(|_| random_unit_vector(&mut rng)).collect();
        PointCloud::new(pts).unwrap()
    }

    fn spec(kind: CorruptionKind, severity: u8, seed: u64) -> CorruptionSpec {
        CorruptionSpec {
            kind,
            severity,
            seed,
        }
    }

    fn mean_displacement(a: &PointCloud, b: &PointCloud) -> f64 {
        a.points()
            .iter()
            .zip(b.points())
            .map(|(p, q)| dist(p, q))
            .sum::<f64>()
            / a.len() as f64
    }

    #[test]
    fn drop_global_count() {
        let c = sphere_cloud(1024, 1);
        let out = apply_corruption(&c, &spec(CorruptionKind::DropGlobal, 2, 9)).unwrap();
        assert_eq!(out.len(), 1024 - 307);
    }

    #[test]
    fn jitter_scales_with_severity() {
        let c = sphere_cloud(500, 2);
        let d1 = mean_displacement(&c, &apply_corruption(&c, &spec(CorruptionKind::JitterGaussian, 1, 4)).unwrap());
        let d5 = mean_displacement(&c, &apply_corruption(&c, &spec(CorruptionKind::JitterGaussian, 5, 4)).unwrap());
        assert!((d5 / d1 - 5.0).abs() < 1e-9, "{}", d5 / d1);
    }

    #[test]
    fn rotation_is_isometry() {
        let c = sphere_cloud(64, 3);
        for s in 1..=5 {
            let out = apply_corruption(&c, &spec(CorruptionKind::Rotate, s, 11)).unwrap();
            for i in 0..c.len() {
                for j in 0..c.len() {
                    let a = dist(&c.points()[i], &c.points()[j]);
                    let b = dist(&out.points()[i], &out.points()[j]);
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn rotation_angle_within_bound() {
        let r = rotation_matrix([0.0, 0.0, 1.0], PI / 2.0);
        let p = mat_vec(&r, &[1.0, 0.0, 0.0]);
        assert!((p[0]).abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn scale_factors_within_bounds() {
        let c = PointCloud::new(vec![[1.0, 1.0, 1.0]; 2]).unwrap();
        for s in 1..=5u8 {
            for seed in 0..20 {
                let out = apply_corruption(&c, &spec(CorruptionKind::Scale, s, seed)).unwrap();
                let hi = 1.0 + 0.1 * s as f64;
                for &f in &out.points()[0] {
                    assert!(f <= hi + 1e-12 && f >= 1.0 / hi - 1e-12);
                }
            }
        }
    }

    #[test]
    fn counts_follow_schedule() {
        let c = sphere_cloud(256, 4);
        let sched = CorruptionSchedule::default();
        for kind in CorruptionKind::ALL {
            for s in 1..=5 {
                let out = apply_corruption(&c, &spec(kind, s, 5)).unwrap();
                assert_eq!(out.len(), sched.output_len(kind, s, 256), "{kind} s={s}");
                assert!(out.points().iter().flatten().all(|v| v.is_finite()));
            }
        }
        assert_eq!(sched.affected_count(CorruptionKind::Impulse, 5, 256), 25);
        assert_eq!(sched.affected_count(CorruptionKind::AddGlobal, 4, 100), 20);
    }

    #[test]
    fn impulse_replaces_exact_count() {
        let c = sphere_cloud(256, 6);
        let out = apply_corruption(&c, &spec(CorruptionKind::Impulse, 3, 1)).unwrap();
        let moved = c
            .points()
            .iter()
            .zip(out.points())
            .filter(|(p, q)| p != q)
            .count();
        assert_eq!(moved, 15);
    }

    #[test]
    fn add_global_points_in_unit_ball() {
        let c = sphere_cloud(100, 7);
        let out = apply_corruption(&c, &spec(CorruptionKind::AddGlobal, 5, 1)).unwrap();
        assert_eq!(&out.points()[..100], c.points());
        assert!(out.points()[100..].iter().all(|p| crate::geometry::norm(p) <= 1.0));
    }

    #[test]
    fn drop_local_removes_a_compact_region() {
        let c = sphere_cloud(400, 8);
        let out = apply_corruption(&c, &spec(CorruptionKind::DropLocal, 1, 3)).unwrap();
        assert_eq!(out.len(), 400 - 60);
    }

    #[test]
    fn errors() {
        let c = sphere_cloud(16, 9);
        assert!(matches!(
            apply_corruption(&c, &spec(CorruptionKind::Rotate, 0, 1)),
            Err(CorruptionError::SeverityOutOfRange(0))
        ));
        assert!(matches!(
            apply_corruption(&c, &spec(CorruptionKind::Rotate, 6, 1)),
            Err(CorruptionError::SeverityOutOfRange(6))
        ));
        assert!(matches!(
            apply_corruption(&c, &spec(CorruptionKind::DropGlobal, 1, 1)),
            Err(CorruptionError::TooFewPoints { .. })
        ));
        assert!(apply_corruption(&c, &spec(CorruptionKind::JitterUniform, 1, 1)).is_ok());
        assert!("bogus".parse::<CorruptionKind>().is_err());
    }

    #[test]
    fn suite_cardinality_and_determinism() {
        let c = sphere_cloud(64, 10);
        let a = corruption_suite(&c, &CorruptionKind::ALL, 42).unwrap();
        let b = corruption_suite(&c, &CorruptionKind::ALL, 42).unwrap();
        assert_eq!(a.len(), 45);
        assert_eq!(a, b);
        let other = corruption_suite(&c, &[CorruptionKind::JitterGaussian], 43).unwrap();
        for (x, y) in a[10..15].iter().zip(&other) {
            assert_eq!(x.0.kind, CorruptionKind::JitterGaussian);
            assert_ne!(x.1, y.1);
        }
    }

    #[test]
    fn schedule_round_trips_through_json() {
        let sched = CorruptionSchedule::default();
        let text = serde_json::to_string(&sched).unwrap();
        assert_eq!(serde_json::from_str::<CorruptionSchedule>(&text).unwrap(), sched);
        let partial: CorruptionSchedule = serde_json::from_str(r#"{"jitter_sigma_step": 0.02}"#).unwrap();
        assert_eq!(partial.jitter_sigma_step, 0.02);
        assert_eq!(partial.drop_fraction_step, 0.15);
    }
}
