//! Synthetic labeled shape clouds.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::corruption::{mat_vec, rotation_matrix};
use crate::geometry::{io, normalize_unit_sphere, Point3, PointCloud};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapeKind {
    Sphere,
    Cube,
    Cylinder,
    Torus,
    Plane,
    Cone,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 6] = [
        ShapeKind::Sphere,
        ShapeKind::Cube,
        ShapeKind::Cylinder,
        ShapeKind::Torus,
        ShapeKind::Plane,
        ShapeKind::Cone,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Cylinder => "cylinder",
            ShapeKind::Torus => "torus",
            ShapeKind::Plane => "plane",
            ShapeKind::Cone => "cone",
        }
    }
}

impl fmt::Display for ShapeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown shape '{s}'")))
    }
}

/// Radius of the sphere class before pose variation.
pub const SPHERE_RADIUS: f64 = 1.0;

/// Points drawn uniformly by area on the canonical surface of `kind`.
pub fn sample_surface<R: Rng + ?Sized>(kind: ShapeKind, n: usize, rng: &mut R) -> Vec<Point3> {
    (0..n).map(|_| surface_point(kind, rng)).collect()
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn surface_point<R: Rng + ?Sized>(kind: ShapeKind, rng: &mut R) -> Point3 {
    match kind {
        ShapeKind::Sphere => loop {
            let v = [normal(rng), normal(rng), normal(rng)];
            let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if len > 1e-12 {
                break [SPHERE_RADIUS * v[0] / len, SPHERE_RADIUS * v[1] / len, SPHERE_RADIUS * v[2] / len];
            }
        },
        ShapeKind::Cube => {
            let face = rng.random_range(0..6);
            let (u, v) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let side = if face % 2 == 0 { 1.0 } else { -1.0 };
            match face / 2 {
                0 => [side, u, v],
                1 => [u, side, v],
                _ => [u, v, side],
            }
        }
        ShapeKind::Cylinder => {
            // radius 0.5, height 2: lateral area 2*pi, caps 0.25*pi each
            let (r, h) = (0.5, 1.0);
            let lateral = 2.0 * PI * r * 2.0 * h;
            let cap = PI * r * r;
            let theta = rng.random_range(0.0..2.0 * PI);
            if rng.random::<f64>() * (lateral + 2.0 * cap) < lateral {
                [r * theta.cos(), r * theta.sin(), rng.random_range(-h..h)]
            } else {
                let rho = r * rng.random::<f64>().sqrt();
                let z = if rng.random::<bool>() { h } else { -h };
                [rho * theta.cos(), rho * theta.sin(), z]
            }
        }
        ShapeKind::Torus => {
            let (big, small) = (0.7, 0.25);
            loop {
                let u = rng.random_range(0.0..2.0 * PI);
                let v = rng.random_range(0.0..2.0 * PI);
                // area element is proportional to big + small * cos(v)
                if rng.random::<f64>() * (big + small) <= big + small * v.cos() {
                    let ring = big + small * v.cos();
                    break [ring * u.cos(), ring * u.sin(), small * v.sin()];
                }
            }
        }
        ShapeKind::Plane => [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0],
        ShapeKind::Cone => {
            // apex (0, 0, 1), base radius 0.8 at z = -1
            let (r, h): (f64, f64) = (0.8, 2.0);
            let slant = (r * r + h * h).sqrt();
            let lateral = PI * r * slant;
            let base = PI * r * r;
            let theta = rng.random_range(0.0..2.0 * PI);
            if rng.random::<f64>() * (lateral + base) < lateral {
                let t = rng.random::<f64>().sqrt();
                [t * r * theta.cos(), t * r * theta.sin(), 1.0 - t * h]
            } else {
                let rho = r * rng.random::<f64>().sqrt();
                [rho * theta.cos(), rho * theta.sin(), -1.0]
            }
        }
    }
}

/// Maximum per-axis scale deviation of an instance.
const INSTANCE_SCALE: f64 = 0.15;
/// Maximum rotation of an instance, in radians.
const INSTANCE_ANGLE: f64 = PI / 12.0;

/// One instance: canonical surface, random anisotropic scale and small
/// rotation, normalized to the unit sphere.
pub fn gen_cloud(kind: ShapeKind, n: usize, rng: &mut ChaCha8Rng) -> Result<PointCloud, HarnessError> {
    let pts = sample_surface(kind, n, rng);
    let scale: [f64; 3] = std::array::from_fn(|_| 1.0 + rng.random_range(-INSTANCE_SCALE..INSTANCE_SCALE));
    let axis = loop {
        let v = [normal(rng), normal(rng), normal(rng)];
        let len = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if len > 1e-12 {
            break [v[0] / len, v[1] / len, v[2] / len];
        }
    };
    let rot = rotation_matrix(axis, rng.random_range(-INSTANCE_ANGLE..INSTANCE_ANGLE));
    let posed = pts
        .into_iter()
        .map(|p| mat_vec(&rot, &[p[0] * scale[0], p[1] * scale[1], p[2] * scale[2]]))
        .collect();
    Ok(normalize_unit_sphere(&PointCloud::new(posed)?)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDatasetSpec {
    /// Class `i` is drawn from `classes[i]`.
    pub classes: Vec<ShapeKind>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub points: usize,
    pub seed: u64,
}

impl Default for SyntheticDatasetSpec {
    fn default() -> Self {
        Self {
            classes: ShapeKind::ALL.to_vec(),
            train_per_class: 100,
            test_per_class: 30,
            points: 256,
            seed: 0,
        }
    }
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.classes.len() < 2 {
            return Err(HarnessError::Config("at least two classes are required".into()));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(HarnessError::Config("per-class counts must be positive".into()));
        }
        if self.points < 2 {
            return Err(HarnessError::Config("clouds need at least two points".into()));
        }
        Ok(())
    }
}

/// Labeled train and test clouds, ordered by class then instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub class_names: Vec<String>,
    pub train: Vec<PointCloud>,
    pub test: Vec<PointCloud>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }
}

const SPLIT_TRAIN: u64 = 0;
const SPLIT_TEST: u64 = 1;

/// Every cloud draws from its own stream seeded by `(seed, split, class,
/// instance)`, so the split sizes do not affect one another.
pub fn gen_dataset(spec: &SyntheticDatasetSpec) -> Result<Dataset, HarnessError> {
    spec.validate()?;
    let make = |split: u64, per_class: usize| -> Result<Vec<PointCloud>, HarnessError> {
        let mut out = Vec::with_capacity(spec.classes.len() * per_class);
        for (c, &kind) in spec.classes.iter().enumerate() {
            for i in 0..per_class {
                let mut rng = seed::rng(seed::derive(spec.seed, &[split, c as u64, i as u64]));
                out.push(gen_cloud(kind, spec.points, &mut rng)?.with_label(Some(c as u32)));
            }
        }
        Ok(out)
    };
    Ok(Dataset {
        class_names: spec.classes.iter().map(|k| k.name().to_string()).collect(),
        train: make(SPLIT_TRAIN, spec.train_per_class)?,
        test: make(SPLIT_TEST, spec.test_per_class)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    class_names: Vec<String>,
    train: usize,
    test: usize,
}

/// Writes `manifest.json` plus one binary cloud file per instance under
/// `train/` and `test/`.
pub fn save_dataset(data: &Dataset, dir: &Path) -> Result<(), HarnessError> {
    for (split, clouds) in [("train", &data.train), ("test", &data.test)] {
        let sub = dir.join(split);
        fs::create_dir_all(&sub)?;
        for (i, cloud) in clouds.iter().enumerate() {
            io::save(cloud, &sub.join(format!("{i:05}.rpc")))?;
        }
    }
    let manifest = Manifest {
        class_names: data.class_names.clone(),
        train: data.train.len(),
        test: data.test.len(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset, HarnessError> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let read = |split: &str, count: usize| -> Result<Vec<PointCloud>, HarnessError> {
        (0..count)
            .map(|i| {
                let cloud = io::load(&dir.join(split).join(format!("{i:05}.rpc")))?;
                match cloud.label() {
                    Some(l) if (l as usize) < manifest.class_names.len() => Ok(cloud),
                    other => Err(HarnessError::Data(format!(
                        "{split} cloud {i} has label {other:?} outside the manifest classes"
                    ))),
                }
            })
            .collect()
    };
    Ok(Dataset {
        train: read("train", manifest.train)?,
        test: read("test", manifest.test)?,
        class_names: manifest.class_names,
    })
}
