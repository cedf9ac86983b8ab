//! Error rates on clean and corrupted test clouds.
//!
//! Every prediction is logged, and the report is computed from the log
//! alone by [`aggregate`].

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::EvalSettings;
use super::HarnessError;
use crate::corruption::{corruption_suite, CorruptionKind, MAX_SEVERITY};
use crate::geometry::PointCloud;
use crate::model::{self, Checkpoint};
use crate::sampling::SampleSpec;
use crate::seed;

/// Anything that maps a cloud to a class index.
pub trait Predictor: Sync {
    /// `draw` selects the random stream of stochastic predictors.
    fn predict(&self, cloud: &PointCloud, draw: u64) -> Result<usize, HarnessError>;

    /// Whether predictions depend on `draw`.
    fn is_stochastic(&self) -> bool;
}

/// A checkpoint, optionally evaluated with a different anchor sampler.
pub struct ModelPredictor<'a> {
    pub checkpoint: &'a Checkpoint,
    pub sampler: SampleSpec,
}

impl<'a> ModelPredictor<'a> {
    pub fn new(checkpoint: &'a Checkpoint) -> Self {
        Self {
            checkpoint,
            sampler: checkpoint.sampler,
        }
    }

    pub fn with_sampler(checkpoint: &'a Checkpoint, sampler: SampleSpec) -> Self {
        Self { checkpoint, sampler }
    }
}

impl Predictor for ModelPredictor<'_> {
    fn predict(&self, cloud: &PointCloud, draw: u64) -> Result<usize, HarnessError> {
        let trace = model::forward(cloud, &self.checkpoint.params, &self.sampler, &mut seed::rng(draw))?;
        Ok(trace.prediction())
    }

    fn is_stochastic(&self) -> bool {
        self.checkpoint.params.dims().arch == model::Architecture::Attention && self.sampler.variant.is_stochastic()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "condition", rename_all = "kebab-case")]
pub enum Condition {
    Clean,
    Corrupted { kind: CorruptionKind, severity: u8 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRecord {
    #[serde(flatten)]
    pub condition: Condition,
    /// Index of the source cloud in the test set.
    pub cloud: usize,
    /// Evaluation draw, `0..eval_seeds`.
    pub draw: usize,
    pub label: u32,
    pub predicted: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionLog {
    pub records: Vec<PredictionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindReport {
    pub kind: CorruptionKind,
    /// Error rate at severities 1 through 5.
    pub er_by_severity: Vec<f64>,
    /// Mean of `er_by_severity`.
    pub er_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub er_clean: f64,
    pub corruptions: Vec<KindReport>,
    /// Mean of the per-kind `er_c`; `None` when no kinds were evaluated.
    pub er_cor: Option<f64>,
}

impl EvalReport {
    pub fn kind(&self, kind: CorruptionKind) -> Option<&KindReport> {
        self.corruptions.iter().find(|k| k.kind == kind)
    }
}

/// Error rate of one condition: the 0/1 error of each cloud is averaged
/// over its draws, then over clouds.
fn condition_error(records: &[&PredictionRecord]) -> f64 {
    let mut per_cloud: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for r in records {
        let e = per_cloud.entry(r.cloud).or_default();
        e.0 += (r.predicted != r.label) as usize;
        e.1 += 1;
    }
    let n = per_cloud.len() as f64;
    per_cloud.values().map(|&(wrong, total)| wrong as f64 / total as f64).sum::<f64>() / n
}

/// Builds the report from logged predictions. Kinds appear in order of first
/// occurrence in the log.
pub fn aggregate(log: &PredictionLog) -> Result<EvalReport, HarnessError> {
    let mut groups: BTreeMap<Condition, Vec<&PredictionRecord>> = BTreeMap::new();
    let mut kinds: Vec<CorruptionKind> = Vec::new();
    for r in &log.records {
        if let Condition::Corrupted { kind, .. } = r.condition {
            if !kinds.contains(&kind) {
                kinds.push(kind);
            }
        }
        groups.entry(r.condition).or_default().push(r);
    }
    let clean = groups
        .get(&Condition::Clean)
        .ok_or_else(|| HarnessError::Data("prediction log has no clean records".into()))?;
    let er_clean = condition_error(clean);
    let mut corruptions = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let er_by_severity = (1..=MAX_SEVERITY)
            .map(|severity| {
                groups
                    .get(&Condition::Corrupted { kind, severity })
                    .map(|rs| condition_error(rs))
                    .ok_or_else(|| HarnessError::Data(format!("no records for {kind} severity {severity}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let er_c = er_by_severity.iter().sum::<f64>() / er_by_severity.len() as f64;
        corruptions.push(KindReport {
            kind,
            er_by_severity,
            er_c,
        });
    }
    let er_cor = (!corruptions.is_empty())
        .then(|| corruptions.iter().map(|k| k.er_c).sum::<f64>() / corruptions.len() as f64);
    Ok(EvalReport {
        er_clean,
        corruptions,
        er_cor,
    })
}

/// Predictions on the clean test set and on every `kind x severity`
/// corruption of it. Corruption `(i, kind, s)` is seeded from
/// `(corruption_seed, i)`, so every model sees the same corrupted clouds.
pub fn predict_all<P: Predictor>(
    predictor: &P,
    test: &[PointCloud],
    settings: &EvalSettings,
) -> Result<PredictionLog, HarnessError> {
    let draws = if predictor.is_stochastic() { settings.eval_seeds.max(1) } else { 1 };
    let per_cloud = test
        .par_iter()
        .enumerate()
        .map(|(i, cloud)| -> Result<Vec<PredictionRecord>, HarnessError> {
            let label = cloud
                .label()
                .ok_or_else(|| HarnessError::Data(format!("test cloud {i} has no label")))?;
            let master = seed::derive(settings.corruption_seed, &[i as u64]);
            let mut inputs = vec![(Condition::Clean, cloud.clone())];
            for (spec, corrupted) in corruption_suite(cloud, &settings.kinds, master)? {
                inputs.push((
                    Condition::Corrupted {
                        kind: spec.kind,
                        severity: spec.severity,
                    },
                    corrupted,
                ));
            }
            let mut out = Vec::with_capacity(inputs.len() * draws);
            for (c, (condition, input)) in inputs.iter().enumerate() {
                for draw in 0..draws {
                    let stream = seed::derive(settings.eval_seed, &[i as u64, c as u64, draw as u64]);
                    let predicted = predictor.predict(input, stream)? as u32;
                    out.push(PredictionRecord {
                        condition: *condition,
                        cloud: i,
                        draw,
                        label,
                        predicted,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PredictionLog {
        records: per_cloud.into_iter().flatten().collect(),
    })
}

pub fn evaluate<P: Predictor>(
    predictor: &P,
    test: &[PointCloud],
    settings: &EvalSettings,
) -> Result<(EvalReport, PredictionLog), HarnessError> {
    if test.is_empty() {
        return Err(HarnessError::Data("empty test set".into()));
    }
    let log = predict_all(predictor, test, settings)?;
    Ok((aggregate(&log)?, log))
}

pub fn evaluate_checkpoint(
    checkpoint: &Checkpoint,
    test: &[PointCloud],
    settings: &EvalSettings,
) -> Result<(EvalReport, PredictionLog), HarnessError> {
    evaluate(&ModelPredictor::new(checkpoint), test, settings)
}

/// Per-severity error curves, one row per `(kind, severity)`, with the clean
/// error as severity 0.
pub fn write_curves_csv<W: Write>(report: &EvalReport, w: W) -> Result<(), HarnessError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["kind", "severity", "er"])?;
    for k in &report.corruptions {
        out.write_record([k.kind.name(), "0", &report.er_clean.to_string()])?;
        for (s, er) in k.er_by_severity.iter().enumerate() {
            out.write_record([k.kind.name(), &(s + 1).to_string(), &er.to_string()])?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Perfect;
    impl Predictor for Perfect {
        fn predict(&self, cloud: &PointCloud, _: u64) -> Result<usize, HarnessError> {
            Ok(cloud.label().unwrap() as usize)
        }
        fn is_stochastic(&self) -> bool {
            false
        }
    }

    struct Constant(usize);
    impl Predictor for Constant {
        fn predict(&self, _: &PointCloud, _: u64) -> Result<usize, HarnessError> {
            Ok(self.0)
        }
        fn is_stochastic(&self) -> bool {
            false
        }
    }

    fn balanced(classes: u32, per: usize) -> Vec<PointCloud> {
        let mut out = Vec::new();
        for c in 0..classes {
            for i in 0..per {
                let pts = (0..40)
                    .map(|j| {
                        let t = (j as f64 + i as f64 * 0.1) * 0.37;
                        [t.sin() * 0.7, t.cos() * 0.6, (t * 1.3).sin() * 0.5]
                    })
                    .collect();
                out.push(PointCloud::new(pts).unwrap().with_label(Some(c)));
            }
        }
        out
    }

    fn settings(kinds: Vec<CorruptionKind>) -> EvalSettings {
        EvalSettings {
            kinds,
            ..EvalSettings::default()
        }
    }

    #[test]
    fn perfect_predictor_has_no_error() {
        let test = balanced(3, 2);
        let (report, log) = evaluate(&Perfect, &test, &settings(vec![CorruptionKind::Impulse, CorruptionKind::Scale])).unwrap();
        assert_eq!(report.er_clean, 0.0);
        assert_eq!(report.er_cor, Some(0.0));
        assert!(report.corruptions.iter().all(|k| k.er_by_severity == vec![0.0; 5]));
        assert_eq!(log.records.len(), 6 * 11);
    }

    #[test]
    fn majority_stub_on_four_balanced_classes() {
        let test = balanced(4, 3);
        let (report, _) = evaluate(&Constant(0), &test, &settings(vec![CorruptionKind::DropGlobal])).unwrap();
        assert_eq!(report.er_clean, 0.75);
        assert_eq!(report.er_cor, Some(0.75));
    }

    #[test]
    fn aggregates_follow_the_log() {
        let mut records = Vec::new();
        let mut push = |condition, cloud, draw, predicted| {
            records.push(PredictionRecord {
                condition,
                cloud,
                draw,
                label: 1,
                predicted,
            })
        };
        for cloud in 0..2 {
            push(Condition::Clean, cloud, 0, 1);
            push(Condition::Clean, cloud, 1, if cloud == 0 { 0 } else { 1 });
            for s in 1..=5u8 {
                let c = Condition::Corrupted {
                    kind: CorruptionKind::Rotate,
                    severity: s,
                };
                push(c, cloud, 0, if s as usize > cloud + 2 { 0 } else { 1 });
                push(c, cloud, 1, 1);
            }
        }
        let report = aggregate(&PredictionLog { records }).unwrap();
        assert_eq!(report.er_clean, 0.25);
        let rot = report.kind(CorruptionKind::Rotate).unwrap();
        assert_eq!(rot.er_by_severity, vec![0.0, 0.0, 0.25, 0.5, 0.5]);
        assert_eq!(rot.er_c, 0.25);
        assert_eq!(report.er_cor, Some(0.25));
    }

    #[test]
    fn incomplete_logs_are_rejected() {
        assert!(aggregate(&PredictionLog::default()).is_err());
        let log = PredictionLog {
            records: vec![
                PredictionRecord {
                    condition: Condition::Clean,
                    cloud: 0,
                    draw: 0,
                    label: 0,
                    predicted: 0,
                },
                PredictionRecord {
                    condition: Condition::Corrupted {
                        kind: CorruptionKind::Scale,
                        severity: 2,
                    },
                    cloud: 0,
                    draw: 0,
                    label: 0,
                    predicted: 0,
                },
            ],
        };
        assert!(aggregate(&log).is_err());
    }

    #[test]
    fn curves_have_one_row_per_cell() {
        let test = balanced(2, 1);
        let (report, _) = evaluate(&Perfect, &test, &settings(vec![CorruptionKind::Rotate])).unwrap();
        let mut buf = Vec::new();
        write_curves_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 6);
        assert!(text.starts_with("kind,severity,er\nrotate,0,0\n"));
    }
}
