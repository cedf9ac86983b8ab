//! Train-and-evaluate over a Cartesian grid of run configurations.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{entries, RunConfig};
use super::data::{gen_dataset, Dataset, SyntheticDatasetSpec};
use super::eval::{evaluate_checkpoint, EvalReport};
use super::train::train;
use super::HarnessError;
use crate::corruption::CorruptionKind;

/// Base assignments plus axes declared as `grid.<key> = a | b | ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationGrid {
    base: Vec<(String, String)>,
    axes: Vec<(String, Vec<String>)>,
}

/// One expanded grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    /// `(key, value)` for every axis, in axis order.
    pub assignments: Vec<(String, String)>,
    pub config: RunConfig,
}

impl AblationGrid {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut base = Vec::new();
        let mut axes: Vec<(String, Vec<String>)> = Vec::new();
        for (key, value) in entries(text)? {
            match key.strip_prefix("grid.") {
                Some(axis) => {
                    if axes.iter().any(|(k, _)| k == axis) {
                        return Err(HarnessError::Config(format!("axis '{axis}' declared twice")));
                    }
                    let values: Vec<String> = value.split('|').map(|v| v.trim().to_string()).collect();
                    if values.iter().any(String::is_empty) {
                        return Err(HarnessError::Config(format!("axis '{axis}' has an empty value")));
                    }
                    axes.push((axis.to_string(), values));
                }
                None => base.push((key, value)),
            }
        }
        let grid = Self { base, axes };
        grid.expand()?;
        Ok(grid)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn axes(&self) -> Vec<&str> {
        self.axes.iter().map(|(k, _)| k.as_str()).collect()
    }

    /// Every combination of axis values; the first axis varies slowest.
    pub fn expand(&self) -> Result<Vec<GridPoint>, HarnessError> {
        let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
        for (key, values) in &self.axes {
            combos = combos
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |v| {
                        let mut next = prefix.clone();
                        next.push((key.clone(), v.clone()));
                        next
                    })
                })
                .collect();
        }
        combos
            .into_iter()
            .map(|assignments| {
                let mut config = RunConfig::default();
                for (k, v) in self.base.iter().chain(&assignments) {
                    config.set(k, v)?;
                }
                config.validate()?;
                Ok(GridPoint { assignments, config })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub assignments: Vec<(String, String)>,
    pub best_epoch: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axes: Vec<String>,
    pub rows: Vec<AblationRow>,
}

/// Trains and evaluates every grid point in order. Generated datasets are
/// shared between points with the same data settings; `data` replaces
/// generation entirely when given.
pub fn ablate<F: FnMut(usize, &AblationRow)>(
    grid: &AblationGrid,
    data: Option<&Dataset>,
    mut progress: F,
) -> Result<AblationTable, HarnessError> {
    let points = grid.expand()?;
    let mut cache: Vec<(SyntheticDatasetSpec, Dataset)> = Vec::new();
    let mut rows = Vec::with_capacity(points.len());
    for (i, point) in points.into_iter().enumerate() {
        let dataset = match data {
            Some(d) => d,
            None => {
                let pos = match cache.iter().position(|(s, _)| *s == point.config.data) {
                    Some(p) => p,
                    None => {
                        cache.push((point.config.data.clone(), gen_dataset(&point.config.data)?));
                        cache.len() - 1
                    }
                };
                &cache[pos].1
            }
        };
        if dataset.num_classes() != point.config.train.dims.classes {
            return Err(HarnessError::Config(format!(
                "dataset has {} classes but the configuration expects {}",
                dataset.num_classes(),
                point.config.train.dims.classes
            )));
        }
        let outcome = train(&dataset.train, &point.config.train)?;
        let (report, _) = evaluate_checkpoint(&outcome.checkpoint, &dataset.test, &point.config.eval)?;
        let row = AblationRow {
            assignments: point.assignments,
            best_epoch: outcome.best_epoch,
            report,
        };
        progress(i, &row);
        rows.push(row);
    }
    Ok(AblationTable {
        axes: grid.axes().into_iter().map(String::from).collect(),
        rows,
    })
}

/// Axis columns, `best_epoch`, `er_clean`, `er_cor`, then one `er_<kind>`
/// column per corruption kind seen in any row.
pub fn write_table_csv<W: Write>(table: &AblationTable, w: W) -> Result<(), HarnessError> {
    let mut kinds: Vec<CorruptionKind> = Vec::new();
    for row in &table.rows {
        for k in &row.report.corruptions {
            if !kinds.contains(&k.kind) {
                kinds.push(k.kind);
            }
        }
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = table.axes.clone();
    header.extend(["best_epoch", "er_clean", "er_cor"].map(String::from));
    header.extend(kinds.iter().map(|k| format!("er_{}", k.name())));
    out.write_record(&header)?;
    for row in &table.rows {
        let mut rec: Vec<String> = row.assignments.iter().map(|(_, v)| v.clone()).collect();
        rec.push(row.best_epoch.to_string());
        rec.push(row.report.er_clean.to_string());
        rec.push(row.report.er_cor.map(|v| v.to_string()).unwrap_or_default());
        for k in &kinds {
            rec.push(row.report.kind(*k).map(|r| r.er_c.to_string()).unwrap_or_default());
        }
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::SamplerVariant;

    #[test]
    fn grid_expands_as_a_product() {
        let grid = AblationGrid::parse(
            "epochs = 2\ngrid.sampler = das-l0 | fps | random\ngrid.lambda = 0 | 0.1\n",
        )
        .unwrap();
        let points = grid.expand().unwrap();
        assert_eq!(points.len(), 6);
        assert_eq!(grid.axes(), vec!["sampler", "lambda"]);
        assert_eq!(points[0].config.train.sampler.variant, SamplerVariant::DasL0);
        assert_eq!(points[1].config.train.loss.lambda, 0.1);
        assert_eq!(points[5].config.train.sampler.variant, SamplerVariant::Random);
        assert!(points.iter().all(|p| p.config.train.epochs == 2));
    }

    #[test]
    fn grid_errors() {
        assert!(AblationGrid::parse("grid.lambda = 0 | | 1").is_err());
        assert!(AblationGrid::parse("grid.lambda = 0\ngrid.lambda = 1").is_err());
        assert!(AblationGrid::parse("grid.bogus = 1 | 2").is_err());
        let plain = AblationGrid::parse("epochs = 3").unwrap();
        assert_eq!(plain.expand().unwrap().len(), 1);
    }
}
