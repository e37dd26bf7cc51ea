use std::collections::BTreeSet;

use super::compare::{run_comparison, ComparisonOptions, NcfRanker, Ranker};
use super::protocol::Protocol;
use super::HarnessError;
use crate::exec::{self, Parallelism};
use crate::ncf::{Activation, NcfConfig};

/// Cartesian grid over activation × k × depth.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid {
    pub activations: Vec<Activation>,
    pub ks: Vec<usize>,
    pub layers: Vec<usize>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            activations: Activation::ALL.to_vec(),
            ks: (20..=80).step_by(20).collect(),
            layers: vec![0, 1, 2, 4, 8],
        }
    }
}

impl SweepGrid {
    /// Grid points in declaration order with repeats removed, plus the
    /// number of repeats.
    pub fn points(&self) -> (Vec<(Activation, usize, usize)>, usize) {
        let mut seen = BTreeSet::new();
        let mut points = Vec::new();
        let mut repeats = 0;
        for &a in &self.activations {
            for &k in &self.ks {
                for &l in &self.layers {
                    if seen.insert((a.to_string(), k, l)) {
                        points.push((a, k, l));
                    } else {
                        repeats += 1;
                    }
                }
            }
        }
        (points, repeats)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOptions {
    /// Settings shared by every point; activation, k and depth are replaced.
    pub base: NcfConfig,
    pub comparison: ComparisonOptions,
    /// Evaluate grid points concurrently. Wall-times are then not comparable
    /// across points.
    pub parallel_points: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepMetrics {
    pub mean_sap: f64,
    pub mean_sr: f64,
    pub mean_ndpm: f64,
    pub cases_ok: usize,
    pub cases_failed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub activation: Activation,
    pub k: usize,
    pub layers: usize,
    pub outcome: Result<SweepMetrics, String>,
    /// Total NCF training time over all folds.
    pub train_wall_ms: f64,
}

/// Mean metric and training time for one value of one parameter, over the
/// successful configurations that use it.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelRow {
    pub parameter: &'static str,
    pub value: String,
    pub configs: usize,
    pub mean_sap: f64,
    pub mean_sr: f64,
    pub mean_train_ms: f64,
}

type RowKey = fn(&SweepRow) -> String;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub duplicates_removed: usize,
    pub wall_times_comparable: bool,
}

impl SweepReport {
    /// One panel per parameter, values in first-appearance order.
    pub fn panels(&self) -> Vec<PanelRow> {
        let mut panels = Vec::new();
        let keys: [(&'static str, RowKey); 3] = [
            ("activation", |r| r.activation.to_string()),
            ("k", |r| r.k.to_string()),
            ("layers", |r| r.layers.to_string()),
        ];
        for (parameter, key) in keys {
            let mut values: Vec<String> = Vec::new();
            for r in &self.rows {
                let v = key(r);
                if !values.contains(&v) {
                    values.push(v);
                }
            }
            for value in values {
                let ok: Vec<(&SweepRow, &SweepMetrics)> = self
                    .rows
                    .iter()
                    .filter(|r| key(r) == value)
                    .filter_map(|r| r.outcome.as_ref().ok().map(|m| (r, m)))
                    .collect();
                let n = ok.len() as f64;
                let avg = |f: &dyn Fn(&(&SweepRow, &SweepMetrics)) -> f64| {
                    if ok.is_empty() {
                        f64::NAN
                    } else {
                        ok.iter().map(f).sum::<f64>() / n
                    }
                };
                panels.push(PanelRow {
                    parameter,
                    configs: ok.len(),
                    mean_sap: avg(&|(_, m)| m.mean_sap),
                    mean_sr: avg(&|(_, m)| m.mean_sr),
                    mean_train_ms: avg(&|(r, _)| r.train_wall_ms),
                    value,
                });
            }
        }
        panels
    }
}

fn evaluate_point(
    protocol: &Protocol,
    (activation, k, layers): (Activation, usize, usize),
    options: &SweepOptions,
    inner: Parallelism,
) -> SweepRow {
    let config = NcfConfig {
        activation,
        k,
        layers,
        ..options.base
    };
    let mut ncf = NcfRanker::new(config);
    let comparison = ComparisonOptions {
        parallelism: inner,
        ..options.comparison.clone()
    };
    let report = run_comparison(protocol, &mut [&mut ncf as &mut dyn Ranker], &comparison);
    let train_wall_ms = report
        .fits
        .iter()
        .filter_map(|f| f.outcome.as_ref().ok())
        .map(|f| f.wall_ms)
        .sum();
    let summary = &report.summaries[0];
    let outcome = match (summary.mean_sap, summary.mean_sr, summary.mean_ndpm) {
        (Some(mean_sap), Some(mean_sr), Some(mean_ndpm)) => Ok(SweepMetrics {
            mean_sap,
            mean_sr,
            mean_ndpm,
            cases_ok: summary.cases_ok,
            cases_failed: summary.cases_failed,
        }),
        _ => Err(report
            .rows
            .iter()
            .find_map(|r| r.outcome.as_ref().err().cloned())
            .unwrap_or_else(|| "no cases".to_string())),
    };
    if let Err(e) = &outcome {
        log::warn!("sweep point {activation}/k={k}/l={layers} failed: {e}");
    }
    SweepRow {
        activation,
        k,
        layers,
        outcome,
        train_wall_ms,
    }
}

/// Evaluates NCF alone at every grid point on the same folds and seed.
pub fn sweep(protocol: &Protocol, grid: &SweepGrid, options: &SweepOptions) -> Result<SweepReport, HarnessError> {
    let (points, duplicates_removed) = grid.points();
    if points.is_empty() {
        return Err(HarnessError::InvalidSpec("sweep grid is empty".into()));
    }
    if duplicates_removed > 0 {
        log::warn!("removed {duplicates_removed} duplicate sweep points");
    }
    let rows = if options.parallel_points {
        exec::map_slice(Parallelism::Parallel, &points, |&p| {
            evaluate_point(protocol, p, options, Parallelism::Sequential)
        })
    } else {
        points
            .iter()
            .map(|&p| {
                log::info!("sweep point {}/k={}/l={}", p.0, p.1, p.2);
                evaluate_point(protocol, p, options, options.comparison.parallelism)
            })
            .collect()
    };
    Ok(SweepReport {
        rows,
        duplicates_removed,
        wall_times_comparable: !options.parallel_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_matches_reported_ranges() {
        let (points, repeats) = SweepGrid::default().points();
        assert_eq!(points.len(), 3 * 4 * 5);
        assert_eq!(repeats, 0);
    }

    #[test]
    fn repeated_values_are_dropped() {
        let grid = SweepGrid {
            activations: vec![Activation::Tanh, Activation::Tanh],
            ks: vec![8, 8, 16],
            layers: vec![1],
        };
        let (points, repeats) = grid.points();
        assert_eq!(points, vec![(Activation::Tanh, 8, 1), (Activation::Tanh, 16, 1)]);
        assert_eq!(repeats, 4);
    }
}
