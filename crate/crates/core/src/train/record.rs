//! Per-run metric time series.

use crate::metrics::{MetricRow, METRIC_CSV_HEADER};
use crate::train::TrainError;

/// Metrics at one evaluation point, plus the losses seen at that iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPoint {
    pub iteration: u64,
    pub rows: Vec<MetricRow>,
    pub d_loss: f64,
    pub g_loss: f64,
    /// Wall-clock seconds since run start. Kept in memory only; excluded
    /// from the CSV so reports stay byte-reproducible.
    pub wall_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunRecord {
    pub run_id: String,
    /// Global ids of the classes whose mean defines the "target" metric.
    pub target_classes: Vec<usize>,
    pub points: Vec<EvalPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Frechet,
    Kmmd,
    Coverage,
    Quality,
}

impl MetricKind {
    pub fn parse(name: &str) -> Result<Self, TrainError> {
        match name {
            "frechet" => Ok(MetricKind::Frechet),
            "kmmd" => Ok(MetricKind::Kmmd),
            "coverage" => Ok(MetricKind::Coverage),
            "quality" => Ok(MetricKind::Quality),
            other => Err(TrainError::UnknownMetric(other.to_string())),
        }
    }

    pub fn of(&self, row: &MetricRow) -> f64 {
        match self {
            MetricKind::Frechet => row.frechet,
            MetricKind::Kmmd => row.kmmd,
            MetricKind::Coverage => row.coverage,
            MetricKind::Quality => row.quality,
        }
    }
}

impl RunRecord {
    pub fn new(run_id: impl Into<String>, target_classes: Vec<usize>) -> Self {
        RunRecord { run_id: run_id.into(), target_classes, points: Vec::new() }
    }

    /// Appends an eval point; iterations must be strictly increasing.
    pub fn push(&mut self, point: EvalPoint) {
        if let Some(last) = self.points.last() {
            assert!(
                point.iteration > last.iteration,
                "eval iterations must be strictly increasing ({} after {})",
                point.iteration,
                last.iteration
            );
        }
        self.points.push(point);
    }

    /// Mean of `metric` over this point's target-class rows.
    pub fn mean_target(&self, point: &EvalPoint, metric: MetricKind) -> f64 {
        let vals: Vec<f64> = point
            .rows
            .iter()
            .filter(|r| self.target_classes.contains(&r.class_id))
            .map(|r| metric.of(r))
            .collect();
        if vals.is_empty() {
            f64::NAN
        } else {
            vals.iter().sum::<f64>() / vals.len() as f64
        }
    }

    /// `(iteration, value)` of the best (lowest) mean target metric.
    pub fn best_mean_target(&self, metric: MetricKind) -> Option<(u64, f64)> {
        let mut best: Option<(u64, f64)> = None;
        for p in &self.points {
            let v = self.mean_target(p, metric);
            if v.is_nan() {
                continue;
            }
            if best.map_or(true, |(_, bv)| v < bv) {
                best = Some((p.iteration, v));
            }
        }
        best
    }

    /// CSV: metric-row columns plus the loss columns.
    pub fn to_csv(&self) -> String {
        let mut s = format!("{METRIC_CSV_HEADER},d_loss,g_loss\n");
        for p in &self.points {
            for row in &p.rows {
                s.push_str(&row.csv_line());
                s.push_str(&format!(",{:?},{:?}\n", p.d_loss, p.g_loss));
            }
        }
        s
    }

    /// Parses a record CSV written by [`RunRecord::to_csv`].
    pub fn from_csv(text: &str, target_classes: Vec<usize>) -> Result<RunRecord, TrainError> {
        let mut record = RunRecord::new(String::new(), target_classes);
        let mut current: Option<EvalPoint> = None;
        for (lineno, line) in text.lines().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 9 {
                return Err(TrainError::RecordParse {
                    line: lineno + 1,
                    detail: format!("expected 9 fields, got {}", fields.len()),
                });
            }
            let bad = |what: &str| TrainError::RecordParse {
                line: lineno + 1,
                detail: format!("bad {what}"),
            };
            let row = MetricRow {
                run_id: fields[0].to_string(),
                iteration: fields[1].parse().map_err(|_| bad("iteration"))?,
                class_id: fields[2].parse().map_err(|_| bad("class_id"))?,
                frechet: fields[3].parse().map_err(|_| bad("frechet"))?,
                kmmd: fields[4].parse().map_err(|_| bad("kmmd"))?,
                coverage: fields[5].parse().map_err(|_| bad("coverage"))?,
                quality: fields[6].parse().map_err(|_| bad("quality"))?,
            };
            let d_loss: f64 = fields[7].parse().map_err(|_| bad("d_loss"))?;
            let g_loss: f64 = fields[8].parse().map_err(|_| bad("g_loss"))?;
            record.run_id = row.run_id.clone();
            match &mut current {
                Some(p) if p.iteration == row.iteration => p.rows.push(row),
                Some(p) => {
                    let done = std::mem::replace(
                        p,
                        EvalPoint {
                            iteration: row.iteration,
                            rows: vec![row],
                            d_loss,
                            g_loss,
                            wall_secs: 0.0,
                        },
                    );
                    record.push(done);
                }
                None => {
                    current = Some(EvalPoint {
                        iteration: row.iteration,
                        rows: vec![row],
                        d_loss,
                        g_loss,
                        wall_secs: 0.0,
                    });
                }
            }
        }
        if let Some(p) = current {
            record.push(p);
        }
        Ok(record)
    }
}

/// First eval iteration whose mean target-class `metric` is <= `tau`;
/// `None` when never reached.
pub fn iterations_to_threshold(
    record: &RunRecord,
    metric: &str,
    tau: f64,
) -> Result<Option<u64>, TrainError> {
    let kind = MetricKind::parse(metric)?;
    for p in &record.points {
        let v = record.mean_target(p, kind);
        if !v.is_nan() && v <= tau {
            return Ok(Some(p.iteration));
        }
    }
    Ok(None)
}
