//! Evaluation statistics: score normalization, robust aggregates, stratified
//! bootstrap intervals, performance profiles and probability of improvement.

mod bootstrap;
mod report;

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

pub use bootstrap::{
    percentile_interval, performance_profile, probability_of_improvement, probability_of_improvement_point,
    stratified_bootstrap_ci, stratified_replicates, BootstrapConfig, Interval, ProfilePoint,
};
pub use report::{report, Metric, Normalizer, Report, ReportOptions};

use crate::dataset::{normalization_scores, CharacterSpec, DatasetError};

#[derive(Debug, thiserror::Error)]
pub enum StatsError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("algorithms are compared over different task sets: {0}")]
    MismatchedTasks(String),
    #[error("invalid evaluation record on line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),
    #[error("invalid bootstrap config: {0}")]
    InvalidConfig(String),
    #[error("empty sample")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `100·(score − min)/(max − min)`, clamped below at 0.
pub fn normalize_minmax(score: f64, task: CharacterSpec) -> Result<f64, StatsError> {
    let n = normalization_scores(task)?;
    Ok((100.0 * (score - n.min_score) / (n.max_score - n.min_score)).max(0.0))
}

/// `100·score/mean`, unclamped.
pub fn normalize_mean(score: f64, task: CharacterSpec) -> Result<f64, StatsError> {
    let n = normalization_scores(task)?;
    Ok(100.0 * score / n.mean_score)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "gamma0")]
pub enum Statistic {
    Mean,
    Median,
    /// Mean after trimming ⌊n/4⌋ values from each end of the sorted sample.
    Iqm,
    /// Mean shortfall `max(0, γ₀ − x)`.
    OptimalityGap(f64),
}

impl Statistic {
    pub fn name(self) -> &'static str {
        match self {
            Statistic::Mean => "mean",
            Statistic::Median => "median",
            Statistic::Iqm => "iqm",
            Statistic::OptimalityGap(_) => "optimality_gap",
        }
    }
}

/// Point estimate of `statistic` over `values`. NaN for an empty sample.
pub fn aggregate(values: &[f64], statistic: Statistic) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    match statistic {
        Statistic::Mean => mean(values),
        Statistic::OptimalityGap(g) => values.iter().map(|v| (g - v).max(0.0)).sum::<f64>() / values.len() as f64,
        Statistic::Median | Statistic::Iqm => {
            let mut s = values.to_vec();
            s.sort_by(f64::total_cmp);
            let n = s.len();
            if statistic == Statistic::Median {
                if n % 2 == 1 {
                    s[n / 2]
                } else {
                    0.5 * (s[n / 2 - 1] + s[n / 2])
                }
            } else {
                let k = n / 4;
                mean(&s[k..n - k])
            }
        }
    }
}

/// One evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<String>,
    pub task: CharacterSpec,
    pub seed: u64,
    pub episode: u64,
    pub score: f64,
    pub death_level: u32,
}

/// Evaluation results of one algorithm.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct EvalRunMatrix {
    pub algorithm: String,
    pub entries: Vec<EvalRecord>,
}

impl EvalRunMatrix {
    pub fn new(algorithm: impl Into<String>, entries: Vec<EvalRecord>) -> Result<Self, StatsError> {
        let m = EvalRunMatrix {
            algorithm: algorithm.into(),
            entries,
        };
        m.validate()?;
        Ok(m)
    }

    /// Scores are non-negative, death levels ≥ 1, and every `(task, seed)`
    /// cell holds the same number of episodes.
    pub fn validate(&self) -> Result<(), StatsError> {
        let mut cells: BTreeMap<(CharacterSpec, u64), usize> = BTreeMap::new();
        for e in &self.entries {
            if !(e.score >= 0.0) {
                return Err(StatsError::InvalidMatrix(format!("negative score {} in {}", e.score, e.task)));
            }
            if e.death_level < 1 {
                return Err(StatsError::InvalidMatrix(format!("death level 0 in {}", e.task)));
            }
            *cells.entry((e.task, e.seed)).or_default() += 1;
        }
        let mut counts = cells.values();
        if let Some(first) = counts.next() {
            if counts.any(|c| c != first) {
                return Err(StatsError::InvalidMatrix(format!(
                    "{}: unequal episode counts across (task, seed) cells",
                    self.algorithm
                )));
            }
        }
        Ok(())
    }

    pub fn tasks(&self) -> Vec<CharacterSpec> {
        let mut t: Vec<_> = self.entries.iter().map(|e| e.task).collect();
        t.sort();
        t.dedup();
        t
    }

    /// Per-task samples under `metric`, entries ordered by `(seed, episode)`.
    pub fn task_values(&self, metric: Metric) -> Result<BTreeMap<CharacterSpec, Vec<f64>>, StatsError> {
        let mut sorted: Vec<&EvalRecord> = self.entries.iter().collect();
        sorted.sort_by_key(|e| (e.task, e.seed, e.episode));
        let mut out: BTreeMap<CharacterSpec, Vec<f64>> = BTreeMap::new();
        for e in sorted {
            out.entry(e.task).or_default().push(metric.value(e)?);
        }
        Ok(out)
    }
}

/// Reads JSON-lines records; blank lines are skipped.
pub fn read_records<R: BufRead>(reader: R) -> Result<Vec<EvalRecord>, StatsError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EvalRecord = serde_json::from_str(&line).map_err(|e| StatsError::BadRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Groups records by their `algorithm` field (`default` fills missing names).
pub fn group_by_algorithm(records: Vec<EvalRecord>, default: &str) -> Result<BTreeMap<String, EvalRunMatrix>, StatsError> {
    let mut groups: BTreeMap<String, Vec<EvalRecord>> = BTreeMap::new();
    for r in records {
        let name = r.algorithm.clone().unwrap_or_else(|| default.to_string());
        groups.entry(name).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(k, v)| EvalRunMatrix::new(k.clone(), v).map(|m| (k, m)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::entries;

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[1.0, 2.0, 3.0, 4.0], Statistic::Iqm), 2.5);
        for s in [Statistic::Mean, Statistic::Median, Statistic::Iqm] {
            assert_eq!(aggregate(&[5.0, 5.0, 5.0], s), 5.0);
        }
        assert_eq!(aggregate(&[5.0, 5.0, 5.0], Statistic::OptimalityGap(5.0)), 0.0);
        assert_eq!(aggregate(&[0.0, 10.0], Statistic::OptimalityGap(1.0)), 0.5);
        assert_eq!(aggregate(&[3.0, 1.0, 2.0], Statistic::Median), 2.0);
        assert_eq!(aggregate(&[9.0, 1.0, 2.0, 3.0, 100.0, 4.0, 5.0, 6.0], Statistic::Iqm), 4.5);
    }

    #[test]
    fn normalization_anchors() {
        let arc = CharacterSpec::parse("arc-hum-neu").unwrap();
        assert!((normalize_minmax(138103.0, arc).unwrap() - 100.0).abs() < 1e-9);
        assert_eq!(normalize_minmax(0.0, arc).unwrap(), 0.0);
        assert!((normalize_mean(6636.44, arc).unwrap() - 100.0).abs() < 1e-9);
        let val = CharacterSpec::parse("val-hum-neu").unwrap();
        assert_eq!(normalize_minmax(16.0, val).unwrap(), 0.0);
        let mon = CharacterSpec::parse("mon-hum-neu").unwrap();
        assert!((normalize_mean(17456.05, mon).unwrap() - 100.0).abs() < 1e-9);
        for e in entries() {
            assert!((normalize_mean(e.normalization.mean_score, e.task).unwrap() - 100.0).abs() < 1e-6);
            assert!((normalize_minmax(e.normalization.max_score, e.task).unwrap() - 100.0).abs() < 1e-6);
            assert_eq!(normalize_mean(0.0, e.task).unwrap(), 0.0);
        }
    }

    #[test]
    fn matrix_validation_and_jsonl() {
        let text = r#"{"algorithm":"bc","task":"mon-hum-neu","seed":0,"episode":0,"score":10,"death_level":1}
{"algorithm":"bc","task":"mon-hum-neu","seed":0,"episode":1,"score":30,"death_level":2}

{"task":"mon-hum-neu","seed":1,"episode":0,"score":5,"death_level":1}
"#;
        let recs = read_records(text.as_bytes()).unwrap();
        assert_eq!(recs.len(), 3);
        assert!(group_by_algorithm(recs.clone(), "cql").is_ok());
        let all_bc: Vec<_> = recs.into_iter().map(|mut r| {
            r.algorithm = None;
            r
        }).collect();
        let err = group_by_algorithm(all_bc, "bc").unwrap_err();
        assert!(err.to_string().contains("unequal"));
        assert!(read_records("{\"task\":\"xxx-hum-neu\"}".as_bytes()).is_err());
        let neg = EvalRecord {
            algorithm: None,
            task: CharacterSpec::parse("mon-hum-neu").unwrap(),
            seed: 0,
            episode: 0,
            score: -1.0,
            death_level: 1,
        };
        assert!(EvalRunMatrix::new("x", vec![neg]).is_err());
    }
}
