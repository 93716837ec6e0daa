use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bootstrap::{performance_profile, probability_of_improvement, stratified_bootstrap_ci, BootstrapConfig};
use super::{normalize_mean, normalize_minmax, EvalRecord, EvalRunMatrix, Statistic, StatsError};
use crate::dataset::{catalog_category, CharacterSpec, TaskCategory};
use crate::exec::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalizer {
    MinMax,
    Mean,
}

impl Normalizer {
    pub fn name(self) -> &'static str {
        match self {
            Normalizer::MinMax => "minmax",
            Normalizer::Mean => "mean",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "minmax" | "min_max" => Some(Normalizer::MinMax),
            "mean" => Some(Normalizer::Mean),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    NormalizedScore(Normalizer),
    DeathLevel,
    RawScore,
}

impl Metric {
    pub fn value(self, e: &EvalRecord) -> Result<f64, StatsError> {
        match self {
            Metric::NormalizedScore(Normalizer::MinMax) => normalize_minmax(e.score, e.task),
            Metric::NormalizedScore(Normalizer::Mean) => normalize_mean(e.score, e.task),
            Metric::DeathLevel => Ok(f64::from(e.death_level)),
            Metric::RawScore => Ok(e.score),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::NormalizedScore(_) => "normalized_score",
            Metric::DeathLevel => "death_level",
            Metric::RawScore => "raw_score",
        }
    }

    pub fn normalizer(self) -> Option<Normalizer> {
        match self {
            Metric::NormalizedScore(n) => Some(n),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub metric: Metric,
    pub category: Option<TaskCategory>,
    pub bootstrap: BootstrapConfig,
    /// Profile thresholds; 51 evenly spaced points from 0 to the largest value when `None`.
    pub taus: Option<Vec<f64>>,
    pub gamma0: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            metric: Metric::NormalizedScore(Normalizer::MinMax),
            category: None,
            bootstrap: BootstrapConfig::default(),
            taus: None,
            gamma0: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub algorithm: String,
    pub statistic: &'static str,
    pub point: f64,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileRow {
    pub algorithm: String,
    pub tau: f64,
    pub fraction: f64,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImprovementRow {
    pub x: String,
    pub y: String,
    pub probability: f64,
    pub low: f64,
    pub high: f64,
}

/// Plot-ready evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub metric: &'static str,
    pub normalizer: Option<&'static str>,
    pub category: Option<&'static str>,
    pub tasks: Vec<String>,
    pub bootstrap: BootstrapConfig,
    pub aggregates: Vec<AggregateRow>,
    pub profiles: Vec<ProfileRow>,
    pub improvement: Vec<ImprovementRow>,
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    fn header(&self) -> String {
        format!(
            "# metric={} normalizer={} category={}\n",
            self.metric,
            self.normalizer.unwrap_or("none"),
            self.category.unwrap_or("all")
        )
    }

    pub fn aggregates_csv(&self) -> String {
        let mut s = self.header();
        s.push_str("algorithm,statistic,point,low,high\n");
        for r in &self.aggregates {
            let _ = writeln!(s, "{},{},{},{},{}", r.algorithm, r.statistic, r.point, r.low, r.high);
        }
        s
    }

    pub fn profiles_csv(&self) -> String {
        let mut s = self.header();
        s.push_str("algorithm,tau,fraction,low,high\n");
        for r in &self.profiles {
            let _ = writeln!(s, "{},{},{},{},{}", r.algorithm, r.tau, r.fraction, r.low, r.high);
        }
        s
    }

    pub fn improvement_csv(&self) -> String {
        let mut s = self.header();
        s.push_str("x,y,probability,low,high\n");
        for r in &self.improvement {
            let _ = writeln!(s, "{},{},{},{},{}", r.x, r.y, r.probability, r.low, r.high);
        }
        s
    }

    /// Writes `report.json`, `aggregates.csv`, `profiles.csv` and `improvement.csv`.
    pub fn write_dir(&self, dir: &Path) -> Result<(), StatsError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        std::fs::write(dir.join("aggregates.csv"), self.aggregates_csv())?;
        std::fs::write(dir.join("profiles.csv"), self.profiles_csv())?;
        std::fs::write(dir.join("improvement.csv"), self.improvement_csv())?;
        Ok(())
    }
}

/// Builds a report over all `matrices`, which must cover the same tasks once
/// the category filter is applied.
pub fn report(matrices: &[EvalRunMatrix], opts: &ReportOptions, exec: Exec) -> Result<Report, StatsError> {
    opts.bootstrap.validate()?;
    let mut per_algo: Vec<(String, BTreeMap<CharacterSpec, Vec<f64>>)> = Vec::new();
    for m in matrices {
        m.validate()?;
        let mut values = m.task_values(opts.metric)?;
        if let Some(cat) = opts.category {
            let mut keep = BTreeMap::new();
            for (t, v) in values {
                if catalog_category(t)? == cat {
                    keep.insert(t, v);
                }
            }
            values = keep;
        }
        if values.is_empty() {
            return Err(StatsError::Empty);
        }
        per_algo.push((m.algorithm.clone(), values));
    }
    let Some((_, first)) = per_algo.first() else {
        return Err(StatsError::Empty);
    };
    let tasks: Vec<CharacterSpec> = first.keys().copied().collect();
    for (name, v) in &per_algo {
        if !v.keys().eq(tasks.iter()) {
            return Err(StatsError::MismatchedTasks(format!("{name} vs {}", per_algo[0].0)));
        }
    }

    let taus = opts.taus.clone().unwrap_or_else(|| {
        let top = per_algo
            .iter()
            .flat_map(|(_, v)| v.values().flatten())
            .fold(0.0f64, |a, &b| a.max(b));
        (0..=50).map(|i| top * i as f64 / 50.0).collect()
    });
    let stats = [
        Statistic::Mean,
        Statistic::Median,
        Statistic::Iqm,
        Statistic::OptimalityGap(opts.gamma0),
    ];
    let mut aggregates = Vec::new();
    let mut profiles = Vec::new();
    for (name, values) in &per_algo {
        let strata: Vec<Vec<f64>> = values.values().cloned().collect();
        for s in stats {
            let ci = stratified_bootstrap_ci(&strata, s, &opts.bootstrap, exec)?;
            aggregates.push(AggregateRow {
                algorithm: name.clone(),
                statistic: s.name(),
                point: ci.point,
                low: ci.low,
                high: ci.high,
            });
        }
        for p in performance_profile(&strata, &taus, &opts.bootstrap, exec)? {
            profiles.push(ProfileRow {
                algorithm: name.clone(),
                tau: p.tau,
                fraction: p.fraction,
                low: p.low,
                high: p.high,
            });
        }
    }
    let mut improvement = Vec::new();
    for (xn, xv) in &per_algo {
        for (yn, yv) in &per_algo {
            if xn == yn {
                continue;
            }
            let ci = probability_of_improvement(xv, yv, &opts.bootstrap, exec)?;
            improvement.push(ImprovementRow {
                x: xn.clone(),
                y: yn.clone(),
                probability: ci.point,
                low: ci.low,
                high: ci.high,
            });
        }
    }
    Ok(Report {
        metric: opts.metric.name(),
        normalizer: opts.metric.normalizer().map(Normalizer::name),
        category: opts.category.map(TaskCategory::name),
        tasks: tasks.iter().map(|t| t.to_string()).collect(),
        bootstrap: opts.bootstrap,
        aggregates,
        profiles,
        improvement,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tasks_in;

    fn matrix(name: &str, tasks: &[CharacterSpec], offset: f64) -> EvalRunMatrix {
        let mut entries = Vec::new();
        for &task in tasks {
            for seed in 0..2 {
                for episode in 0..3 {
                    entries.push(EvalRecord {
                        algorithm: Some(name.into()),
                        task,
                        seed,
                        episode,
                        score: offset + 100.0 * (seed * 3 + episode) as f64,
                        death_level: 1 + episode as u32,
                    });
                }
            }
        }
        EvalRunMatrix::new(name, entries).unwrap()
    }

    #[test]
    fn report_bundle() {
        let base: Vec<_> = tasks_in(TaskCategory::Base).take(2).collect();
        let ext: Vec<_> = tasks_in(TaskCategory::Extended).take(1).collect();
        let all: Vec<_> = base.iter().chain(&ext).copied().collect();
        let ms = [matrix("bc", &all, 500.0), matrix("cql", &all, 0.0)];
        let opts = ReportOptions {
            category: Some(TaskCategory::Base),
            bootstrap: BootstrapConfig { replicates: 100, ..Default::default() },
            ..Default::default()
        };
        let r = report(&ms, &opts, Exec::Parallel).unwrap();
        assert_eq!(r.tasks.len(), 2);
        assert_eq!(r.normalizer, Some("minmax"));
        assert_eq!(r.aggregates.len(), 8);
        assert_eq!(r.profiles.len(), 2 * 51);
        assert_eq!(r.improvement.len(), 2);
        assert!(r.improvement[0].probability > 0.5);
        assert!((r.improvement[0].probability + r.improvement[1].probability - 1.0).abs() < 1e-12);
        assert!(r.aggregates_csv().starts_with("# metric=normalized_score normalizer=minmax category=base"));
        let dir = tempfile::tempdir().unwrap();
        r.write_dir(dir.path()).unwrap();
        let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
        assert_eq!(json["metric"], "normalized_score");

        let opts = ReportOptions {
            metric: Metric::DeathLevel,
            ..opts
        };
        let r = report(&ms, &opts, Exec::Sequential).unwrap();
        assert_eq!(r.normalizer, None);

        let short = matrix("iql", &base[..1], 0.0);
        let err = report(&[ms[0].clone(), short], &ReportOptions::default(), Exec::Sequential).unwrap_err();
        assert!(matches!(err, StatsError::MismatchedTasks(_)));
    }
}
