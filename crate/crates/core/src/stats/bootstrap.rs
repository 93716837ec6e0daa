use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{aggregate, Statistic, StatsError};
use crate::dataset::CharacterSpec;
use crate::exec::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 2000,
            level: 0.95,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), StatsError> {
        if self.replicates < 100 {
            return Err(StatsError::InvalidConfig(format!("replicates must be >= 100, got {}", self.replicates)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(StatsError::InvalidConfig(format!("level must lie in (0, 1), got {}", self.level)));
        }
        Ok(())
    }
}

/// Point estimate with a percentile bootstrap interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub point: f64,
    pub low: f64,
    pub high: f64,
    /// Mean of the replicate statistics.
    pub replicate_mean: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfilePoint {
    pub tau: f64,
    pub fraction: f64,
    pub low: f64,
    pub high: f64,
}

fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

/// Equal-tailed percentile interval at `level`, with linear interpolation
/// between order statistics.
pub fn percentile_interval(samples: &[f64], level: f64) -> (f64, f64) {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    (quantile_sorted(&s, tail), quantile_sorted(&s, 1.0 - tail))
}

fn check_strata(strata: &[Vec<f64>]) -> Result<(), StatsError> {
    if strata.is_empty() || strata.iter().any(Vec::is_empty) {
        return Err(StatsError::Empty);
    }
    Ok(())
}

/// Evaluates `f` on `cfg.replicates` stratified resamples of `strata`.
///
/// Every replicate redraws each stratum with replacement at its own size.
/// Replicate `r` draws from the ChaCha stream `r` of `cfg.seed`, so the output
/// does not depend on `exec`.
pub fn stratified_replicates<T, F>(strata: &[Vec<f64>], cfg: &BootstrapConfig, exec: Exec, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(&[Vec<f64>]) -> T + Sync + Send,
{
    exec.map_range(cfg.replicates, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(r as u64);
        let resample: Vec<Vec<f64>> = strata
            .iter()
            .map(|s| (0..s.len()).map(|_| s[rng.gen_range(0..s.len())]).collect())
            .collect();
        f(&resample)
    })
}

fn interval(point: f64, reps: &[f64], level: f64) -> Interval {
    let (low, high) = percentile_interval(reps, level);
    Interval {
        point,
        low,
        high,
        replicate_mean: reps.iter().sum::<f64>() / reps.len() as f64,
    }
}

/// `statistic` on the pooled sample with a task-stratified bootstrap interval.
pub fn stratified_bootstrap_ci(
    strata: &[Vec<f64>],
    statistic: Statistic,
    cfg: &BootstrapConfig,
    exec: Exec,
) -> Result<Interval, StatsError> {
    cfg.validate()?;
    check_strata(strata)?;
    let pooled = |s: &[Vec<f64>]| aggregate(&s.concat(), statistic);
    let reps = stratified_replicates(strata, cfg, exec, pooled);
    Ok(interval(pooled(strata), &reps, cfg.level))
}

fn profile_at(strata: &[Vec<f64>], taus: &[f64]) -> Vec<f64> {
    taus.iter()
        .map(|&tau| {
            strata
                .iter()
                .map(|s| s.iter().filter(|&&v| v > tau).count() as f64 / s.len() as f64)
                .sum::<f64>()
                / strata.len() as f64
        })
        .collect()
}

/// Task-averaged fraction of values strictly above each `tau`.
pub fn performance_profile(
    strata: &[Vec<f64>],
    taus: &[f64],
    cfg: &BootstrapConfig,
    exec: Exec,
) -> Result<Vec<ProfilePoint>, StatsError> {
    cfg.validate()?;
    check_strata(strata)?;
    let point = profile_at(strata, taus);
    let reps = stratified_replicates(strata, cfg, exec, |s| profile_at(s, taus));
    Ok(taus
        .iter()
        .enumerate()
        .map(|(i, &tau)| {
            let col: Vec<f64> = reps.iter().map(|r| r[i]).collect();
            let (low, high) = percentile_interval(&col, cfg.level);
            ProfilePoint {
                tau,
                fraction: point[i],
                low,
                high,
            }
        })
        .collect())
}

/// `P(X > Y)` over all pairs, ties counted half.
pub fn probability_of_improvement_point(x: &[f64], y: &[f64]) -> f64 {
    // Integer half-counts keep P(X>Y) + P(Y>X) = 1 exact.
    let mut twice_wins = 0u64;
    for a in x {
        for b in y {
            twice_wins += if a > b { 2 } else if a == b { 1 } else { 0 };
        }
    }
    twice_wins as f64 / (2 * x.len() * y.len()) as f64
}

fn mean_poi(strata: &[Vec<f64>]) -> f64 {
    let k = strata.len() / 2;
    (0..k).map(|i| probability_of_improvement_point(&strata[i], &strata[k + i])).sum::<f64>() / k as f64
}

/// Task-averaged probability that a run of `x` beats a run of `y`, with a
/// bootstrap interval that resamples both algorithms within every task.
pub fn probability_of_improvement(
    x: &BTreeMap<CharacterSpec, Vec<f64>>,
    y: &BTreeMap<CharacterSpec, Vec<f64>>,
    cfg: &BootstrapConfig,
    exec: Exec,
) -> Result<Interval, StatsError> {
    cfg.validate()?;
    if !x.keys().eq(y.keys()) {
        let names = |m: &BTreeMap<CharacterSpec, Vec<f64>>| m.keys().map(|t| t.to_string()).collect::<Vec<_>>().join(",");
        return Err(StatsError::MismatchedTasks(format!("[{}] vs [{}]", names(x), names(y))));
    }
    let strata: Vec<Vec<f64>> = x.values().chain(y.values()).cloned().collect();
    check_strata(&strata)?;
    let reps = stratified_replicates(&strata, cfg, exec, mean_poi);
    Ok(interval(mean_poi(&strata), &reps, cfg.level))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::entries;

    fn cfg(b: usize) -> BootstrapConfig {
        BootstrapConfig {
            replicates: b,
            level: 0.95,
            seed: 7,
        }
    }

    #[test]
    fn poi_oracles() {
        assert_eq!(probability_of_improvement_point(&[1.0, 2.0], &[0.0, 3.0]), 0.5);
        assert_eq!(probability_of_improvement_point(&[1.0, 2.0], &[1.0, 2.0]), 0.5);
        assert_eq!(probability_of_improvement_point(&[5.0, 6.0], &[1.0, 2.0]), 1.0);
        let t = entries()[0].task;
        let x = BTreeMap::from([(t, vec![1.0, 2.0])]);
        let y = BTreeMap::from([(t, vec![0.0, 3.0])]);
        let r = probability_of_improvement(&x, &y, &cfg(200), Exec::Sequential).unwrap();
        assert_eq!(r.point, 0.5);
        let z = BTreeMap::from([(entries()[1].task, vec![0.0])]);
        assert!(matches!(
            probability_of_improvement(&x, &z, &cfg(200), Exec::Sequential),
            Err(StatsError::MismatchedTasks(_))
        ));
    }

    #[test]
    fn constant_sample_and_determinism() {
        let strata = vec![vec![3.0; 5], vec![3.0; 2]];
        for s in [Statistic::Mean, Statistic::Median, Statistic::Iqm] {
            let r = stratified_bootstrap_ci(&strata, s, &cfg(100), Exec::Parallel).unwrap();
            assert_eq!((r.point, r.low, r.high), (3.0, 3.0, 3.0));
        }
        let strata = vec![vec![1.0, 4.0, 2.0, 8.0], vec![0.0, 3.0, 9.0]];
        let a = stratified_bootstrap_ci(&strata, Statistic::Iqm, &cfg(500), Exec::Parallel).unwrap();
        let b = stratified_bootstrap_ci(&strata, Statistic::Iqm, &cfg(500), Exec::Sequential).unwrap();
        assert_eq!(a, b);
        assert!(a.low >= 0.0 && a.high <= 9.0 && a.low <= a.high);
    }

    #[test]
    fn replicates_keep_stratum_sizes() {
        let strata = vec![vec![1.0; 3], vec![2.0; 7], vec![3.0]];
        let sizes = stratified_replicates(&strata, &cfg(100), Exec::Parallel, |s| s.iter().map(Vec::len).collect::<Vec<_>>());
        assert!(sizes.iter().all(|v| v == &[3, 7, 1]));
    }

    #[test]
    fn profile_shape() {
        let strata = vec![vec![0.5, 1.5]];
        let p = performance_profile(&strata, &[-1.0, 1.0, 2.0], &cfg(100), Exec::Sequential).unwrap();
        let f: Vec<f64> = p.iter().map(|p| p.fraction).collect();
        assert_eq!(f, vec![1.0, 0.5, 0.0]);
    }

    #[test]
    fn config_checks() {
        assert!(cfg(99).validate().is_err());
        assert!(BootstrapConfig { level: 1.0, ..cfg(100) }.validate().is_err());
        assert!(stratified_bootstrap_ci(&[], Statistic::Mean, &cfg(100), Exec::Sequential).is_err());
        assert_eq!(percentile_interval(&[0.0, 10.0], 0.5), (2.5, 7.5));
    }
}
