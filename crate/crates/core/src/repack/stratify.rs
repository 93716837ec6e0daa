use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::RepackError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrataPlan {
    pub n_strata: usize,
    pub target_episodes: usize,
    pub seed: u64,
}

impl Default for StrataPlan {
    fn default() -> Self {
        StrataPlan {
            n_strata: 10,
            target_episodes: 680,
            seed: 0,
        }
    }
}

/// Result of a stratified selection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    /// Selected positions into the input score list, ascending.
    pub ids: Vec<usize>,
    /// Score quantile edges, `n_strata + 1` values, monotone.
    pub boundaries: Vec<f64>,
    /// Per-stratum episode quotas; they sum to the target.
    pub quotas: Vec<usize>,
}

/// Assigns each position to a stratum by rank: the population sorted by score
/// (ties broken by position) is cut into `n_strata` contiguous, near-equal bins.
fn rank_bins(scores: &[i64], n_strata: usize) -> Vec<Vec<usize>> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (scores[i], i));
    let mut bins = vec![Vec::new(); n_strata];
    for (rank, &i) in order.iter().enumerate() {
        bins[rank * n_strata / n].push(i);
    }
    bins
}

/// Largest-remainder apportionment of `target` over bins of the given sizes,
/// so each quota is `round(target * mass)` up to the rounding needed to sum
/// exactly to `target`.
fn apportion(sizes: &[usize], target: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let mut quotas: Vec<usize> = sizes.iter().map(|&s| s * target / total).collect();
    let mut remainders: Vec<(usize, usize)> = sizes
        .iter()
        .enumerate()
        .map(|(i, &s)| ((s * target) % total, i))
        .collect();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = target - quotas.iter().sum::<usize>();
    for &(_, i) in &remainders {
        if left == 0 {
            break;
        }
        if quotas[i] < sizes[i] {
            quotas[i] += 1;
            left -= 1;
        }
    }
    quotas
}

/// Stratified subsampling by final score: score-quantile bins, quota per bin
/// proportional to its mass, uniform sampling without replacement inside each
/// bin. Deterministic given `plan.seed`.
pub fn subsample_stratified(final_scores: &[i64], plan: &StrataPlan) -> Result<Selection, RepackError> {
    let n = final_scores.len();
    if plan.target_episodes > n {
        return Err(RepackError::TargetExceedsPopulation {
            target: plan.target_episodes,
            population: n,
        });
    }
    if plan.n_strata == 0 {
        return Err(RepackError::InvalidPlan("n_strata must be positive".into()));
    }
    if n == 0 {
        return Ok(Selection {
            ids: Vec::new(),
            boundaries: Vec::new(),
            quotas: Vec::new(),
        });
    }
    let n_strata = plan.n_strata.min(n);
    let bins = rank_bins(final_scores, n_strata);
    let sizes: Vec<usize> = bins.iter().map(Vec::len).collect();
    let quotas = apportion(&sizes, plan.target_episodes);

    let mut boundaries = Vec::with_capacity(n_strata + 1);
    boundaries.push(final_scores[bins[0][0]] as f64);
    for b in &bins {
        boundaries.push(b.iter().map(|&i| final_scores[i]).max().unwrap() as f64);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
    let mut ids = Vec::with_capacity(plan.target_episodes);
    for (bin, &q) in bins.iter().zip(&quotas) {
        ids.extend(sample(&mut rng, bin.len(), q).into_iter().map(|k| bin[k]));
    }
    ids.sort_unstable();
    Ok(Selection {
        ids,
        boundaries,
        quotas,
    })
}

/// Two-sample Kolmogorov–Smirnov statistic between two score samples.
pub fn ks_statistic(a: &[i64], b: &[i64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}
