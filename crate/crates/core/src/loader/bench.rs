use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use super::{load_with, LoadOptions, LoaderError, LoaderMode, SamplerConfig, SequenceSampler};

/// Timed draws per mode before rotating to the next.
const BLOCK: usize = 25;

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub mode: LoaderMode,
    pub batch_size: usize,
    pub seq_len: usize,
    pub iterations: usize,
    pub load_secs: f64,
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchTable {
    pub rows: Vec<BenchRow>,
}

impl BenchTable {
    pub fn get(&self, mode: LoaderMode, batch_size: usize, seq_len: usize) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.mode == mode && r.batch_size == batch_size && r.seq_len == seq_len)
    }

    /// One row per `(B, L)` config and one mean-latency column (ms) per mode.
    pub fn to_csv(&self) -> String {
        let mut modes: Vec<LoaderMode> = Vec::new();
        let mut configs: Vec<(usize, usize)> = Vec::new();
        for r in &self.rows {
            if !modes.contains(&r.mode) {
                modes.push(r.mode);
            }
            if !configs.contains(&(r.batch_size, r.seq_len)) {
                configs.push((r.batch_size, r.seq_len));
            }
        }
        let mut out = String::from("variant");
        for m in &modes {
            out.push_str(&format!(",{}_ms", m.name()));
        }
        out.push('\n');
        for (b, l) in configs {
            out.push_str(&format!("\"batch_size={b}, seq_len={l}\""));
            for m in &modes {
                match self.get(*m, b, l) {
                    Some(r) => out.push_str(&format!(",{:.4}", r.mean_ms)),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Mean per-batch sampling latency for each mode and `(B, L)` config.
///
/// All modes are loaded up front (load time reported separately). Timed draws
/// rotate across modes in short blocks, so clock drift and background load hit
/// every mode alike. Memory-mapped artifacts are
/// cleaned up before returning.
pub fn benchmark_loader(
    store_path: &Path,
    modes: &[LoaderMode],
    configs: &[(usize, usize)],
    iterations: usize,
    seed: u64,
) -> Result<BenchTable, LoaderError> {
    let mut handles = Vec::with_capacity(modes.len());
    for &mode in modes {
        let t0 = Instant::now();
        let handle = load_with(store_path, mode, &LoadOptions::default())?;
        handles.push((handle, t0.elapsed().as_secs_f64()));
    }
    let mut rows = Vec::new();
    for &(b, l) in configs {
        let mut samplers: Vec<_> = handles
            .iter()
            .map(|(h, _)| SequenceSampler::new(h, SamplerConfig::new(b, l, seed)))
            .collect();
        let mut times = vec![Vec::with_capacity(iterations); samplers.len()];
        let mut remaining = iterations;
        while remaining > 0 {
            let block = remaining.min(BLOCK);
            for (s, t_mode) in samplers.iter_mut().zip(&mut times) {
                // Untimed draw so no mode inherits caches another mode just evicted.
                std::hint::black_box(s.next_batch()?);
                for _ in 0..block {
                    let t = Instant::now();
                    let batch = s.next_batch()?;
                    t_mode.push(t.elapsed().as_secs_f64() * 1e3);
                    std::hint::black_box(&batch);
                }
            }
            remaining -= block;
        }
        for ((&mode, (_, load_secs)), times) in modes.iter().zip(&handles).zip(times) {
            let n = times.len().max(1) as f64;
            rows.push(BenchRow {
                mode,
                batch_size: b,
                seq_len: l,
                iterations,
                load_secs: *load_secs,
                mean_ms: times.iter().sum::<f64>() / n,
                min_ms: times.iter().cloned().fold(f64::INFINITY, f64::min),
                max_ms: times.iter().cloned().fold(0.0, f64::max),
            });
        }
    }
    for (mut handle, _) in handles {
        handle.close()?;
    }
    Ok(BenchTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loader::tests::tmp_store;

    #[test]
    fn table_has_one_row_per_mode_and_config() {
        let (_d, p) = tmp_store(4, 40, 60, 1);
        let t = benchmark_loader(&p, &LoaderMode::ALL, &[(4, 8), (2, 16)], 3, 0).unwrap();
        assert_eq!(t.rows.len(), 6);
        let csv = t.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], "variant,in_memory_ms,memmap_ms,compressed_ms");
        assert!(lines[1].starts_with("\"batch_size=4, seq_len=8\","));
        assert_eq!(lines.len(), 3);
        assert!(!crate::loader::artifact_path(&p).exists());
    }
}
