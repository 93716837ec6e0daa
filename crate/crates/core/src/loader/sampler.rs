use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DatasetHandle, LoaderError};
use crate::dataset::SCREEN_CELLS;
use crate::exec::Exec;
use crate::store::Field;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PadPolicy {
    /// Only windows with a full `L + 1` observation span are drawn.
    #[default]
    RejectShort,
    /// Episodes shorter than the window start at step 0 and are right-padded by
    /// repeating the terminal step, with `mask = 0` on padded positions.
    LeftClamp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub batch_size: usize,
    pub seq_len: usize,
    pub seed: u64,
    pub pad_policy: PadPolicy,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            batch_size: 64,
            seq_len: 16,
            seed: 0,
            pad_policy: PadPolicy::RejectShort,
        }
    }
}

impl SamplerConfig {
    pub fn new(batch_size: usize, seq_len: usize, seed: u64) -> Self {
        SamplerConfig {
            batch_size,
            seq_len,
            seed,
            pad_policy: PadPolicy::RejectShort,
        }
    }

    fn check(&self) -> Result<(), LoaderError> {
        if self.batch_size == 0 || self.seq_len == 0 {
            return Err(LoaderError::InvalidConfig("batch size and sequence length must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// A `[B, L]` block of aligned transitions. Observation arrays carry `L + 1`
/// steps per row; the last one is the bootstrap successor of step `L - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceBatch {
    pub batch_size: usize,
    pub seq_len: usize,
    /// `[B, L+1, 24, 80]`
    pub tty_chars: Vec<u8>,
    /// `[B, L+1, 24, 80]`
    pub tty_colors: Vec<i8>,
    /// `[B, L+1, 2]`
    pub tty_cursor: Vec<i16>,
    /// `[B, L+1]`; action taken before each observation, 0 at episode start.
    pub prev_actions: Vec<u8>,
    /// `[B, L]`
    pub actions: Vec<u8>,
    /// `[B, L]`
    pub rewards: Vec<i32>,
    /// `[B, L]`
    pub dones: Vec<u8>,
    /// `[B, L]`; 0 marks padding (only under `LeftClamp`).
    pub mask: Vec<u8>,
    /// `[B]`
    pub episode_ids: Vec<usize>,
    /// `[B]` window start step within its episode.
    pub offsets: Vec<usize>,
}

impl SequenceBatch {
    pub fn obs_len(&self) -> usize {
        self.seq_len + 1
    }

    pub fn chars_shape(&self) -> [usize; 4] {
        [self.batch_size, self.seq_len + 1, 24, 80]
    }

    pub fn step_shape(&self) -> [usize; 2] {
        [self.batch_size, self.seq_len]
    }

    /// Screen of row `b`, observation position `t`.
    pub fn chars_at(&self, b: usize, t: usize) -> &[u8] {
        let i = (b * self.obs_len() + t) * SCREEN_CELLS;
        &self.tty_chars[i..i + SCREEN_CELLS]
    }

    pub fn colors_at(&self, b: usize, t: usize) -> &[i8] {
        let i = (b * self.obs_len() + t) * SCREEN_CELLS;
        &self.tty_colors[i..i + SCREEN_CELLS]
    }

    pub fn cursor_at(&self, b: usize, t: usize) -> [i16; 2] {
        let i = (b * self.obs_len() + t) * 2;
        [self.tty_cursor[i], self.tty_cursor[i + 1]]
    }
}

/// Window plan for one batch row.
#[derive(Debug, Clone, Copy)]
struct Window {
    episode: usize,
    start: usize,
    /// Real steps available from `start` (≤ L + 1).
    real: usize,
}

/// Cumulative window counts per episode for weighted episode selection.
fn window_weights(lengths: &[usize], cfg: &SamplerConfig) -> Result<Vec<u64>, LoaderError> {
    if lengths.is_empty() {
        return Err(LoaderError::EmptyDataset);
    }
    let l = cfg.seq_len;
    let mut cum = Vec::with_capacity(lengths.len());
    let mut acc = 0u64;
    for &t in lengths {
        let w = match cfg.pad_policy {
            PadPolicy::RejectShort => t.saturating_sub(l),
            PadPolicy::LeftClamp if t >= 2 => t.saturating_sub(l).max(1),
            PadPolicy::LeftClamp => 0,
        };
        acc += w as u64;
        cum.push(acc);
    }
    if acc == 0 {
        return Err(match cfg.pad_policy {
            PadPolicy::RejectShort => LoaderError::AllEpisodesTooShort { seq_len: l },
            PadPolicy::LeftClamp => LoaderError::EmptyDataset,
        });
    }
    Ok(cum)
}

fn plan_windows(lengths: &[usize], cfg: &SamplerConfig, call_index: u64) -> Result<Vec<Window>, LoaderError> {
    cfg.check()?;
    let cum = window_weights(lengths, cfg)?;
    let total = *cum.last().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(call_index);
    Ok((0..cfg.batch_size)
        .map(|_| {
            let u = rng.gen_range(0..total);
            let episode = cum.partition_point(|&c| c <= u);
            let before = if episode == 0 { 0 } else { cum[episode - 1] };
            let t = lengths[episode];
            let start = if t > cfg.seq_len { (u - before) as usize } else { 0 };
            Window {
                episode,
                start,
                real: (t - start).min(cfg.seq_len + 1),
            }
        })
        .collect())
}

struct Row {
    chars: Vec<u8>,
    colors: Vec<u8>,
    cursor: Vec<u8>,
    actions: Vec<u8>,
    rewards: Vec<u8>,
    dones: Vec<u8>,
    prev_action: u8,
}

fn pad_repeat(buf: &mut Vec<u8>, step_bytes: usize, target_steps: usize) {
    let last = buf[buf.len() - step_bytes..].to_vec();
    while buf.len() < target_steps * step_bytes {
        buf.extend_from_slice(&last);
    }
}

fn gather_row(handle: &DatasetHandle, w: Window, l: usize) -> Result<Row, LoaderError> {
    let mut row = Row {
        chars: Vec::with_capacity((l + 1) * SCREEN_CELLS),
        colors: Vec::with_capacity((l + 1) * SCREEN_CELLS),
        cursor: Vec::with_capacity((l + 1) * 4),
        actions: Vec::with_capacity(l + 1),
        rewards: Vec::with_capacity(4 * l),
        dones: Vec::with_capacity(l),
        prev_action: 0,
    };
    handle.copy_field(Field::TtyChars, w.episode, w.start, w.real, &mut row.chars)?;
    handle.copy_field(Field::TtyColors, w.episode, w.start, w.real, &mut row.colors)?;
    handle.copy_field(Field::TtyCursor, w.episode, w.start, w.real, &mut row.cursor)?;
    let steps = w.real.min(l);
    handle.copy_field(Field::Actions, w.episode, w.start, steps, &mut row.actions)?;
    handle.copy_field(Field::Rewards, w.episode, w.start, steps, &mut row.rewards)?;
    handle.copy_field(Field::Dones, w.episode, w.start, steps, &mut row.dones)?;
    if w.start > 0 {
        let mut prev = Vec::with_capacity(1);
        handle.copy_field(Field::Actions, w.episode, w.start - 1, 1, &mut prev)?;
        row.prev_action = prev[0];
    }
    if w.real < l + 1 {
        pad_repeat(&mut row.chars, SCREEN_CELLS, l + 1);
        pad_repeat(&mut row.colors, SCREEN_CELLS, l + 1);
        pad_repeat(&mut row.cursor, 4, l + 1);
    }
    Ok(row)
}

/// Draws a batch of windows. The draw depends only on `(cfg.seed, call_index)`
/// and the episode lengths, so every loader mode returns identical batches.
pub fn sample_sequences_with(
    handle: &DatasetHandle,
    cfg: &SamplerConfig,
    call_index: u64,
    exec: Exec,
) -> Result<SequenceBatch, LoaderError> {
    if handle.is_closed() {
        return Err(LoaderError::Closed);
    }
    let windows = plan_windows(handle.episode_lengths(), cfg, call_index)?;
    let l = cfg.seq_len;
    let rows = exec.map_slice(&windows, |&w| gather_row(handle, w, l));
    let b = cfg.batch_size;
    let mut batch = SequenceBatch {
        batch_size: b,
        seq_len: l,
        tty_chars: Vec::with_capacity(b * (l + 1) * SCREEN_CELLS),
        tty_colors: Vec::with_capacity(b * (l + 1) * SCREEN_CELLS),
        tty_cursor: Vec::with_capacity(b * (l + 1) * 2),
        prev_actions: Vec::with_capacity(b * (l + 1)),
        actions: Vec::with_capacity(b * l),
        rewards: Vec::with_capacity(b * l),
        dones: Vec::with_capacity(b * l),
        mask: Vec::with_capacity(b * l),
        episode_ids: windows.iter().map(|w| w.episode).collect(),
        offsets: windows.iter().map(|w| w.start).collect(),
    };
    for (row, w) in rows.into_iter().zip(&windows) {
        let row = row?;
        let steps = row.actions.len();
        batch.tty_chars.extend_from_slice(&row.chars);
        batch.tty_colors.extend(row.colors.iter().map(|&v| v as i8));
        batch.tty_cursor.extend(
            row.cursor
                .chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]])),
        );
        batch.prev_actions.push(row.prev_action);
        batch.prev_actions.extend_from_slice(&row.actions);
        // Padded positions repeat the terminal action so prev_actions stays L+1 long.
        let last_action = *row.actions.last().unwrap();
        batch.prev_actions.extend(std::iter::repeat_n(last_action, l - steps));
        batch.actions.extend_from_slice(&row.actions);
        batch.actions.extend(std::iter::repeat_n(0, l - steps));
        batch.rewards.extend(
            row.rewards
                .chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap())),
        );
        batch.rewards.extend(std::iter::repeat_n(0, l - steps));
        batch.dones.extend_from_slice(&row.dones);
        batch.dones.extend(std::iter::repeat_n(1, l - steps));
        batch.mask.extend(std::iter::repeat_n(1, steps));
        batch.mask.extend(std::iter::repeat_n(0, l - steps));
        debug_assert!(w.real <= l + 1);
    }
    Ok(batch)
}

pub fn sample_sequences(handle: &DatasetHandle, cfg: &SamplerConfig, call_index: u64) -> Result<SequenceBatch, LoaderError> {
    sample_sequences_with(handle, cfg, call_index, Exec::default())
}

/// Replay-buffer style sampler: each call draws a fresh, independently seeded batch.
pub struct SequenceSampler<'a> {
    handle: &'a DatasetHandle,
    cfg: SamplerConfig,
    calls: u64,
    exec: Exec,
}

impl<'a> SequenceSampler<'a> {
    pub fn new(handle: &'a DatasetHandle, cfg: SamplerConfig) -> Self {
        SequenceSampler {
            handle,
            cfg,
            calls: 0,
            exec: Exec::default(),
        }
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn config(&self) -> &SamplerConfig {
        &self.cfg
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }

    pub fn next_batch(&mut self) -> Result<SequenceBatch, LoaderError> {
        let b = sample_sequences_with(self.handle, &self.cfg, self.calls, self.exec)?;
        self.calls += 1;
        Ok(b)
    }
}

/// One epoch: `ceil(total_transitions / (B * L))` batches.
pub struct EpochIter<'a> {
    sampler: SequenceSampler<'a>,
    remaining: usize,
}

pub fn iterate_epoch<'a>(handle: &'a DatasetHandle, cfg: &SamplerConfig) -> EpochIter<'a> {
    let per_batch = (cfg.batch_size * cfg.seq_len).max(1) as u64;
    let remaining = handle.total_transitions().div_ceil(per_batch) as usize;
    EpochIter {
        sampler: SequenceSampler::new(handle, cfg.clone()),
        remaining,
    }
}

impl Iterator for EpochIter<'_> {
    type Item = Result<SequenceBatch, LoaderError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.remaining == 0 {
            return None;
        }
        self.remaining -= 1;
        Some(self.sampler.next_batch())
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        (self.remaining, Some(self.remaining))
    }
}

impl ExactSizeIterator for EpochIter<'_> {}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loader::tests::tmp_store;
    use crate::loader::{load, LoaderMode};
    use crate::store::{open_store, write_store, Compression};
    use crate::synth::synthetic_episode;

    #[test]
    fn single_admissible_window() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.ktb");
        write_store(&p, &[synthetic_episode(17, 3)], Compression::None).unwrap();
        let h = load(&p, LoaderMode::InMemory).unwrap();
        let b = sample_sequences(&h, &SamplerConfig::new(5, 16, 0), 0).unwrap();
        assert!(b.offsets.iter().all(|&o| o == 0));
        assert!(b.dones.iter().all(|&d| d == 0));
        let e = open_store(&p).unwrap().read_episode(0).unwrap();
        for r in 0..5 {
            assert_eq!(&b.actions[r * 16..(r + 1) * 16], &e.actions[..16]);
            assert_eq!(b.chars_at(r, 16), e.chars_at(16));
        }
    }

    #[test]
    fn shapes_for_default_config() {
        let (_d, p) = tmp_store(6, 20, 60, 1);
        let h = load(&p, LoaderMode::InMemory).unwrap();
        let b = sample_sequences(&h, &SamplerConfig::new(64, 16, 0), 0).unwrap();
        assert_eq!(b.chars_shape(), [64, 17, 24, 80]);
        assert_eq!(b.tty_chars.len(), 64 * 17 * 1920);
        assert_eq!(b.tty_colors.len(), 64 * 17 * 1920);
        assert_eq!(b.tty_cursor.len(), 64 * 17 * 2);
        assert_eq!(b.prev_actions.len(), 64 * 17);
        assert_eq!(b.step_shape(), [64, 16]);
        assert_eq!(b.actions.len(), 64 * 16);
        assert_eq!(b.rewards.len(), 64 * 16);
        assert_eq!(b.dones.len(), 64 * 16);
    }

    #[test]
    fn windows_align_with_episodes() {
        let (_d, p) = tmp_store(5, 3, 30, 2);
        let store = open_store(&p).unwrap();
        let eps: Vec<_> = (0..5).map(|i| store.read_episode(i).unwrap()).collect();
        let h = load(&p, LoaderMode::CompressedOnRead).unwrap();
        let l = 4;
        let b = sample_sequences(&h, &SamplerConfig::new(32, l, 7), 3).unwrap();
        for r in 0..32 {
            let e = &eps[b.episode_ids[r]];
            let s = b.offsets[r];
            assert!(s + l < e.len());
            for t in 0..=l {
                assert_eq!(b.chars_at(r, t), e.chars_at(s + t));
                assert_eq!(b.cursor_at(r, t), e.tty_cursor[s + t]);
                let prev = if s + t == 0 { 0 } else { e.actions[s + t - 1] };
                assert_eq!(b.prev_actions[r * (l + 1) + t], prev);
            }
            for t in 0..l {
                assert_eq!(b.actions[r * l + t], e.actions[s + t]);
                assert_eq!(b.rewards[r * l + t], e.rewards[s + t]);
                assert_eq!(b.dones[r * l + t], e.dones[s + t]);
            }
        }
    }

    #[test]
    fn deterministic_per_seed_and_call() {
        let (_d, p) = tmp_store(5, 10, 30, 2);
        let h = load(&p, LoaderMode::InMemory).unwrap();
        let cfg = SamplerConfig::new(8, 4, 9);
        assert_eq!(sample_sequences(&h, &cfg, 2).unwrap(), sample_sequences(&h, &cfg, 2).unwrap());
        assert_ne!(
            sample_sequences(&h, &cfg, 2).unwrap().offsets,
            sample_sequences(&h, &cfg, 3).unwrap().offsets
        );
        let seq = sample_sequences_with(&h, &cfg, 5, Exec::Sequential).unwrap();
        assert_eq!(seq, sample_sequences_with(&h, &cfg, 5, Exec::Parallel).unwrap());
    }

    #[test]
    fn short_episodes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("short.ktb");
        write_store(&p, &[synthetic_episode(3, 1), synthetic_episode(4, 2)], Compression::None).unwrap();
        let h = load(&p, LoaderMode::InMemory).unwrap();
        assert!(matches!(
            sample_sequences(&h, &SamplerConfig::new(2, 8, 0), 0),
            Err(LoaderError::AllEpisodesTooShort { seq_len: 8 })
        ));
        let cfg = SamplerConfig {
            pad_policy: PadPolicy::LeftClamp,
            ..SamplerConfig::new(4, 8, 0)
        };
        let b = sample_sequences(&h, &cfg, 0).unwrap();
        for r in 0..4 {
            let t = if b.episode_ids[r] == 0 { 3 } else { 4 };
            assert_eq!(b.offsets[r], 0);
            let mask = &b.mask[r * 8..(r + 1) * 8];
            assert_eq!(mask.iter().filter(|&&m| m == 1).count(), t);
            assert_eq!(b.dones[r * 8 + t - 1], 1);
            assert_eq!(b.chars_at(r, 8), b.chars_at(r, t - 1));
        }
    }

    #[test]
    fn invalid_config() {
        let (_d, p) = tmp_store(2, 10, 12, 2);
        let h = load(&p, LoaderMode::InMemory).unwrap();
        assert!(matches!(
            sample_sequences(&h, &SamplerConfig::new(0, 4, 0), 0),
            Err(LoaderError::InvalidConfig(_))
        ));
    }

    #[test]
    fn epoch_length() {
        let (_d, p) = tmp_store(4, 10, 40, 3);
        let h = load(&p, LoaderMode::InMemory).unwrap();
        let cfg = SamplerConfig::new(4, 5, 1);
        let expected = h.total_transitions().div_ceil(20) as usize;
        let mut it = iterate_epoch(&h, &cfg);
        assert_eq!(it.len(), expected);
        assert_eq!(it.by_ref().filter(|b| b.is_ok()).count(), expected);
        assert!(it.next().is_none());
    }

    #[test]
    fn closed_handle_refuses_sampling() {
        let (_d, p) = tmp_store(2, 10, 12, 2);
        let mut h = load(&p, LoaderMode::Memmap).unwrap();
        h.close().unwrap();
        assert!(matches!(
            sample_sequences(&h, &SamplerConfig::new(2, 4, 0), 0),
            Err(LoaderError::Closed)
        ));
    }
}
