use crate::dataset::{EpisodeMetadata, EpisodeRecord, SCREEN_CELLS};

use super::RepackError;

/// One step as recorded by the source stream: the observation, the action taken
/// in it, and the reward that arrived *before* it (`r_{t-1}`).
#[derive(Debug, Clone, PartialEq)]
pub struct RawStepTuple {
    pub tty_chars: Vec<u8>,
    pub tty_colors: Vec<i8>,
    pub tty_cursor: [i16; 2],
    pub action: u8,
    pub prev_reward: i32,
    /// Cumulative in-game score at this step.
    pub score: i64,
    pub terminal: bool,
}

/// Potential-based shaping with the cumulative score as potential:
/// `out[t] = scores[t+1] - scores[t]`, and the last step receives `final_delta`.
pub fn shape_rewards(scores: &[i64], final_delta: i64) -> Vec<i32> {
    let mut out: Vec<i32> = scores
        .windows(2)
        .map(|w| (w[1] - w[0]) as i32)
        .collect();
    if !scores.is_empty() {
        out.push(final_delta as i32);
    }
    out
}

/// Rewrites a source stream into reward-follows-action order.
///
/// The reward for step `t` is the score change caused by `actions[t]`, i.e. the
/// source's `prev_reward` of step `t+1` expressed through the score potential.
/// The terminal step's reward is `final_delta` (the score change recorded at
/// death, 0 when the source has none). No step is dropped.
pub fn align_episode(
    raw: &[RawStepTuple],
    final_delta: i64,
    metadata: EpisodeMetadata,
) -> Result<EpisodeRecord, RepackError> {
    let t = raw.len();
    if t == 0 {
        return Err(RepackError::EmptyStream);
    }
    if let Some(pos) = raw[..t - 1].iter().position(|s| s.terminal) {
        return Err(RepackError::NonMonotoneTermination { step: pos, len: t });
    }
    if !raw[t - 1].terminal {
        return Err(RepackError::MissingTerminal);
    }
    let mut tty_chars = Vec::with_capacity(t * SCREEN_CELLS);
    let mut tty_colors = Vec::with_capacity(t * SCREEN_CELLS);
    for (i, s) in raw.iter().enumerate() {
        if s.tty_chars.len() != SCREEN_CELLS || s.tty_colors.len() != SCREEN_CELLS {
            return Err(RepackError::BadScreen { step: i });
        }
        tty_chars.extend_from_slice(&s.tty_chars);
        tty_colors.extend_from_slice(&s.tty_colors);
    }
    let scores: Vec<i64> = raw.iter().map(|s| s.score).collect();
    let mut dones = vec![0u8; t];
    dones[t - 1] = 1;
    Ok(EpisodeRecord {
        tty_chars,
        tty_colors,
        tty_cursor: raw.iter().map(|s| s.tty_cursor).collect(),
        actions: raw.iter().map(|s| s.action).collect(),
        rewards: shape_rewards(&scores, final_delta),
        dones,
        metadata,
    })
}
