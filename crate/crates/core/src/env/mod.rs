//! Environment contract used for policy evaluation, and a small deterministic
//! stub environment with TTY-shaped observations.

mod gridhack;

pub use gridhack::{GridHack, GridHackConfig, WAIT_ACTION};

use crate::dataset::{CharacterSpec, EpisodeRecord};
use crate::repack::{align_raw, RawEpisode, RawStepTuple, RepackError};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EnvError {
    #[error("step called after the episode ended; reset first")]
    SteppedAfterDone,
    #[error("step called before reset")]
    NotReset,
}

/// One TTY frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    /// `[24, 80]`
    pub tty_chars: Vec<u8>,
    /// `[24, 80]`
    pub tty_colors: Vec<i8>,
    /// `(row, col)`
    pub tty_cursor: [i16; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepInfo {
    pub score: i64,
    pub depth: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvStep {
    pub observation: Observation,
    /// Score change caused by the action that produced this step.
    pub reward: i64,
    pub done: bool,
    pub info: StepInfo,
}

/// What an evaluator needs from an environment. A binding to the real game
/// would implement this trait; only the stub ships here.
pub trait EnvAdapter {
    fn reset(&mut self, seed: u64) -> EnvStep;
    fn step(&mut self, action: u8) -> Result<EnvStep, EnvError>;
}

/// Plays one episode from `reset(seed)` with `policy` and records it as a raw
/// stream: each step holds the observation, the action chosen in it and the
/// score at that point; the step whose action ended the episode is terminal and
/// its reward becomes the stream's terminal delta.
pub fn record_rollout<E, P>(env: &mut E, seed: u64, mut policy: P, task: CharacterSpec, episode_id: &str) -> Result<RawEpisode, EnvError>
where
    E: EnvAdapter,
    P: FnMut(&Observation) -> u8,
{
    let mut cur = env.reset(seed);
    let mut steps = Vec::new();
    let mut prev_reward = 0i64;
    loop {
        let action = policy(&cur.observation);
        let next = env.step(action)?;
        steps.push(RawStepTuple {
            tty_chars: cur.observation.tty_chars,
            tty_colors: cur.observation.tty_colors,
            tty_cursor: cur.observation.tty_cursor,
            action,
            prev_reward: prev_reward as i32,
            score: cur.info.score,
            terminal: next.done,
        });
        prev_reward = next.reward;
        if next.done {
            return Ok(RawEpisode {
                task_id: task.to_string(),
                episode_id: episode_id.to_string(),
                death_level: next.info.depth,
                final_delta: next.reward,
                steps,
            });
        }
        cur = next;
    }
}

/// Plays an episode to the end and returns `(final score, steps)`.
pub fn play_episode<E, P>(env: &mut E, seed: u64, mut policy: P) -> Result<(i64, usize), EnvError>
where
    E: EnvAdapter,
    P: FnMut(&Observation) -> u8,
{
    let mut cur = env.reset(seed);
    let mut n = 0;
    while !cur.done {
        cur = env.step(policy(&cur.observation))?;
        n += 1;
    }
    Ok((cur.info.score, n))
}

/// `n` scripted-expert episodes of the stub, aligned into records.
/// Episode `i` uses reset seed `seed + i`.
pub fn scripted_dataset(n: usize, seed: u64, config: &GridHackConfig) -> Result<Vec<EpisodeRecord>, RepackError> {
    let task = CharacterSpec::parse("mon-hum-neu").expect("catalog task");
    (0..n as u64)
        .map(|i| {
            let mut env = GridHack::new(config.clone());
            let raw = record_rollout(&mut env, seed + i, gridhack::scripted_policy, task, &format!("gridhack-{}", seed + i))
                .expect("scripted rollouts never step past the end");
            align_raw(&raw, task)
        })
        .collect()
}

pub use gridhack::scripted_policy;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::validate_episode;

    #[test]
    fn recorded_rollouts_align_into_valid_records() {
        let cfg = GridHackConfig {
            horizon: 50,
            ..Default::default()
        };
        let recs = scripted_dataset(3, 11, &cfg).unwrap();
        for r in &recs {
            assert!(validate_episode(r).is_ok());
            assert_eq!(r.len(), 50);
            let total: i64 = r.rewards.iter().map(|&x| x as i64).sum();
            assert_eq!(total, r.metadata.final_score);
            assert!(total > 0);
        }
    }

    #[test]
    fn rollout_score_matches_play() {
        let cfg = GridHackConfig::default();
        let mut env = GridHack::new(cfg);
        let (score, n) = play_episode(&mut env, 5, scripted_policy).unwrap();
        let task = CharacterSpec::parse("mon-hum-neu").unwrap();
        let raw = record_rollout(&mut env, 5, scripted_policy, task, "x").unwrap();
        assert_eq!(raw.final_score(), score);
        assert_eq!(raw.steps.len(), n);
    }
}
