use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EnvAdapter, EnvError, EnvStep, Observation, StepInfo};
use crate::dataset::{SCREEN_CELLS, SCREEN_COLS};

/// Action ids 1..=8 move N, E, S, W, NE, SE, SW, NW.
const MOVES: [(i16, i16); 8] = [(-1, 0), (0, 1), (1, 0), (0, -1), (-1, 1), (1, 1), (1, -1), (-1, -1)];

/// Explicit no-op used by the scripted policy when no gold is visible.
pub const WAIT_ACTION: u8 = 18;

// Room interior bounds (inclusive), in screen cells.
const TOP: i16 = 3;
const BOTTOM: i16 = 19;
const LEFT: i16 = 11;
const RIGHT: i16 = 68;

const GOLD_COLOR: i8 = 11;
const AVATAR_COLOR: i8 = 15;
const WALL_COLOR: i8 = 7;
const FLOOR_COLOR: i8 = 8;
const TEXT_COLOR: i8 = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct GridHackConfig {
    /// Steps before the episode ends.
    pub horizon: usize,
    pub gold_value: i64,
    /// Gold spawns within this Chebyshev distance of the avatar.
    pub spawn_radius: i16,
    /// Golds collected per depth increase.
    pub golds_per_level: u32,
}

impl Default for GridHackConfig {
    fn default() -> Self {
        GridHackConfig {
            horizon: 200,
            gold_value: 10,
            spawn_radius: 4,
            golds_per_level: 5,
        }
    }
}

/// A one-room dungeon: the avatar `@` walks toward gold `$`, scoring on pickup.
/// A new pile appears near the avatar after each pickup, and the depth
/// indicator rises every few piles. Non-movement actions are no-ops.
#[derive(Debug, Clone)]
pub struct GridHack {
    config: GridHackConfig,
    rng: ChaCha8Rng,
    pos: (i16, i16),
    gold: (i16, i16),
    score: i64,
    golds: u32,
    t: usize,
    message: &'static str,
    started: bool,
    done: bool,
}

impl GridHack {
    pub fn new(config: GridHackConfig) -> Self {
        GridHack {
            config,
            rng: ChaCha8Rng::seed_from_u64(0),
            pos: (TOP, LEFT),
            gold: (TOP, LEFT),
            score: 0,
            golds: 0,
            t: 0,
            message: "",
            started: false,
            done: false,
        }
    }

    pub fn config(&self) -> &GridHackConfig {
        &self.config
    }

    fn depth(&self) -> u32 {
        1 + self.golds / self.config.golds_per_level.max(1)
    }

    fn spawn_gold(&mut self) {
        let r = self.config.spawn_radius.max(1);
        loop {
            let g = (
                (self.pos.0 + self.rng.gen_range(-r..=r)).clamp(TOP, BOTTOM),
                (self.pos.1 + self.rng.gen_range(-r..=r)).clamp(LEFT, RIGHT),
            );
            if g != self.pos {
                self.gold = g;
                return;
            }
        }
    }

    fn observe(&self) -> Observation {
        let mut chars = vec![b' '; SCREEN_CELLS];
        let mut colors = vec![0i8; SCREEN_CELLS];
        let mut put = |r: i16, c: i16, ch: u8, col: i8| {
            let k = r as usize * SCREEN_COLS + c as usize;
            chars[k] = ch;
            colors[k] = col;
        };
        for r in TOP - 1..=BOTTOM + 1 {
            for c in LEFT - 1..=RIGHT + 1 {
                let ch = if r == TOP - 1 || r == BOTTOM + 1 {
                    b'-'
                } else if c == LEFT - 1 || c == RIGHT + 1 {
                    b'|'
                } else {
                    b'.'
                };
                put(r, c, ch, if ch == b'.' { FLOOR_COLOR } else { WALL_COLOR });
            }
        }
        put(self.gold.0, self.gold.1, b'$', GOLD_COLOR);
        put(self.pos.0, self.pos.1, b'@', AVATAR_COLOR);
        let mut text = |row: usize, s: &str| {
            for (i, b) in s.bytes().take(SCREEN_COLS).enumerate() {
                chars[row * SCREEN_COLS + i] = b;
                colors[row * SCREEN_COLS + i] = TEXT_COLOR;
            }
        };
        text(0, self.message);
        text(22, "Agent the Candidate   St:16 Dx:14 Co:15 In:12 Wi:13 Ch:10 Neutral");
        text(23, &format!("Dlvl:{} $:{} HP:14(14) Pw:5(5) AC:4 Xp:1/0 T:{}", self.depth(), self.score, self.t + 1));
        Observation {
            tty_chars: chars,
            tty_colors: colors,
            tty_cursor: [self.pos.0, self.pos.1],
        }
    }

    fn snapshot(&self, reward: i64) -> EnvStep {
        EnvStep {
            observation: self.observe(),
            reward,
            done: self.done,
            info: StepInfo {
                score: self.score,
                depth: self.depth(),
            },
        }
    }
}

impl EnvAdapter for GridHack {
    fn reset(&mut self, seed: u64) -> EnvStep {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.pos = (self.rng.gen_range(TOP..=BOTTOM), self.rng.gen_range(LEFT..=RIGHT));
        self.spawn_gold();
        self.score = 0;
        self.golds = 0;
        self.t = 0;
        self.message = "Hello Agent, welcome to GridHack!";
        self.started = true;
        self.done = false;
        self.snapshot(0)
    }

    fn step(&mut self, action: u8) -> Result<EnvStep, EnvError> {
        if !self.started {
            return Err(EnvError::NotReset);
        }
        if self.done {
            return Err(EnvError::SteppedAfterDone);
        }
        self.message = "";
        let mut reward = 0;
        if (1..=8).contains(&action) {
            let (dr, dc) = MOVES[action as usize - 1];
            let next = (self.pos.0 + dr, self.pos.1 + dc);
            if (TOP..=BOTTOM).contains(&next.0) && (LEFT..=RIGHT).contains(&next.1) {
                self.pos = next;
            }
            if self.pos == self.gold {
                reward = self.config.gold_value;
                self.score += reward;
                self.golds += 1;
                self.message = "You pick up some gold pieces.";
                self.spawn_gold();
            }
        }
        self.t += 1;
        self.done = self.t >= self.config.horizon;
        Ok(self.snapshot(reward))
    }
}

/// Deterministic expert: step toward the nearest visible `$`, or wait.
pub fn scripted_policy(obs: &Observation) -> u8 {
    let [cr, cc] = obs.tty_cursor;
    let target = obs
        .tty_chars
        .iter()
        .enumerate()
        .filter(|(_, &ch)| ch == b'$')
        .map(|(k, _)| ((k / SCREEN_COLS) as i16, (k % SCREEN_COLS) as i16))
        .min_by_key(|&(r, c)| ((r - cr).abs().max((c - cc).abs()), r, c));
    match target {
        Some((r, c)) => {
            let d = ((r - cr).signum(), (c - cc).signum());
            MOVES.iter().position(|&m| m == d).map_or(WAIT_ACTION, |i| i as u8 + 1)
        }
        None => WAIT_ACTION,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reset_is_deterministic() {
        let mut a = GridHack::new(GridHackConfig::default());
        let mut b = GridHack::new(GridHackConfig::default());
        assert_eq!(a.reset(7), b.reset(7));
        assert_ne!(a.reset(7).observation, a.reset(8).observation);
    }

    #[test]
    fn scripted_episode_scores_and_terminates() {
        let mut env = GridHack::new(GridHackConfig::default());
        let mut s = env.reset(3);
        let mut n = 0;
        while !s.done {
            s = env.step(scripted_policy(&s.observation)).unwrap();
            n += 1;
        }
        assert_eq!(n, 200);
        assert!(s.info.score > 0);
        assert!(s.info.depth > 1);
        assert_eq!(env.step(1), Err(EnvError::SteppedAfterDone));
    }

    #[test]
    fn step_before_reset_fails() {
        let mut env = GridHack::new(GridHackConfig::default());
        assert_eq!(env.step(1), Err(EnvError::NotReset));
    }

    #[test]
    fn gold_is_always_near_the_cursor() {
        let mut env = GridHack::new(GridHackConfig::default());
        let mut s = env.reset(1);
        while !s.done {
            let k = s.observation.tty_chars.iter().position(|&c| c == b'$').unwrap();
            let (r, c) = ((k / SCREEN_COLS) as i16, (k % SCREEN_COLS) as i16);
            let [cr, cc] = s.observation.tty_cursor;
            assert!((r - cr).abs() <= 4 && (c - cc).abs() <= 4);
            s = env.step(scripted_policy(&s.observation)).unwrap();
        }
    }

    #[test]
    fn non_movement_actions_are_noops() {
        let mut env = GridHack::new(GridHackConfig::default());
        let s0 = env.reset(2);
        let s1 = env.step(WAIT_ACTION).unwrap();
        assert_eq!(s0.observation.tty_cursor, s1.observation.tty_cursor);
        assert_eq!(s1.reward, 0);
    }
}
