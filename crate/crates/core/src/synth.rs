//! Synthetic TTY-like episodes for tests, benchmarks and the `synth` command.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{
    CharacterSpec, EpisodeMetadata, EpisodeRecord, SCREEN_CELLS, SCREEN_COLS, SCREEN_ROWS,
};

/// Paints a static dungeon-like room into one screen buffer.
fn paint_room(chars: &mut [u8], colors: &mut [i8], top: usize, left: usize, h: usize, w: usize) {
    for r in top..top + h {
        for c in left..left + w {
            let edge_r = r == top || r == top + h - 1;
            let edge_c = c == left || c == left + w - 1;
            let (ch, col) = match (edge_r, edge_c) {
                (true, _) => (b'-', 7),
                (false, true) => (b'|', 7),
                _ => (b'.', 7),
            };
            chars[r * SCREEN_COLS + c] = ch;
            colors[r * SCREEN_COLS + c] = col;
        }
    }
}

fn paint_status(chars: &mut [u8], row: usize, text: &str) {
    for (i, b) in text.bytes().take(SCREEN_COLS).enumerate() {
        chars[row * SCREEN_COLS + i] = b;
    }
}

/// Deterministic, well-formed record of length `t` (≥ 1).
pub fn synthetic_episode(t: usize, seed: u64) -> EpisodeRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_episode_with_len(&mut rng, t, CharacterSpec::parse("mon-hum-neu").unwrap(), &format!("ep-{seed}"))
}

/// Random well-formed episode with a length drawn from `min_len..=max_len`.
pub fn random_episode<R: Rng>(rng: &mut R, min_len: usize, max_len: usize, task: CharacterSpec, id: &str) -> EpisodeRecord {
    let t = rng.gen_range(min_len..=max_len);
    random_episode_with_len(rng, t, task, id)
}

pub fn random_episode_with_len<R: Rng>(rng: &mut R, t: usize, task: CharacterSpec, id: &str) -> EpisodeRecord {
    assert!(t >= 1);
    let top = rng.gen_range(2..8);
    let left = rng.gen_range(0..30);
    let h = rng.gen_range(5..(SCREEN_ROWS - 2 - top).min(14));
    let w = rng.gen_range(8..40);
    let mut base_chars = vec![b' '; SCREEN_CELLS];
    let mut base_colors = vec![0i8; SCREEN_CELLS];
    paint_room(&mut base_chars, &mut base_colors, top, left, h, w);

    let mut tty_chars = Vec::with_capacity(t * SCREEN_CELLS);
    let mut tty_colors = Vec::with_capacity(t * SCREEN_CELLS);
    let mut tty_cursor = Vec::with_capacity(t);
    let mut actions = Vec::with_capacity(t);
    let mut rewards = Vec::with_capacity(t);
    let (mut r, mut c) = (top + 1 + rng.gen_range(0..h - 2), left + 1 + rng.gen_range(0..w - 2));
    let mut score: i64 = 0;
    for step in 0..t {
        let mut chars = base_chars.clone();
        let mut colors = base_colors.clone();
        chars[r * SCREEN_COLS + c] = b'@';
        colors[r * SCREEN_COLS + c] = 15;
        paint_status(&mut chars, SCREEN_ROWS - 1, &format!("Dlvl:1 $:{score} T:{}", step + 1));
        if rng.gen_bool(0.1) {
            paint_status(&mut chars, 0, "You hear some noises in the distance.");
        }
        tty_chars.extend_from_slice(&chars);
        tty_colors.extend_from_slice(&colors);
        tty_cursor.push([r as i16, c as i16]);

        let action = rng.gen_range(1..=8u8);
        actions.push(action);
        let reward = if rng.gen_bool(0.15) { rng.gen_range(1..20) } else { 0 };
        score += reward as i64;
        rewards.push(reward);
        let (dr, dc): (isize, isize) = match action {
            1 => (-1, 0),
            2 => (0, 1),
            3 => (1, 0),
            4 => (0, -1),
            5 => (-1, 1),
            6 => (1, 1),
            7 => (1, -1),
            _ => (-1, -1),
        };
        let nr = r as isize + dr;
        let nc = c as isize + dc;
        if nr > top as isize && nr < (top + h - 1) as isize && nc > left as isize && nc < (left + w - 1) as isize {
            r = nr as usize;
            c = nc as usize;
        }
    }
    let mut dones = vec![0u8; t];
    dones[t - 1] = 1;
    EpisodeRecord {
        tty_chars,
        tty_colors,
        tty_cursor,
        actions,
        rewards,
        dones,
        metadata: EpisodeMetadata {
            character: task,
            final_score: score,
            death_level: rng.gen_range(1..5),
            turns: t as u64,
            episode_id: id.to_string(),
        },
    }
}

/// `n` random episodes of one task, seeded.
pub fn random_episodes(n: usize, min_len: usize, max_len: usize, seed: u64) -> Vec<EpisodeRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let task = CharacterSpec::parse("mon-hum-neu").unwrap();
    (0..n)
        .map(|i| random_episode(&mut rng, min_len, max_len, task, &format!("synthetic-{seed}-{i}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::validate_episode;

    #[test]
    fn synthetic_records_are_valid() {
        for seed in 0..20 {
            let e = synthetic_episode(1 + seed as usize, seed);
            let report = validate_episode(&e);
            assert!(report.is_ok(), "{report}");
        }
        for e in random_episodes(10, 1, 50, 3) {
            assert!(validate_episode(&e).is_ok());
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(synthetic_episode(10, 4), synthetic_episode(10, 4));
    }
}
