use serde::{Deserialize, Serialize};

use super::character::CharacterSpec;

pub const SCREEN_ROWS: usize = 24;
pub const SCREEN_COLS: usize = 80;
pub const SCREEN_CELLS: usize = SCREEN_ROWS * SCREEN_COLS;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetadata {
    pub character: CharacterSpec,
    pub final_score: i64,
    pub death_level: u32,
    pub turns: u64,
    pub episode_id: String,
}

/// One game trajectory. Screens are stored row-major, `SCREEN_CELLS` bytes per step.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub tty_chars: Vec<u8>,
    pub tty_colors: Vec<i8>,
    /// `[row, col]` per step.
    pub tty_cursor: Vec<[i16; 2]>,
    pub actions: Vec<u8>,
    pub rewards: Vec<i32>,
    pub dones: Vec<u8>,
    pub metadata: EpisodeMetadata,
}

impl EpisodeRecord {
    /// Number of steps, taken from the action vector.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn chars_at(&self, t: usize) -> &[u8] {
        &self.tty_chars[t * SCREEN_CELLS..(t + 1) * SCREEN_CELLS]
    }

    pub fn colors_at(&self, t: usize) -> &[i8] {
        &self.tty_colors[t * SCREEN_CELLS..(t + 1) * SCREEN_CELLS]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Step index the violation refers to, when it is step-specific.
    pub index: Option<usize>,
    pub message: String,
}

/// Outcome of [`validate_episode`]; empty when the record is well formed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, index: Option<usize>, message: impl Into<String>) {
        self.violations.push(Violation {
            index,
            message: message.into(),
        });
    }

    pub fn contains(&self, needle: &str) -> bool {
        self.violations.iter().any(|v| v.message.contains(needle))
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            match v.index {
                Some(idx) => write!(f, "step {idx}: {}", v.message)?,
                None => f.write_str(&v.message)?,
            }
        }
        Ok(())
    }
}

/// Checks every structural invariant of an episode record and lists the violations.
pub fn validate_episode(record: &EpisodeRecord) -> ValidationReport {
    let mut report = ValidationReport::default();
    let t = record.actions.len();
    if t == 0 {
        report.push(None, "empty episode");
    }
    let lengths = [
        ("tty_chars", record.tty_chars.len() / SCREEN_CELLS, record.tty_chars.len() % SCREEN_CELLS),
        ("tty_colors", record.tty_colors.len() / SCREEN_CELLS, record.tty_colors.len() % SCREEN_CELLS),
        ("tty_cursor", record.tty_cursor.len(), 0),
        ("rewards", record.rewards.len(), 0),
        ("dones", record.dones.len(), 0),
    ];
    let mut lengths_ok = true;
    for (name, len, rem) in lengths {
        if len != t || rem != 0 {
            lengths_ok = false;
            report.push(
                None,
                format!("length mismatch: {name} has {len} steps, actions has {t}"),
            );
        }
    }
    if lengths_ok && t > 0 {
        for (i, &d) in record.dones.iter().enumerate() {
            if d > 1 {
                report.push(Some(i), format!("done flag {d} not in {{0,1}}"));
            } else if i + 1 < t && d != 0 {
                report.push(Some(i), "early terminal flag");
            }
        }
        if record.dones[t - 1] != 1 {
            report.push(Some(t - 1), "terminal flag missing");
        }
        for (i, c) in record.tty_cursor.iter().enumerate() {
            if !(0..SCREEN_ROWS as i16).contains(&c[0]) || !(0..SCREEN_COLS as i16).contains(&c[1]) {
                report.push(Some(i), format!("cursor {:?} out of screen", c));
            }
        }
    }
    let m = &record.metadata;
    if m.final_score < 0 {
        report.push(None, "negative final score");
    }
    if m.death_level < 1 {
        report.push(None, "death level below 1");
    }
    if m.turns < 1 {
        report.push(None, "turns below 1");
    }
    report
}

#[cfg(test)]
mod tests {
    use crate::synth::synthetic_episode;
    use super::*;

    #[test]
    fn well_formed_record_passes() {
        assert!(validate_episode(&synthetic_episode(5, 1)).is_ok());
    }

    #[test]
    fn missing_terminal_flag() {
        let mut e = synthetic_episode(5, 1);
        e.dones[4] = 0;
        let r = validate_episode(&e);
        assert!(r.contains("terminal flag missing"));
        assert_eq!(r.violations[0].index, Some(4));
    }

    #[test]
    fn length_mismatch() {
        let mut e = synthetic_episode(5, 1);
        e.rewards.pop();
        assert!(validate_episode(&e).contains("length mismatch"));
    }

    #[test]
    fn early_terminal_and_bad_cursor() {
        let mut e = synthetic_episode(5, 1);
        e.dones[2] = 1;
        e.tty_cursor[1] = [24, 0];
        let r = validate_episode(&e);
        assert!(r.contains("early terminal"));
        assert!(r.contains("out of screen"));
    }

    #[test]
    fn metadata_bounds() {
        let mut e = synthetic_episode(3, 1);
        e.metadata.death_level = 0;
        e.metadata.final_score = -1;
        let r = validate_episode(&e);
        assert_eq!(r.violations.len(), 2);
    }
}
