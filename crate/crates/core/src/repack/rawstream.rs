//! Raw-stream exchange format (`KTR1`), one episode per file, little-endian.
//!
//! ```text
//! "KTR1"
//! u16 len, task id (utf-8)
//! u16 len, episode id (utf-8)
//! u32 death level
//! i64 final score delta at termination
//! repeated:  u32 record length (3858), then one step record:
//!     [u8; 1920] tty_chars, [i8; 1920] tty_colors, i16 row, i16 col,
//!     u8 action, i32 prev_reward, i64 cumulative score, u8 terminal
//! u32 0 (end marker)
//! ```

use std::io::{self, Read, Write};

use super::align::RawStepTuple;
use crate::dataset::SCREEN_CELLS;

pub const RAW_MAGIC: [u8; 4] = *b"KTR1";
pub const STEP_RECORD_BYTES: u32 = (SCREEN_CELLS * 2 + 4 + 1 + 4 + 8 + 1) as u32;

#[derive(Debug, Clone, PartialEq)]
pub struct RawEpisode {
    pub task_id: String,
    pub episode_id: String,
    pub death_level: u32,
    pub final_delta: i64,
    pub steps: Vec<RawStepTuple>,
}

impl RawEpisode {
    /// Final in-game score: score at the last step plus the terminal delta.
    pub fn final_score(&self) -> i64 {
        self.steps.last().map_or(0, |s| s.score) + self.final_delta
    }
}

fn put_str<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    w.write_all(&(s.len() as u16).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

pub fn write_raw_episode<W: Write>(w: &mut W, ep: &RawEpisode) -> io::Result<()> {
    w.write_all(&RAW_MAGIC)?;
    put_str(w, &ep.task_id)?;
    put_str(w, &ep.episode_id)?;
    w.write_all(&ep.death_level.to_le_bytes())?;
    w.write_all(&ep.final_delta.to_le_bytes())?;
    let mut rec = Vec::with_capacity(STEP_RECORD_BYTES as usize);
    for s in &ep.steps {
        rec.clear();
        rec.extend_from_slice(&s.tty_chars);
        rec.extend(s.tty_colors.iter().map(|&v| v as u8));
        rec.extend_from_slice(&s.tty_cursor[0].to_le_bytes());
        rec.extend_from_slice(&s.tty_cursor[1].to_le_bytes());
        rec.push(s.action);
        rec.extend_from_slice(&s.prev_reward.to_le_bytes());
        rec.extend_from_slice(&s.score.to_le_bytes());
        rec.push(s.terminal as u8);
        if rec.len() != STEP_RECORD_BYTES as usize {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "screen size mismatch"));
        }
        w.write_all(&STEP_RECORD_BYTES.to_le_bytes())?;
        w.write_all(&rec)?;
    }
    w.write_all(&0u32.to_le_bytes())
}

fn invalid(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn get<const N: usize, R: Read>(r: &mut R) -> io::Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn get_str<R: Read>(r: &mut R) -> io::Result<String> {
    let n = u16::from_le_bytes(get(r)?) as usize;
    let mut b = vec![0u8; n];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| invalid("non utf-8 string"))
}

pub fn read_raw_episode<R: Read>(r: &mut R) -> io::Result<RawEpisode> {
    if get::<4, _>(r)? != RAW_MAGIC {
        return Err(invalid("not a KTR1 raw stream"));
    }
    let task_id = get_str(r)?;
    let episode_id = get_str(r)?;
    let death_level = u32::from_le_bytes(get(r)?);
    let final_delta = i64::from_le_bytes(get(r)?);
    let mut steps = Vec::new();
    let mut rec = vec![0u8; STEP_RECORD_BYTES as usize];
    loop {
        let len = u32::from_le_bytes(get(r)?);
        if len == 0 {
            break;
        }
        if len != STEP_RECORD_BYTES {
            return Err(invalid(format!("step record length {len}, expected {STEP_RECORD_BYTES}")));
        }
        r.read_exact(&mut rec)?;
        let (chars, rest) = rec.split_at(SCREEN_CELLS);
        let (colors, rest) = rest.split_at(SCREEN_CELLS);
        steps.push(RawStepTuple {
            tty_chars: chars.to_vec(),
            tty_colors: colors.iter().map(|&v| v as i8).collect(),
            tty_cursor: [
                i16::from_le_bytes([rest[0], rest[1]]),
                i16::from_le_bytes([rest[2], rest[3]]),
            ],
            action: rest[4],
            prev_reward: i32::from_le_bytes(rest[5..9].try_into().unwrap()),
            score: i64::from_le_bytes(rest[9..17].try_into().unwrap()),
            terminal: match rest[17] {
                0 => false,
                1 => true,
                v => return Err(invalid(format!("terminal flag {v}"))),
            },
        });
    }
    Ok(RawEpisode {
        task_id,
        episode_id,
        death_level,
        final_delta,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let step = |i: i64, terminal| RawStepTuple {
            tty_chars: vec![b'a' + i as u8; SCREEN_CELLS],
            tty_colors: vec![-(i as i8); SCREEN_CELLS],
            tty_cursor: [i as i16, 2 * i as i16],
            action: i as u8,
            prev_reward: -(i as i32),
            score: 1000 * i,
            terminal,
        };
        let ep = RawEpisode {
            task_id: "mon-hum-neu".into(),
            episode_id: "e1".into(),
            death_level: 3,
            final_delta: -4,
            steps: vec![step(0, false), step(1, false), step(2, true)],
        };
        let mut buf = Vec::new();
        write_raw_episode(&mut buf, &ep).unwrap();
        assert_eq!(buf.len(), 4 + 13 + 4 + 4 + 8 + 3 * (4 + STEP_RECORD_BYTES as usize) + 4);
        let back = read_raw_episode(&mut buf.as_slice()).unwrap();
        assert_eq!(back, ep);
        assert_eq!(back.final_score(), 1996);
        assert!(read_raw_episode(&mut &buf[..buf.len() - 2]).is_err());
    }
}
