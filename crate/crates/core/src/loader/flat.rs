//! Decompressed flat layout shared by the in-memory and memory-mapped modes.
//!
//! ```text
//! 0    8   "KTBD\x01\0\0\0"
//! 8    8   u64 episode count N
//! 16   8   u64 total steps S
//! 24   8   u64 store fingerprint
//! 32   16N per episode: u64 first step, u64 step count
//! then six field arrays over all S steps, each starting on a 64-byte boundary,
//! in the order tty_chars, tty_colors, tty_cursor, actions, rewards, dones.
//! ```

use std::io::Write;

use crate::dataset::SCREEN_CELLS;
use crate::store::{Field, StoreError, StoreHandle};

pub(crate) const FLAT_MAGIC: [u8; 8] = *b"KTBD\x01\0\0\0";
const ALIGN: usize = 64;

#[derive(Debug, Clone)]
pub(crate) struct FlatLayout {
    pub starts: Vec<usize>,
    pub lengths: Vec<usize>,
    pub total_steps: usize,
    /// Byte offset of each field array, indexed by `Field as usize`.
    pub field_offsets: [usize; 6],
    pub total_bytes: usize,
}

fn align_up(x: usize) -> usize {
    x.div_ceil(ALIGN) * ALIGN
}

impl FlatLayout {
    pub fn new(lengths: Vec<usize>) -> Self {
        let mut starts = Vec::with_capacity(lengths.len());
        let mut acc = 0;
        for &l in &lengths {
            starts.push(acc);
            acc += l;
        }
        let total_steps = acc;
        let mut pos = align_up(32 + 16 * lengths.len());
        let mut field_offsets = [0usize; 6];
        for f in Field::ALL {
            field_offsets[f as usize] = pos;
            pos = align_up(pos + total_steps * f.step_bytes());
        }
        FlatLayout {
            starts,
            lengths,
            total_steps,
            field_offsets,
            total_bytes: pos,
        }
    }

    fn header_bytes(&self, fingerprint: u64) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 16 * self.lengths.len());
        out.extend_from_slice(&FLAT_MAGIC);
        out.extend_from_slice(&(self.lengths.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.total_steps as u64).to_le_bytes());
        out.extend_from_slice(&fingerprint.to_le_bytes());
        for (s, l) in self.starts.iter().zip(&self.lengths) {
            out.extend_from_slice(&(*s as u64).to_le_bytes());
            out.extend_from_slice(&(*l as u64).to_le_bytes());
        }
        out
    }

    /// True when `bytes` holds a complete artifact of this layout and fingerprint.
    pub fn matches(&self, bytes: &[u8], fingerprint: u64) -> bool {
        let h = self.header_bytes(fingerprint);
        bytes.len() == self.total_bytes && bytes[..h.len()] == h[..]
    }

    pub fn field_range(&self, field: Field, ep: usize, start: usize, steps: usize) -> std::ops::Range<usize> {
        let sb = field.step_bytes();
        let base = self.field_offsets[field as usize] + (self.starts[ep] + start) * sb;
        base..base + steps * sb
    }
}

/// Identifies the store content a flat artifact was built from.
pub(crate) fn store_fingerprint(store: &StoreHandle) -> u64 {
    let mut h = crc32fast::Hasher::new();
    h.update(&store.header().index_offset.to_le_bytes());
    for e in store.index() {
        h.update(&e.step_count.to_le_bytes());
        for b in e.fields.iter().chain(std::iter::once(&e.metadata)) {
            h.update(&b.crc32.to_le_bytes());
        }
    }
    ((store.episode_count() as u64) << 32) | h.finalize() as u64
}

/// Decompresses every episode of `store` into the flat layout, writing the
/// bytes sequentially to `out`. Blocks are decoded under `exec` in bounded
/// chunks and written in episode order.
pub(crate) fn write_flat<W: Write>(
    store: &StoreHandle,
    layout: &FlatLayout,
    exec: crate::Exec,
    out: &mut W,
) -> Result<(), StoreError> {
    let header = layout.header_bytes(store_fingerprint(store));
    out.write_all(&header)?;
    let mut pos = header.len();
    let zeros = [0u8; ALIGN];
    let ids: Vec<usize> = (0..store.episode_count()).collect();
    for f in Field::ALL {
        let target = layout.field_offsets[f as usize];
        out.write_all(&zeros[..target - pos])?;
        pos = target;
        for chunk in ids.chunks(64) {
            for bytes in exec.map_slice(chunk, |&ep| store.read_field(ep, f)) {
                let bytes = bytes?;
                out.write_all(&bytes)?;
                pos += bytes.len();
            }
        }
    }
    out.write_all(&zeros[..layout.total_bytes - pos])?;
    Ok(())
}

const _: () = assert!(SCREEN_CELLS.is_multiple_of(64));
