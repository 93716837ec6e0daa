//! Byte-level layout of a KTB1 container. All integers are little-endian.
//! See `docs/ktb1.md` for the full layout table.

use serde::Serialize;

use super::codec::Compression;
use super::StoreError;
use crate::dataset::{
    Alignment, CharacterSpec, EpisodeMetadata, EpisodeRecord, Race, Role, SCREEN_CELLS,
    SCREEN_COLS, SCREEN_ROWS,
};

pub const MAGIC: [u8; 4] = *b"KTB1";
pub const INDEX_MAGIC: [u8; 4] = *b"KTBI";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    U8 = 0,
    I8 = 1,
    I16 = 2,
    I32 = 3,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::U8 | DType::I8 => 1,
            DType::I16 => 2,
            DType::I32 => 4,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(DType::U8),
            1 => Some(DType::I8),
            2 => Some(DType::I16),
            3 => Some(DType::I32),
            _ => None,
        }
    }
}

/// The six per-step arrays of an episode record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    TtyChars,
    TtyColors,
    TtyCursor,
    Actions,
    Rewards,
    Dones,
}

impl Field {
    pub const ALL: [Field; 6] = [
        Field::TtyChars,
        Field::TtyColors,
        Field::TtyCursor,
        Field::Actions,
        Field::Rewards,
        Field::Dones,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::TtyChars => "tty_chars",
            Field::TtyColors => "tty_colors",
            Field::TtyCursor => "tty_cursor",
            Field::Actions => "actions",
            Field::Rewards => "rewards",
            Field::Dones => "dones",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Field::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn dtype(self) -> DType {
        match self {
            Field::TtyChars | Field::Actions | Field::Dones => DType::U8,
            Field::TtyColors => DType::I8,
            Field::TtyCursor => DType::I16,
            Field::Rewards => DType::I32,
        }
    }

    pub fn step_shape(self) -> &'static [u32] {
        match self {
            Field::TtyChars | Field::TtyColors => &[SCREEN_ROWS as u32, SCREEN_COLS as u32],
            Field::TtyCursor => &[2],
            _ => &[],
        }
    }

    /// Bytes per step.
    pub fn step_bytes(self) -> usize {
        self.dtype().size() * self.step_shape().iter().product::<u32>() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FieldSpec {
    pub name: String,
    pub dtype: DType,
    pub step_shape: Vec<u32>,
}

impl FieldSpec {
    pub fn step_bytes(&self) -> usize {
        self.dtype.size() * self.step_shape.iter().product::<u32>() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContainerHeader {
    pub format_version: u32,
    pub compression: Compression,
    pub episode_count: u64,
    pub index_offset: u64,
    pub task_id: String,
    pub field_schema: Vec<FieldSpec>,
}

/// Location of one compressed block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BlockRef {
    pub offset: u64,
    pub compressed_len: u64,
    pub raw_len: u64,
    pub crc32: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct EpisodeIndexEntry {
    pub step_count: u64,
    /// One block per schema field, in schema order.
    pub fields: Vec<BlockRef>,
    pub metadata: BlockRef,
}

pub(crate) fn default_schema() -> Vec<FieldSpec> {
    Field::ALL
        .iter()
        .map(|f| FieldSpec {
            name: f.name().to_string(),
            dtype: f.dtype(),
            step_shape: f.step_shape().to_vec(),
        })
        .collect()
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Cursor { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|s| s[0])
    }
    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|s| u16::from_le_bytes(s.try_into().unwrap()))
    }
    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|s| u32::from_le_bytes(s.try_into().unwrap()))
    }
    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|s| u64::from_le_bytes(s.try_into().unwrap()))
    }
    fn i64(&mut self) -> Option<i64> {
        self.take(8).map(|s| i64::from_le_bytes(s.try_into().unwrap()))
    }
}

impl ContainerHeader {
    pub(crate) fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(128);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        out.push(self.compression.code());
        out.extend_from_slice(&[0, 0, 0]);
        out.extend_from_slice(&self.episode_count.to_le_bytes());
        out.extend_from_slice(&self.index_offset.to_le_bytes());
        out.extend_from_slice(&(self.task_id.len() as u16).to_le_bytes());
        out.extend_from_slice(self.task_id.as_bytes());
        out.extend_from_slice(&(self.field_schema.len() as u16).to_le_bytes());
        for f in &self.field_schema {
            out.push(f.name.len() as u8);
            out.extend_from_slice(f.name.as_bytes());
            out.push(f.dtype as u8);
            out.push(f.step_shape.len() as u8);
            for d in &f.step_shape {
                out.extend_from_slice(&d.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Decodes a header from the start of `buf`, returning it with its encoded length.
    pub(crate) fn decode(buf: &[u8]) -> Result<(Self, usize), StoreError> {
        let truncated = || StoreError::CorruptIndex("truncated header".into());
        let mut c = Cursor::new(buf);
        if c.take(4).ok_or(StoreError::BadMagic)? != MAGIC {
            return Err(StoreError::BadMagic);
        }
        let format_version = c.u32().ok_or_else(truncated)?;
        if format_version != FORMAT_VERSION {
            return Err(StoreError::VersionMismatch {
                found: format_version,
                expected: FORMAT_VERSION,
            });
        }
        let comp_code = c.u8().ok_or_else(truncated)?;
        c.take(3).ok_or_else(truncated)?;
        let episode_count = c.u64().ok_or_else(truncated)?;
        let index_offset = c.u64().ok_or_else(truncated)?;
        let tlen = c.u16().ok_or_else(truncated)? as usize;
        let task_bytes = c.take(tlen).ok_or_else(truncated)?;
        let nfields = c.u16().ok_or_else(truncated)? as usize;
        let mut field_schema = Vec::with_capacity(nfields);
        let mut bad_schema = false;
        for _ in 0..nfields {
            let nlen = c.u8().ok_or_else(truncated)? as usize;
            let name = c.take(nlen).ok_or_else(truncated)?;
            let dcode = c.u8().ok_or_else(truncated)?;
            let rank = c.u8().ok_or_else(truncated)? as usize;
            let mut step_shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                step_shape.push(c.u32().ok_or_else(truncated)?);
            }
            match (std::str::from_utf8(name), DType::from_code(dcode)) {
                (Ok(name), Some(dtype)) => field_schema.push(FieldSpec {
                    name: name.to_string(),
                    dtype,
                    step_shape,
                }),
                _ => bad_schema = true,
            }
        }
        let body_len = c.pos;
        let crc = c.u32().ok_or_else(truncated)?;
        if crc != crc32fast::hash(&buf[..body_len]) {
            return Err(StoreError::CorruptIndex("header checksum mismatch".into()));
        }
        let compression = Compression::from_code(comp_code)
            .ok_or_else(|| StoreError::CorruptIndex(format!("unknown codec {comp_code}")))?;
        let task_id = String::from_utf8(task_bytes.to_vec())
            .map_err(|_| StoreError::CorruptIndex("task id is not utf-8".into()))?;
        if bad_schema {
            return Err(StoreError::CorruptIndex("bad field schema".into()));
        }
        for f in Field::ALL {
            let ok = field_schema
                .iter()
                .any(|s| s.name == f.name() && s.dtype == f.dtype() && s.step_shape == f.step_shape());
            if !ok {
                return Err(StoreError::CorruptIndex(format!(
                    "schema lacks required field {}",
                    f.name()
                )));
            }
        }
        Ok((
            ContainerHeader {
                format_version,
                compression,
                episode_count,
                index_offset,
                task_id,
                field_schema,
            },
            c.pos,
        ))
    }
}

fn put_block(out: &mut Vec<u8>, b: &BlockRef) {
    out.extend_from_slice(&b.offset.to_le_bytes());
    out.extend_from_slice(&b.compressed_len.to_le_bytes());
    out.extend_from_slice(&b.raw_len.to_le_bytes());
    out.extend_from_slice(&b.crc32.to_le_bytes());
}

fn get_block(c: &mut Cursor<'_>) -> Option<BlockRef> {
    Some(BlockRef {
        offset: c.u64()?,
        compressed_len: c.u64()?,
        raw_len: c.u64()?,
        crc32: c.u32()?,
    })
}

pub(crate) const BLOCK_REF_BYTES: usize = 28;

pub(crate) fn index_len(episodes: usize, fields: usize) -> usize {
    episodes * (8 + (fields + 1) * BLOCK_REF_BYTES) + 8
}

pub(crate) fn encode_index(entries: &[EpisodeIndexEntry]) -> Vec<u8> {
    let mut out = Vec::new();
    for e in entries {
        out.extend_from_slice(&e.step_count.to_le_bytes());
        for b in &e.fields {
            put_block(&mut out, b);
        }
        put_block(&mut out, &e.metadata);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out.extend_from_slice(&INDEX_MAGIC);
    out
}

/// Decodes and cross-checks the index against the header and the payload region
/// `[payload_start, index_offset)`.
pub(crate) fn decode_index(
    buf: &[u8],
    header: &ContainerHeader,
    payload_start: u64,
) -> Result<Vec<EpisodeIndexEntry>, StoreError> {
    let corrupt = |m: &str| StoreError::CorruptIndex(m.to_string());
    let n = header.episode_count as usize;
    let nf = header.field_schema.len();
    if buf.len() != index_len(n, nf) {
        return Err(corrupt("index length does not match episode count"));
    }
    let body = &buf[..buf.len() - 8];
    let crc = u32::from_le_bytes(buf[buf.len() - 8..buf.len() - 4].try_into().unwrap());
    if buf[buf.len() - 4..] != INDEX_MAGIC {
        return Err(corrupt("missing index trailer"));
    }
    if crc != crc32fast::hash(body) {
        return Err(corrupt("index checksum mismatch"));
    }
    let mut c = Cursor::new(body);
    let mut entries = Vec::with_capacity(n);
    let mut last_end = payload_start;
    for _ in 0..n {
        let step_count = c.u64().ok_or_else(|| corrupt("short index"))?;
        let mut fields = Vec::with_capacity(nf);
        for spec in &header.field_schema {
            let b = get_block(&mut c).ok_or_else(|| corrupt("short index"))?;
            if b.raw_len != step_count * spec.step_bytes() as u64 {
                return Err(corrupt("block length disagrees with step count"));
            }
            fields.push(b);
        }
        let metadata = get_block(&mut c).ok_or_else(|| corrupt("short index"))?;
        for b in fields.iter().chain(std::iter::once(&metadata)) {
            if b.offset < last_end || b.offset + b.compressed_len > header.index_offset {
                return Err(corrupt("block offsets not increasing or out of payload range"));
            }
            last_end = b.offset + b.compressed_len;
        }
        if step_count == 0 {
            return Err(corrupt("zero-length episode"));
        }
        entries.push(EpisodeIndexEntry {
            step_count,
            fields,
            metadata,
        });
    }
    Ok(entries)
}

pub(crate) fn encode_metadata(m: &EpisodeMetadata) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + m.episode_id.len());
    out.push(m.character.role.index());
    out.push(m.character.race.index());
    out.push(m.character.alignment.index());
    out.extend_from_slice(&m.final_score.to_le_bytes());
    out.extend_from_slice(&m.death_level.to_le_bytes());
    out.extend_from_slice(&m.turns.to_le_bytes());
    out.extend_from_slice(&(m.episode_id.len() as u16).to_le_bytes());
    out.extend_from_slice(m.episode_id.as_bytes());
    out
}

pub(crate) fn decode_metadata(buf: &[u8]) -> Option<EpisodeMetadata> {
    let mut c = Cursor::new(buf);
    let role = Role::from_index(c.u8()?)?;
    let race = Race::from_index(c.u8()?)?;
    let alignment = Alignment::from_index(c.u8()?)?;
    let character = CharacterSpec::new(role, race, alignment).ok()?;
    let final_score = c.i64()?;
    let death_level = c.u32()?;
    let turns = c.u64()?;
    let idlen = c.u16()? as usize;
    let episode_id = String::from_utf8(c.take(idlen)?.to_vec()).ok()?;
    Some(EpisodeMetadata {
        character,
        final_score,
        death_level,
        turns,
        episode_id,
    })
}

/// Raw little-endian bytes of one field of a record.
pub fn field_bytes(record: &EpisodeRecord, field: Field) -> Vec<u8> {
    match field {
        Field::TtyChars => record.tty_chars.clone(),
        Field::TtyColors => record.tty_colors.iter().map(|&v| v as u8).collect(),
        Field::TtyCursor => record
            .tty_cursor
            .iter()
            .flat_map(|c| c.iter().flat_map(|v| v.to_le_bytes()))
            .collect(),
        Field::Actions => record.actions.clone(),
        Field::Rewards => record.rewards.iter().flat_map(|v| v.to_le_bytes()).collect(),
        Field::Dones => record.dones.clone(),
    }
}

pub(crate) fn i8_from_bytes(b: Vec<u8>) -> Vec<i8> {
    b.into_iter().map(|v| v as i8).collect()
}

pub(crate) fn cursor_from_bytes(b: &[u8]) -> Vec<[i16; 2]> {
    b.chunks_exact(4)
        .map(|c| {
            [
                i16::from_le_bytes([c[0], c[1]]),
                i16::from_le_bytes([c[2], c[3]]),
            ]
        })
        .collect()
}

pub(crate) fn i32_from_bytes(b: &[u8]) -> Vec<i32> {
    b.chunks_exact(4)
        .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}

const _: () = assert!(SCREEN_CELLS == 1920);
