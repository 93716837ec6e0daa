//! KTB1: a self-describing, chunked and compressed container of episode records.
//!
//! Each episode is stored as one independently compressed block per field plus
//! an uncompressed metadata block, so a reader can fetch e.g. actions and
//! rewards without touching screens. Every block carries a CRC32.

mod codec;
mod format;

use std::fs::File;
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::path::Path;
use std::sync::Arc;

use serde::Serialize;
use sha2::{Digest, Sha256};

pub use codec::Compression;
pub use format::{
    field_bytes, BlockRef, ContainerHeader, DType, EpisodeIndexEntry, Field, FieldSpec,
    FORMAT_VERSION, MAGIC,
};

use crate::dataset::{validate_episode, EpisodeMetadata, EpisodeRecord};
use crate::exec::Exec;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("validation failed: {0}")]
    ValidationFailed(String),
    #[error("bad magic (not a KTB1 container)")]
    BadMagic,
    #[error("format version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error("episode index {idx} out of range (episode count {count})")]
    IndexOutOfRange { idx: usize, count: usize },
    #[error("decompression failed for episode {episode} field {field}: {reason}")]
    DecompressFailed {
        episode: usize,
        field: String,
        reason: String,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Random-access byte source backing a [`StoreHandle`].
pub trait ByteSource: Send + Sync {
    fn len(&self) -> u64;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> std::io::Result<()>;
}

/// Positional reads on a file; safe to share between threads.
pub struct FileSource {
    file: File,
    len: u64,
    #[cfg(not(unix))]
    lock: std::sync::Mutex<()>,
}

impl FileSource {
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let file = File::open(path)?;
        let len = file.metadata()?.len();
        Ok(FileSource {
            file,
            len,
            #[cfg(not(unix))]
            lock: std::sync::Mutex::new(()),
        })
    }
}

impl ByteSource for FileSource {
    fn len(&self) -> u64 {
        self.len
    }

    #[cfg(unix)]
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> std::io::Result<()> {
        use std::os::unix::fs::FileExt;
        self.file.read_exact_at(buf, offset)
    }

    #[cfg(not(unix))]
    fn read_at(&self, offset: u64, buf: &mut [u8]) -> std::io::Result<()> {
        use std::io::Read;
        let _g = self.lock.lock().unwrap();
        let mut f = &self.file;
        f.seek(SeekFrom::Start(offset))?;
        f.read_exact(buf)
    }
}

impl ByteSource for Vec<u8> {
    fn len(&self) -> u64 {
        self.as_slice().len() as u64
    }

    fn read_at(&self, offset: u64, buf: &mut [u8]) -> std::io::Result<()> {
        let start = offset as usize;
        let src = self
            .get(start..start + buf.len())
            .ok_or_else(|| std::io::Error::from(std::io::ErrorKind::UnexpectedEof))?;
        buf.copy_from_slice(src);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WriteSummary {
    pub episode_count: u64,
    pub transitions: u64,
    /// Uncompressed bytes of all field blocks.
    pub raw_bytes: u64,
    /// Stored bytes of all field blocks.
    pub compressed_bytes: u64,
    pub file_bytes: u64,
}

/// Field blocks of one episode, already compressed.
pub struct PackedEpisode {
    step_count: u64,
    blocks: Vec<(Vec<u8>, u64)>,
    metadata: Vec<u8>,
}

impl PackedEpisode {
    pub fn pack(record: &EpisodeRecord, compression: Compression) -> Result<Self, StoreError> {
        let mut blocks = Vec::with_capacity(Field::ALL.len());
        for f in Field::ALL {
            let raw = field_bytes(record, f);
            blocks.push((compression.compress(&raw)?, raw.len() as u64));
        }
        Ok(PackedEpisode {
            step_count: record.len() as u64,
            blocks,
            metadata: format::encode_metadata(&record.metadata),
        })
    }
}

/// Streaming single-writer for a KTB1 file. Episodes are appended in order and
/// the index is written by [`StoreWriter::finish`].
pub struct StoreWriter {
    out: BufWriter<File>,
    header: ContainerHeader,
    pos: u64,
    index: Vec<EpisodeIndexEntry>,
    summary: WriteSummary,
}

impl StoreWriter {
    pub fn create(path: &Path, task_id: &str, compression: Compression) -> Result<Self, StoreError> {
        let header = ContainerHeader {
            format_version: FORMAT_VERSION,
            compression,
            episode_count: 0,
            index_offset: 0,
            task_id: task_id.to_string(),
            field_schema: format::default_schema(),
        };
        let mut out = BufWriter::with_capacity(1 << 20, File::create(path)?);
        let bytes = header.encode();
        out.write_all(&bytes)?;
        Ok(StoreWriter {
            out,
            header,
            pos: bytes.len() as u64,
            index: Vec::new(),
            summary: WriteSummary {
                episode_count: 0,
                transitions: 0,
                raw_bytes: 0,
                compressed_bytes: 0,
                file_bytes: 0,
            },
        })
    }

    fn write_block(&mut self, data: &[u8], raw_len: u64) -> Result<BlockRef, StoreError> {
        self.out.write_all(data)?;
        let b = BlockRef {
            offset: self.pos,
            compressed_len: data.len() as u64,
            raw_len,
            crc32: crc32fast::hash(data),
        };
        self.pos += data.len() as u64;
        Ok(b)
    }

    /// Validates and appends one episode.
    pub fn push(&mut self, record: &EpisodeRecord) -> Result<(), StoreError> {
        check_record(record, &self.header.task_id)?;
        let packed = PackedEpisode::pack(record, self.header.compression)?;
        self.push_packed(packed)
    }

    /// Appends an episode packed with this writer's codec and already validated.
    pub fn push_packed(&mut self, packed: PackedEpisode) -> Result<(), StoreError> {
        let mut fields = Vec::with_capacity(packed.blocks.len());
        for (data, raw_len) in &packed.blocks {
            fields.push(self.write_block(data, *raw_len)?);
            self.summary.raw_bytes += raw_len;
            self.summary.compressed_bytes += data.len() as u64;
        }
        let meta_len = packed.metadata.len() as u64;
        let metadata = self.write_block(&packed.metadata, meta_len)?;
        self.summary.episode_count += 1;
        self.summary.transitions += packed.step_count;
        self.index.push(EpisodeIndexEntry {
            step_count: packed.step_count,
            fields,
            metadata,
        });
        Ok(())
    }

    pub fn finish(mut self) -> Result<WriteSummary, StoreError> {
        if self.index.is_empty() {
            return Err(StoreError::ValidationFailed("no episodes".into()));
        }
        let index_offset = self.pos;
        let index = format::encode_index(&self.index);
        self.out.write_all(&index)?;
        self.header.episode_count = self.index.len() as u64;
        self.header.index_offset = index_offset;
        let header = self.header.encode();
        let mut file = self.out.into_inner().map_err(|e| e.into_error())?;
        file.seek(SeekFrom::Start(0))?;
        file.write_all(&header)?;
        file.sync_all()?;
        self.summary.file_bytes = index_offset + index.len() as u64;
        Ok(self.summary)
    }
}

fn check_record(record: &EpisodeRecord, task_id: &str) -> Result<(), StoreError> {
    let report = validate_episode(record);
    if !report.is_ok() {
        return Err(StoreError::ValidationFailed(format!(
            "episode {}: {report}",
            record.metadata.episode_id
        )));
    }
    let task = record.metadata.character.to_string();
    if task != task_id {
        return Err(StoreError::ValidationFailed(format!(
            "episode {} belongs to {task}, store task is {task_id}",
            record.metadata.episode_id
        )));
    }
    Ok(())
}

/// Writes `episodes` to a new KTB1 file. Compression runs under `exec`; blocks
/// are written in input order, so the output is identical for every strategy.
pub fn write_store_with(
    path: &Path,
    episodes: &[EpisodeRecord],
    compression: Compression,
    exec: Exec,
) -> Result<WriteSummary, StoreError> {
    let first = episodes
        .first()
        .ok_or_else(|| StoreError::ValidationFailed("empty episode list".into()))?;
    let task_id = first.metadata.character.to_string();
    for e in episodes {
        check_record(e, &task_id)?;
    }
    let mut writer = StoreWriter::create(path, &task_id, compression)?;
    // Bounded chunks keep peak memory near one chunk of compressed output.
    for chunk in episodes.chunks(64) {
        let packed = exec.map_slice(chunk, |e| PackedEpisode::pack(e, compression));
        for p in packed {
            writer.push_packed(p?)?;
        }
    }
    writer.finish()
}

pub fn write_store(
    path: &Path,
    episodes: &[EpisodeRecord],
    compression: Compression,
) -> Result<WriteSummary, StoreError> {
    write_store_with(path, episodes, compression, Exec::default())
}

/// Read-only view of a KTB1 container. Only header and index are read on open;
/// payload blocks are fetched on demand.
#[derive(Clone)]
pub struct StoreHandle {
    source: Arc<dyn ByteSource>,
    header: ContainerHeader,
    index: Vec<EpisodeIndexEntry>,
    field_pos: [usize; 6],
}

impl std::fmt::Debug for StoreHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StoreHandle")
            .field("header", &self.header)
            .finish_non_exhaustive()
    }
}

pub fn open_store(path: &Path) -> Result<StoreHandle, StoreError> {
    StoreHandle::from_source(Arc::new(FileSource::open(path)?))
}

impl StoreHandle {
    pub fn from_source(source: Arc<dyn ByteSource>) -> Result<Self, StoreError> {
        let len = source.len();
        // Headers written by this crate are a few hundred bytes; 1 MiB bounds the probe.
        let mut probe = vec![0u8; len.min(1 << 20) as usize];
        source.read_at(0, &mut probe)?;
        let (header, header_len) = ContainerHeader::decode(&probe)?;
        let nf = header.field_schema.len();
        let ilen = format::index_len(header.episode_count as usize, nf) as u64;
        if header.index_offset < header_len as u64 || header.index_offset + ilen != len {
            return Err(StoreError::CorruptIndex(format!(
                "index at {} (+{ilen} bytes) inconsistent with file length {len}",
                header.index_offset
            )));
        }
        let mut ibuf = vec![0u8; ilen as usize];
        source.read_at(header.index_offset, &mut ibuf)?;
        let index = format::decode_index(&ibuf, &header, header_len as u64)?;
        let mut field_pos = [0usize; 6];
        for (i, f) in Field::ALL.iter().enumerate() {
            field_pos[i] = header
                .field_schema
                .iter()
                .position(|s| s.name == f.name())
                .expect("schema checked on decode");
        }
        Ok(StoreHandle {
            source,
            header,
            index,
            field_pos,
        })
    }

    pub fn header(&self) -> &ContainerHeader {
        &self.header
    }

    pub fn index(&self) -> &[EpisodeIndexEntry] {
        &self.index
    }

    pub fn episode_count(&self) -> usize {
        self.index.len()
    }

    pub fn step_count(&self, idx: usize) -> usize {
        self.index[idx].step_count as usize
    }

    pub fn total_transitions(&self) -> u64 {
        self.index.iter().map(|e| e.step_count).sum()
    }

    /// Total decompressed bytes of all field blocks.
    pub fn raw_bytes(&self) -> u64 {
        self.index
            .iter()
            .flat_map(|e| e.fields.iter())
            .map(|b| b.raw_len)
            .sum()
    }

    fn check_idx(&self, idx: usize) -> Result<&EpisodeIndexEntry, StoreError> {
        self.index.get(idx).ok_or(StoreError::IndexOutOfRange {
            idx,
            count: self.index.len(),
        })
    }

    fn read_block(&self, episode: usize, field: &str, b: &BlockRef, codec: Compression) -> Result<Vec<u8>, StoreError> {
        let mut data = vec![0u8; b.compressed_len as usize];
        self.source.read_at(b.offset, &mut data)?;
        let fail = |reason: String| StoreError::DecompressFailed {
            episode,
            field: field.to_string(),
            reason,
        };
        if crc32fast::hash(&data) != b.crc32 {
            return Err(fail("checksum mismatch".into()));
        }
        codec
            .decompress(&data, b.raw_len as usize)
            .map_err(|e| fail(e.to_string()))
    }

    /// Decompressed little-endian bytes of one field of one episode.
    pub fn read_field(&self, idx: usize, field: Field) -> Result<Vec<u8>, StoreError> {
        let entry = self.check_idx(idx)?;
        let pos = self.field_pos[field as usize];
        self.read_block(idx, field.name(), &entry.fields[pos], self.header.compression)
    }

    pub fn read_metadata(&self, idx: usize) -> Result<EpisodeMetadata, StoreError> {
        let entry = self.check_idx(idx)?;
        let raw = self.read_block(idx, "metadata", &entry.metadata, Compression::None)?;
        format::decode_metadata(&raw).ok_or_else(|| StoreError::DecompressFailed {
            episode: idx,
            field: "metadata".into(),
            reason: "malformed metadata block".into(),
        })
    }

    pub fn read_episode(&self, idx: usize) -> Result<EpisodeRecord, StoreError> {
        Ok(EpisodeRecord {
            tty_chars: self.read_field(idx, Field::TtyChars)?,
            tty_colors: format::i8_from_bytes(self.read_field(idx, Field::TtyColors)?),
            tty_cursor: format::cursor_from_bytes(&self.read_field(idx, Field::TtyCursor)?),
            actions: self.read_field(idx, Field::Actions)?,
            rewards: format::i32_from_bytes(&self.read_field(idx, Field::Rewards)?),
            dones: self.read_field(idx, Field::Dones)?,
            metadata: self.read_metadata(idx)?,
        })
    }

    /// SHA-256 of every episode's canonical encoding, see [`episode_digest`].
    pub fn store_checksum(&self) -> Result<Vec<[u8; 32]>, StoreError> {
        (0..self.episode_count())
            .map(|i| self.read_episode(i).map(|e| episode_digest(&e)))
            .collect()
    }

    /// JSON dump of header and index, as printed by `store inspect`.
    pub fn inspect_json(&self) -> serde_json::Value {
        serde_json::json!({
            "header": self.header,
            "transitions": self.total_transitions(),
            "raw_bytes": self.raw_bytes(),
            "index": self.index,
        })
    }
}

pub fn store_checksum(handle: &StoreHandle) -> Result<Vec<[u8; 32]>, StoreError> {
    handle.store_checksum()
}

/// Digest over the six field encodings (in canonical order) and the metadata block.
pub fn episode_digest(record: &EpisodeRecord) -> [u8; 32] {
    let mut h = Sha256::new();
    for f in Field::ALL {
        let bytes = field_bytes(record, f);
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    h.update(format::encode_metadata(&record.metadata));
    h.finalize().into()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{random_episodes, synthetic_episode};
    use std::sync::Mutex;

    fn write_tmp(eps: &[EpisodeRecord], c: Compression) -> (tempfile::TempDir, std::path::PathBuf, WriteSummary) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ktb");
        let s = write_store(&path, eps, c).unwrap();
        (dir, path, s)
    }

    #[test]
    fn uncompressed_sizes_match() {
        let eps: Vec<_> = (0..3).map(|i| synthetic_episode(10 + i, i as u64)).collect();
        let (_d, _p, s) = write_tmp(&eps, Compression::None);
        assert_eq!(s.episode_count, 3);
        assert_eq!(s.compressed_bytes, s.raw_bytes);
        assert_eq!(s.raw_bytes, 33 * (1920 * 2 + 4 + 1 + 4 + 1));
    }

    #[test]
    fn deflate_compresses_screens() {
        let eps: Vec<_> = (0..3).map(|i| synthetic_episode(30, i)).collect();
        let (_d, _p, s) = write_tmp(&eps, Compression::Deflate);
        assert!(s.raw_bytes > 2 * s.compressed_bytes, "{s:?}");
    }

    #[test]
    fn empty_list_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let r = write_store(&dir.path().join("x"), &[], Compression::None);
        assert!(matches!(r, Err(StoreError::ValidationFailed(_))));
    }

    #[test]
    fn invalid_or_mixed_episodes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut bad = synthetic_episode(4, 1);
        bad.dones[3] = 0;
        let r = write_store(&dir.path().join("x"), &[bad], Compression::None);
        assert!(matches!(r, Err(StoreError::ValidationFailed(_))));
        let mut other = synthetic_episode(4, 2);
        other.metadata.character = crate::dataset::parse_task_id("val-hum-neu").unwrap();
        let r = write_store(&dir.path().join("y"), &[synthetic_episode(4, 1), other], Compression::None);
        assert!(matches!(r, Err(StoreError::ValidationFailed(_))));
    }

    #[test]
    fn round_trip_every_codec() {
        let eps = random_episodes(6, 1, 40, 9);
        for c in Compression::ALL {
            let (_d, p, _) = write_tmp(&eps, c);
            let h = open_store(&p).unwrap();
            assert_eq!(h.header().compression, c);
            assert_eq!(h.header().task_id, "mon-hum-neu");
            for (i, e) in eps.iter().enumerate() {
                assert_eq!(&h.read_episode(i).unwrap(), e);
            }
            assert!(matches!(
                h.read_episode(eps.len()),
                Err(StoreError::IndexOutOfRange { .. })
            ));
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let eps = vec![synthetic_episode(3, 0)];
        let (_d, p, _) = write_tmp(&eps, Compression::None);
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            StoreHandle::from_source(Arc::new(bytes.clone())),
            Err(StoreError::BadMagic)
        ));
        bytes[0] = b'K';
        bytes[4] = 9;
        assert!(matches!(
            StoreHandle::from_source(Arc::new(bytes)),
            Err(StoreError::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn truncation_at_index_is_corrupt_index() {
        let eps = random_episodes(3, 2, 10, 1);
        let (_d, p, _) = write_tmp(&eps, Compression::Deflate);
        let h = open_store(&p).unwrap();
        let cut = h.header().index_offset as usize;
        let bytes = std::fs::read(&p).unwrap();
        let r = StoreHandle::from_source(Arc::new(bytes[..cut].to_vec()));
        assert!(matches!(r, Err(StoreError::CorruptIndex(_))), "{r:?}");
    }

    #[test]
    fn payload_corruption_detected_on_read() {
        let eps = vec![synthetic_episode(5, 0)];
        let (_d, p, _) = write_tmp(&eps, Compression::Deflate);
        let h = open_store(&p).unwrap();
        let off = h.index()[0].fields[0].offset as usize;
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[off + 3] ^= 0x10;
        let h = StoreHandle::from_source(Arc::new(bytes)).unwrap();
        assert!(matches!(h.read_episode(0), Err(StoreError::DecompressFailed { .. })));
    }

    struct Recording {
        inner: Vec<u8>,
        reads: Mutex<Vec<(u64, u64)>>,
    }

    impl ByteSource for Recording {
        fn len(&self) -> u64 {
            self.inner.len() as u64
        }
        fn read_at(&self, offset: u64, buf: &mut [u8]) -> std::io::Result<()> {
            self.reads.lock().unwrap().push((offset, buf.len() as u64));
            self.inner.read_at(offset, buf)
        }
    }

    #[test]
    fn random_access_touches_only_own_blocks() {
        let eps = random_episodes(5, 3, 20, 4);
        let (_d, p, _) = write_tmp(&eps, Compression::None);
        let src = Arc::new(Recording {
            inner: std::fs::read(&p).unwrap(),
            reads: Mutex::new(Vec::new()),
        });
        let h = StoreHandle::from_source(src.clone()).unwrap();
        src.reads.lock().unwrap().clear();
        let target = 2;
        h.read_episode(target).unwrap();
        let entry = &h.index()[target];
        let lo = entry.fields.iter().map(|b| b.offset).min().unwrap();
        let hi = entry.metadata.offset + entry.metadata.compressed_len;
        for &(off, len) in src.reads.lock().unwrap().iter() {
            assert!(off >= lo && off + len <= hi, "read {off}+{len} outside [{lo},{hi})");
        }
    }

    #[test]
    fn checksums_are_stable_and_distinct() {
        let eps = random_episodes(4, 2, 10, 5);
        let (_d, p, _) = write_tmp(&eps, Compression::Zstd);
        let h = open_store(&p).unwrap();
        let a = store_checksum(&h).unwrap();
        let b = store_checksum(&open_store(&p).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a[0], a[1]);
        assert_eq!(a[3], episode_digest(&eps[3]));
    }

    #[test]
    fn parallel_and_sequential_writes_identical() {
        let eps = random_episodes(70, 1, 8, 6);
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        write_store_with(&a, &eps, Compression::Deflate, Exec::Sequential).unwrap();
        write_store_with(&b, &eps, Compression::Deflate, Exec::Parallel).unwrap();
        assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
    }

    #[test]
    fn inspect_lists_schema() {
        let (_d, p, _) = write_tmp(&[synthetic_episode(2, 0)], Compression::None);
        let v = open_store(&p).unwrap().inspect_json();
        assert_eq!(v["header"]["field_schema"].as_array().unwrap().len(), 6);
        assert_eq!(v["header"]["episode_count"], 1);
    }
}
