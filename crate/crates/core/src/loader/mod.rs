//! Sequence loaders over a KTB1 store under three speed/memory trade-offs, the
//! sequence replay sampler used by recurrent training, and a latency benchmark.

mod bench;
mod flat;
mod sampler;

use std::fs::{File, OpenOptions};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use memmap2::{Mmap, MmapMut};
use serde::Serialize;

pub use bench::{benchmark_loader, BenchRow, BenchTable};
pub use sampler::{
    iterate_epoch, sample_sequences, sample_sequences_with, EpochIter, PadPolicy, SamplerConfig, SequenceBatch,
    SequenceSampler,
};

use crate::exec::Exec;
use crate::store::{open_store, Field, StoreError, StoreHandle};
use flat::FlatLayout;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LoaderMode {
    /// Whole dataset decompressed into RAM.
    InMemory,
    /// Decompressed once to a file beside the store, then memory-mapped.
    Memmap,
    /// Blocks decompressed on every access.
    CompressedOnRead,
}

impl LoaderMode {
    pub const ALL: [LoaderMode; 3] = [LoaderMode::InMemory, LoaderMode::Memmap, LoaderMode::CompressedOnRead];

    /// Accepts the binding-style names (`in_memory`, `memmap`, `compressed`).
    pub fn parse(text: &str) -> Option<Self> {
        match text {
            "in_memory" | "ram" => Some(LoaderMode::InMemory),
            "memmap" => Some(LoaderMode::Memmap),
            "compressed" | "compressed_on_read" => Some(LoaderMode::CompressedOnRead),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LoaderMode::InMemory => "in_memory",
            LoaderMode::Memmap => "memmap",
            LoaderMode::CompressedOnRead => "compressed",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoaderError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("in-memory load needs {required} bytes but only {available} are available")]
    InsufficientMemory { required: u64, available: u64 },
    #[error("dataset has no episodes")]
    EmptyDataset,
    #[error("no episode is longer than the sequence length {seq_len}")]
    AllEpisodesTooShort { seq_len: usize },
    #[error("invalid sampler config: {0}")]
    InvalidConfig(String),
    #[error("dataset handle is closed")]
    Closed,
    #[error("dataset handle already closed")]
    DoubleClose,
    #[error("timed out waiting for decompression lock {0}")]
    LockTimeout(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Overrides the detected available memory for the in-memory check.
    pub memory_budget: Option<u64>,
    /// How long to wait for another process's decompression lock.
    pub lock_timeout: Duration,
    pub exec: Exec,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            memory_budget: None,
            lock_timeout: Duration::from_secs(600),
            exec: Exec::default(),
        }
    }
}

pub(crate) enum Backing {
    InMemory(MmapMut),
    Memmap { map: Mmap, artifact: PathBuf },
    Compressed,
    Closed,
}

/// An opened task dataset under one loader mode.
pub struct DatasetHandle {
    mode: LoaderMode,
    store: StoreHandle,
    store_path: PathBuf,
    layout: FlatLayout,
    pub(crate) backing: Backing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CleanupReport {
    pub mode: LoaderMode,
    pub freed_bytes: u64,
    pub deleted_files: Vec<PathBuf>,
}

/// `MemAvailable` from `/proc/meminfo`, when readable.
fn available_memory() -> Option<u64> {
    let text = std::fs::read_to_string("/proc/meminfo").ok()?;
    text.lines()
        .find(|l| l.starts_with("MemAvailable:"))
        .and_then(|l| l.split_whitespace().nth(1))
        .and_then(|kb| kb.parse::<u64>().ok())
        .map(|kb| kb * 1024)
}

/// Path of the decompressed artifact used by [`LoaderMode::Memmap`].
pub fn artifact_path(store_path: &Path) -> PathBuf {
    let mut s = store_path.as_os_str().to_owned();
    s.push(".decompressed");
    PathBuf::from(s)
}

fn lock_path(store_path: &Path) -> PathBuf {
    let mut s = artifact_path(store_path).into_os_string();
    s.push(".lock");
    PathBuf::from(s)
}

struct LockGuard(PathBuf);

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

fn acquire_lock(path: &Path, timeout: Duration) -> Result<LockGuard, LoaderError> {
    let start = Instant::now();
    loop {
        match OpenOptions::new().write(true).create_new(true).open(path) {
            Ok(_) => return Ok(LockGuard(path.to_path_buf())),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                if start.elapsed() >= timeout {
                    return Err(LoaderError::LockTimeout(path.to_path_buf()));
                }
                std::thread::sleep(Duration::from_millis(50));
            }
            Err(e) => return Err(e.into()),
        }
    }
}

fn map_file(path: &Path) -> std::io::Result<Mmap> {
    let file = File::open(path)?;
    // SAFETY: the artifact is only written under the lock before being mapped
    // and is never modified afterwards; it is replaced by rename, not rewritten.
    unsafe { Mmap::map(&file) }
}

/// Evicts the freshly written artifact from the page cache. Otherwise memmap
/// mode would leave a second full copy of the dataset resident, which is the
/// footprint it exists to avoid.
#[cfg(unix)]
fn drop_cached_pages(file: &File) {
    use std::os::fd::AsRawFd;
    // SAFETY: plain advisory syscall on an open descriptor.
    let rc = unsafe { libc::posix_fadvise(file.as_raw_fd(), 0, 0, libc::POSIX_FADV_DONTNEED) };
    if rc != 0 {
        log::debug!("posix_fadvise failed: {rc}");
    }
}

#[cfg(not(unix))]
fn drop_cached_pages(_file: &File) {}

fn build_memmap(store: &StoreHandle, store_path: &Path, layout: &FlatLayout, opts: &LoadOptions) -> Result<(Mmap, PathBuf), LoaderError> {
    let artifact = artifact_path(store_path);
    let fingerprint = flat::store_fingerprint(store);
    let _lock = acquire_lock(&lock_path(store_path), opts.lock_timeout)?;
    if artifact.exists() {
        let map = map_file(&artifact)?;
        if layout.matches(&map, fingerprint) {
            return Ok((map, artifact));
        }
        drop(map);
        log::info!("rebuilding stale artifact {}", artifact.display());
    }
    let mut tmp = artifact.clone().into_os_string();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut out = BufWriter::with_capacity(1 << 22, File::create(&tmp)?);
        flat::write_flat(store, layout, opts.exec, &mut out)?;
        let file = out.into_inner().map_err(|e| e.into_error())?;
        file.sync_all()?;
        drop_cached_pages(&file);
    }
    std::fs::rename(&tmp, &artifact)?;
    Ok((map_file(&artifact)?, artifact))
}

/// Decompresses into anonymous memory. Huge pages keep TLB misses down when
/// sampling random windows from a multi-GiB buffer.
fn anon_flat(store: &StoreHandle, layout: &FlatLayout, opts: &LoadOptions) -> Result<MmapMut, LoaderError> {
    let mut buf = MmapMut::map_anon(layout.total_bytes.max(1))?;
    #[cfg(target_os = "linux")]
    let _ = buf.advise(memmap2::Advice::HugePage);
    let mut cursor = std::io::Cursor::new(&mut buf[..]);
    flat::write_flat(store, layout, opts.exec, &mut cursor)?;
    Ok(buf)
}

/// Opens a store under `mode` with default options.
pub fn load(store_path: &Path, mode: LoaderMode) -> Result<DatasetHandle, LoaderError> {
    load_with(store_path, mode, &LoadOptions::default())
}

pub fn load_with(store_path: &Path, mode: LoaderMode, opts: &LoadOptions) -> Result<DatasetHandle, LoaderError> {
    let store = open_store(store_path)?;
    let lengths: Vec<usize> = (0..store.episode_count()).map(|i| store.step_count(i)).collect();
    let layout = FlatLayout::new(lengths);
    let backing = match mode {
        LoaderMode::InMemory => {
            let required = layout.total_bytes as u64;
            if let Some(available) = opts.memory_budget.or_else(available_memory) {
                if required > available {
                    return Err(LoaderError::InsufficientMemory { required, available });
                }
            }
            Backing::InMemory(anon_flat(&store, &layout, opts)?)
        }
        LoaderMode::Memmap => {
            let (map, artifact) = build_memmap(&store, store_path, &layout, opts)?;
            Backing::Memmap { map, artifact }
        }
        LoaderMode::CompressedOnRead => Backing::Compressed,
    };
    Ok(DatasetHandle {
        mode,
        store,
        store_path: store_path.to_path_buf(),
        layout,
        backing,
    })
}

impl DatasetHandle {
    pub fn mode(&self) -> LoaderMode {
        self.mode
    }

    pub fn store(&self) -> &StoreHandle {
        &self.store
    }

    pub fn store_path(&self) -> &Path {
        &self.store_path
    }

    pub fn episode_count(&self) -> usize {
        self.layout.lengths.len()
    }

    pub fn episode_lengths(&self) -> &[usize] {
        &self.layout.lengths
    }

    pub fn total_transitions(&self) -> u64 {
        self.layout.total_steps as u64
    }

    pub fn is_closed(&self) -> bool {
        matches!(self.backing, Backing::Closed)
    }

    /// Decompressed artifact path, for memory-mapped handles.
    pub fn artifact(&self) -> Option<&Path> {
        match &self.backing {
            Backing::Memmap { artifact, .. } => Some(artifact),
            _ => None,
        }
    }

    /// Flat bytes, for the in-memory and memory-mapped modes.
    pub(crate) fn flat_bytes(&self) -> Option<&[u8]> {
        match &self.backing {
            Backing::InMemory(v) => Some(v),
            Backing::Memmap { map, .. } => Some(map),
            _ => None,
        }
    }

    /// Copies `steps` steps of `field` for episode `ep` starting at `start`.
    pub(crate) fn copy_field(&self, field: Field, ep: usize, start: usize, steps: usize, out: &mut Vec<u8>) -> Result<(), LoaderError> {
        match &self.backing {
            Backing::Closed => Err(LoaderError::Closed),
            Backing::Compressed => {
                let bytes = self.store.read_field(ep, field)?;
                let sb = field.step_bytes();
                out.extend_from_slice(&bytes[start * sb..(start + steps) * sb]);
                Ok(())
            }
            _ => {
                let flat = self.flat_bytes().expect("flat backing");
                out.extend_from_slice(&flat[self.layout.field_range(field, ep, start, steps)]);
                Ok(())
            }
        }
    }

    /// Releases the loaded data. Memory-mapped artifacts are deleted; the
    /// compressed store is never touched.
    pub fn close(&mut self) -> Result<CleanupReport, LoaderError> {
        let backing = std::mem::replace(&mut self.backing, Backing::Closed);
        let report = match backing {
            Backing::Closed => return Err(LoaderError::DoubleClose),
            Backing::InMemory(buf) => CleanupReport {
                mode: self.mode,
                freed_bytes: buf.len() as u64,
                deleted_files: Vec::new(),
            },
            Backing::Memmap { map, artifact } => {
                let freed = map.len() as u64;
                drop(map);
                let mut deleted = Vec::new();
                match std::fs::remove_file(&artifact) {
                    Ok(()) => deleted.push(artifact),
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                    Err(e) => return Err(e.into()),
                }
                CleanupReport {
                    mode: self.mode,
                    freed_bytes: freed,
                    deleted_files: deleted,
                }
            }
            Backing::Compressed => CleanupReport {
                mode: self.mode,
                freed_bytes: 0,
                deleted_files: Vec::new(),
            },
        };
        Ok(report)
    }
}

pub fn close(handle: &mut DatasetHandle) -> Result<CleanupReport, LoaderError> {
    handle.close()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::store::{write_store, Compression};
    use crate::synth::random_episodes;

    pub(crate) fn tmp_store(n: usize, min: usize, max: usize, seed: u64) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ktb");
        write_store(&path, &random_episodes(n, min, max, seed), Compression::Deflate).unwrap();
        (dir, path)
    }

    #[test]
    fn close_in_memory() {
        let (_d, p) = tmp_store(3, 5, 10, 0);
        let mut h = load(&p, LoaderMode::InMemory).unwrap();
        let expected = h.layout.total_bytes as u64;
        let r = h.close().unwrap();
        assert_eq!(r.freed_bytes, expected);
        assert!(r.deleted_files.is_empty());
        assert!(matches!(h.close(), Err(LoaderError::DoubleClose)));
    }

    #[test]
    fn close_memmap_deletes_artifact_only() {
        let (_d, p) = tmp_store(3, 5, 10, 0);
        let mut h = load(&p, LoaderMode::Memmap).unwrap();
        let art = h.artifact().unwrap().to_path_buf();
        assert!(art.exists());
        assert!(!lock_path(&p).exists());
        let r = h.close().unwrap();
        assert_eq!(r.deleted_files, vec![art.clone()]);
        assert!(!art.exists());
        assert!(matches!(h.close(), Err(LoaderError::DoubleClose)));
        assert!(load(&p, LoaderMode::CompressedOnRead).is_ok());
        assert_eq!(open_store(&p).unwrap().episode_count(), 3);
    }

    #[test]
    fn memmap_reuses_valid_artifact_and_rebuilds_stale() {
        let (_d, p) = tmp_store(2, 5, 6, 1);
        let h1 = load(&p, LoaderMode::Memmap).unwrap();
        let art = h1.artifact().unwrap().to_path_buf();
        let m1 = std::fs::metadata(&art).unwrap().modified().unwrap();
        let h2 = load(&p, LoaderMode::Memmap).unwrap();
        assert_eq!(std::fs::metadata(&art).unwrap().modified().unwrap(), m1);
        drop((h1, h2));
        std::fs::write(&art, b"garbage").unwrap();
        let h3 = load(&p, LoaderMode::Memmap).unwrap();
        assert_eq!(std::fs::metadata(&art).unwrap().len() as usize, h3.layout.total_bytes);
    }

    #[test]
    fn insufficient_memory_is_reported() {
        let (_d, p) = tmp_store(2, 5, 6, 1);
        let opts = LoadOptions {
            memory_budget: Some(1000),
            ..Default::default()
        };
        match load_with(&p, LoaderMode::InMemory, &opts) {
            Err(LoaderError::InsufficientMemory { required, available }) => {
                assert_eq!(available, 1000);
                assert!(required > 1000);
            }
            Err(e) => panic!("unexpected error {e}"),
            Ok(_) => panic!("expected InsufficientMemory"),
        }
    }

    #[test]
    fn lengths_and_transitions() {
        let (_d, p) = tmp_store(4, 3, 9, 2);
        let store = open_store(&p).unwrap();
        for mode in LoaderMode::ALL {
            let h = load(&p, mode).unwrap();
            assert_eq!(h.total_transitions(), store.total_transitions());
            assert_eq!(h.episode_lengths().iter().sum::<usize>() as u64, h.total_transitions());
        }
    }
}
