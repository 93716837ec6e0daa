//! Conversion of source streams into aligned episode records, reward shaping
//! and stratified subsampling, plus the one-time import into a KTB1 store.

mod align;
mod rawstream;
mod stratify;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

pub use align::{align_episode, shape_rewards, RawStepTuple};
pub use rawstream::{read_raw_episode, write_raw_episode, RawEpisode, RAW_MAGIC, STEP_RECORD_BYTES};
pub use stratify::{ks_statistic, subsample_stratified, Selection, StrataPlan};

use crate::dataset::{CharacterSpec, EpisodeMetadata, EpisodeRecord};
use crate::exec::Exec;
use crate::store::{Compression, PackedEpisode, StoreError, StoreWriter, WriteSummary};

#[derive(Debug, thiserror::Error)]
pub enum RepackError {
    #[error("empty raw stream")]
    EmptyStream,
    #[error("terminal flag at step {step} of a {len}-step stream")]
    NonMonotoneTermination { step: usize, len: usize },
    #[error("stream ends without a terminal step")]
    MissingTerminal,
    #[error("step {step}: screen arrays have the wrong size")]
    BadScreen { step: usize },
    #[error("target of {target} episodes exceeds population of {population}")]
    TargetExceedsPopulation { target: usize, population: usize },
    #[error("invalid strata plan: {0}")]
    InvalidPlan(String),
    #[error("{path}: stream belongs to task {found}, expected {expected}")]
    TaskMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Aligns a parsed raw episode, deriving its metadata from the stream.
pub fn align_raw(raw: &RawEpisode, task: CharacterSpec) -> Result<EpisodeRecord, RepackError> {
    let metadata = EpisodeMetadata {
        character: task,
        final_score: raw.final_score().max(0),
        death_level: raw.death_level.max(1),
        turns: raw.steps.len().max(1) as u64,
        episode_id: raw.episode_id.clone(),
    };
    align_episode(&raw.steps, raw.final_delta, metadata)
}

/// Raw-stream files (`*.ktr`) in `dir`, sorted by file name.
pub fn list_raw_streams(dir: &Path) -> Result<Vec<PathBuf>, RepackError> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ktr"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn write_raw_file(path: &Path, ep: &RawEpisode) -> Result<(), RepackError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_raw_episode(&mut w, ep)?;
    Ok(())
}

pub fn read_raw_file(path: &Path) -> Result<RawEpisode, RepackError> {
    let file = File::open(path).map_err(|source| RepackError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    read_raw_episode(&mut BufReader::new(file)).map_err(|source| RepackError::Read {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ImportSummary {
    pub population: usize,
    pub selected: usize,
    pub selection: Selection,
    pub store: WriteSummary,
}

/// One-time import: read every raw stream in `input`, select episodes by
/// score-stratified subsampling, align them and write a KTB1 store.
///
/// Streams are parsed under `exec`; the store is written in input order, so
/// the output file is identical for identical `(input, plan)`.
pub fn import_source(
    input: &Path,
    task: CharacterSpec,
    plan: &StrataPlan,
    output: &Path,
    compression: Compression,
    exec: Exec,
) -> Result<ImportSummary, RepackError> {
    let files = list_raw_streams(input)?;
    let expected = task.to_string();
    // First pass keeps only final scores so the population never sits in memory.
    let scores = exec.map_slice(&files, |p| -> Result<i64, RepackError> {
        let raw = read_raw_file(p)?;
        if raw.task_id != expected {
            return Err(RepackError::TaskMismatch {
                path: p.clone(),
                found: raw.task_id,
                expected: expected.clone(),
            });
        }
        Ok(raw.final_score())
    });
    let scores = scores.into_iter().collect::<Result<Vec<_>, _>>()?;
    let selection = subsample_stratified(&scores, plan)?;
    if selection.ids.is_empty() {
        return Err(StoreError::ValidationFailed("no episodes selected".into()).into());
    }

    let mut writer = StoreWriter::create(output, &expected, compression)?;
    for chunk in selection.ids.chunks(32) {
        let packed = exec.map_slice(chunk, |&i| -> Result<PackedEpisode, RepackError> {
            let record = align_raw(&read_raw_file(&files[i])?, task)?;
            let report = crate::dataset::validate_episode(&record);
            if !report.is_ok() {
                return Err(StoreError::ValidationFailed(format!("{}: {report}", files[i].display())).into());
            }
            Ok(PackedEpisode::pack(&record, compression)?)
        });
        for p in packed {
            writer.push_packed(p?)?;
        }
    }
    let store = writer.finish()?;
    Ok(ImportSummary {
        population: files.len(),
        selected: selection.ids.len(),
        selection,
        store,
    })
}
