//! Task identity, the embedded task catalog and the episode record schema.

mod catalog;
mod character;
mod episode;

pub use catalog::{
    catalog_category, catalog_json, catalog_stats, entries, normalization_scores, tasks_in,
    CatalogEntry, NormalizationScores, TaskCategory, TaskStats, DEFAULT_ACTION_VOCAB,
};
pub use character::{parse_task_id, Alignment, CharacterSpec, Race, Role};
pub use episode::{
    validate_episode, EpisodeMetadata, EpisodeRecord, ValidationReport, Violation, SCREEN_CELLS,
    SCREEN_COLS, SCREEN_ROWS,
};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DatasetError {
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("malformed task id `{0}` (expected role-race-alignment)")]
    MalformedId(String),
}
