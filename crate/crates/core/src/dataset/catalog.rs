//! Embedded catalog of the 38 benchmark tasks.
//!
//! Each row carries the per-task dataset statistics and the score anchors
//! (minimum, maximum and mean score of the data-generating bot) used for
//! normalization.

use serde::Serialize;

use super::character::{Alignment, CharacterSpec, Race, Role};
use super::DatasetError;

/// Task grouping by which character attribute varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskCategory {
    /// One task per role, human race.
    Base,
    /// Remaining role-race combinations.
    Extended,
    /// Remaining alignments.
    Complete,
}

impl TaskCategory {
    pub const ALL: [TaskCategory; 3] = [TaskCategory::Base, TaskCategory::Extended, TaskCategory::Complete];

    pub fn parse(text: &str) -> Option<Self> {
        match text.to_ascii_lowercase().as_str() {
            "base" => Some(TaskCategory::Base),
            "extended" => Some(TaskCategory::Extended),
            "complete" => Some(TaskCategory::Complete),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskCategory::Base => "base",
            TaskCategory::Extended => "extended",
            TaskCategory::Complete => "complete",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TaskStats {
    pub transitions: u64,
    pub median_turns: f64,
    pub median_score: f64,
    pub median_deathlvl: f64,
    pub size_gb: f64,
    pub compressed_size_gb: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalizationScores {
    pub min_score: f64,
    pub max_score: f64,
    pub mean_score: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct CatalogEntry {
    pub task: CharacterSpec,
    pub category: TaskCategory,
    pub stats: TaskStats,
    pub normalization: NormalizationScores,
}

/// Default size of the enumerated action vocabulary.
pub const DEFAULT_ACTION_VOCAB: usize = 121;

use Alignment::*;
use Race::*;
use Role::*;
use TaskCategory::*;

macro_rules! row {
    ($role:ident, $race:ident, $al:ident, $cat:ident,
     [$tr:literal, $turns:literal, $score:literal, $dlvl:literal, $size:literal, $csize:literal],
     [$min:literal, $max:literal, $mean:literal]) => {
        CatalogEntry {
            task: CharacterSpec { role: $role, race: $race, alignment: $al },
            category: $cat,
            stats: TaskStats {
                transitions: $tr,
                median_turns: $turns,
                median_score: $score,
                median_deathlvl: $dlvl,
                size_gb: $size,
                compressed_size_gb: $csize,
            },
            normalization: NormalizationScores { min_score: $min, max_score: $max, mean_score: $mean },
        }
    };
}

#[rustfmt::skip]
static CATALOG: [CatalogEntry; 38] = [
    row!(Archeologist, Human, Neutral, Base, [24527163, 32858.0, 4802.5, 2.0, 94.5, 1.3], [0.0, 138103.0, 6636.44]),
    row!(Barbarian, Human, Neutral, Base, [26266771, 35716.0, 11964.0, 4.0, 101.1, 1.7], [0.0, 292342.0, 17836.68]),
    row!(Caveman, Human, Neutral, Base, [21674680, 30361.0, 8152.0, 4.0, 83.5, 1.3], [0.0, 258978.0, 12113.87]),
    row!(Healer, Human, Neutral, Base, [14473997, 18051.0, 2043.0, 1.0, 55.7, 0.8], [0.0, 64337.0, 4068.27]),
    row!(Knight, Human, Lawful, Base, [22287283, 28246.0, 6305.0, 3.0, 85.8, 1.5], [0.0, 419154.0, 14137.06]),
    row!(Monk, Human, Neutral, Base, [33741542, 42400.0, 11356.0, 4.0, 129.9, 2.1], [0.0, 171224.0, 17456.05]),
    row!(Priest, Human, Neutral, Base, [18376473, 26796.5, 5366.5, 2.0, 70.8, 1.1], [0.0, 114269.0, 7732.69]),
    row!(Ranger, Human, Neutral, Base, [17625493, 25354.0, 6168.0, 2.0, 67.9, 1.0], [0.0, 54874.0, 8067.99]),
    row!(Rogue, Human, Chaotic, Base, [14284927, 19334.0, 3005.5, 1.0, 55.0, 0.8], [0.0, 68628.0, 4818.20]),
    row!(Samurai, Human, Lawful, Base, [22422537, 32951.0, 7850.0, 4.0, 86.3, 1.3], [0.0, 155163.0, 11009.36]),
    row!(Tourist, Human, Neutral, Base, [13376498, 17955.5, 2554.5, 1.0, 51.5, 0.8], [0.0, 59484.0, 4211.47]),
    row!(Valkyrie, Human, Neutral, Base, [27784788, 35250.0, 11402.5, 4.0, 107.0, 1.8], [16.0, 313858.0, 18624.77]),
    row!(Wizard, Human, Neutral, Base, [14343449, 19808.5, 3132.5, 1.0, 55.2, 0.8], [0.0, 71709.0, 5323.48]),

    row!(Priest, Elf, Chaotic, Extended, [18796560, 26909.5, 4718.5, 2.0, 72.4, 1.1], [0.0, 83744.0, 7109.35]),
    row!(Ranger, Elf, Chaotic, Extended, [18238686, 26607.0, 7583.0, 4.0, 70.2, 1.1], [0.0, 66690.0, 9014.18]),
    row!(Wizard, Elf, Chaotic, Extended, [15277820, 19512.0, 2988.5, 1.0, 58.8, 0.9], [0.0, 71664.0, 5005.16]),
    row!(Archeologist, Dwarf, Lawful, Extended, [25100788, 34669.0, 4026.0, 1.0, 96.7, 1.5], [0.0, 83496.0, 5445.69]),
    row!(Caveman, Dwarf, Lawful, Extended, [22871890, 32261.0, 7158.0, 3.0, 88.1, 1.5], [0.0, 161682.0, 11893.48]),
    row!(Valkyrie, Dwarf, Lawful, Extended, [32787658, 33973.0, 8652.5, 3.0, 126.6, 2.5], [0.0, 1136591.0, 23473.61]),
    row!(Archeologist, Gnome, Neutral, Extended, [24144048, 34432.0, 4077.5, 1.0, 93.0, 1.4], [0.0, 110054.0, 5316.57]),
    row!(Caveman, Gnome, Neutral, Extended, [21624779, 29860.0, 6446.0, 3.0, 83.3, 1.4], [0.0, 142460.0, 10083.06]),
    row!(Healer, Gnome, Neutral, Extended, [14884704, 18518.0, 1980.5, 1.0, 57.3, 0.9], [0.0, 69566.0, 3783.93]),
    row!(Ranger, Gnome, Neutral, Extended, [17571659, 25970.0, 5326.0, 2.0, 67.7, 1.1], [0.0, 58137.0, 6965.04]),
    row!(Wizard, Gnome, Neutral, Extended, [14193637, 19206.0, 2736.0, 1.0, 54.7, 0.9], [0.0, 37376.0, 4317.51]),
    row!(Barbarian, Orc, Chaotic, Extended, [27826356, 39291.0, 10499.0, 4.0, 107.2, 1.8], [0.0, 164296.0, 17594.38]),
    row!(Ranger, Orc, Chaotic, Extended, [18127448, 26707.0, 5460.0, 2.0, 69.8, 1.1], [3.0, 69244.0, 7608.48]),
    row!(Rogue, Orc, Chaotic, Extended, [16674806, 22351.0, 3103.0, 1.0, 64.2, 1.0], [0.0, 54892.0, 4897.69]),
    row!(Wizard, Orc, Chaotic, Extended, [15994150, 22570.5, 3241.5, 1.0, 61.6, 1.0], [0.0, 40871.0, 5016.74]),

    row!(Archeologist, Human, Lawful, Complete, [23422383, 31446.0, 4188.0, 1.0, 90.2, 1.3], [2.0, 84823.0, 5826.35]),
    row!(Caveman, Human, Lawful, Complete, [22328494, 31039.0, 8174.0, 4.0, 86.0, 1.3], [0.0, 156966.0, 12462.82]),
    row!(Monk, Human, Lawful, Complete, [30782317, 39647.0, 10855.0, 4.0, 118.5, 1.9], [7.0, 190783.0, 16091.57]),
    row!(Priest, Human, Lawful, Complete, [18298816, 27192.0, 4833.0, 1.0, 70.5, 1.1], [0.0, 99250.0, 6847.99]),
    row!(Valkyrie, Human, Lawful, Complete, [30171035, 34570.5, 9707.0, 4.0, 116.2, 2.1], [0.0, 428274.0, 26103.03]),
    row!(Barbarian, Human, Chaotic, Complete, [25362111, 35925.0, 12574.0, 5.0, 97.7, 1.6], [0.0, 164446.0, 18228.11]),
    row!(Monk, Human, Chaotic, Complete, [33662420, 41730.5, 11418.0, 4.0, 129.6, 2.1], [0.0, 223997.0, 18353.30]),
    row!(Priest, Human, Chaotic, Complete, [18667816, 28204.5, 5847.0, 2.0, 71.9, 1.1], [0.0, 58367.0, 8262.56]),
    row!(Ranger, Human, Chaotic, Complete, [16999630, 24698.5, 6236.0, 2.0, 65.6, 1.0], [3.0, 62599.0, 8378.50]),
    row!(Wizard, Human, Chaotic, Complete, [14635591, 20257.0, 3294.0, 1.0, 56.4, 0.9], [0.0, 55185.0, 5316.82]),
];

/// All catalogue rows in table order (Base, Extended, Complete).
pub fn entries() -> &'static [CatalogEntry] {
    &CATALOG
}

pub(crate) fn lookup(task: CharacterSpec) -> Option<&'static CatalogEntry> {
    CATALOG.iter().find(|e| e.task == task)
}

fn entry(task: CharacterSpec) -> Result<&'static CatalogEntry, DatasetError> {
    lookup(task).ok_or_else(|| DatasetError::UnknownTask(task.to_string()))
}

pub fn catalog_stats(task: CharacterSpec) -> Result<TaskStats, DatasetError> {
    entry(task).map(|e| e.stats)
}

pub fn catalog_category(task: CharacterSpec) -> Result<TaskCategory, DatasetError> {
    entry(task).map(|e| e.category)
}

pub fn normalization_scores(task: CharacterSpec) -> Result<NormalizationScores, DatasetError> {
    entry(task).map(|e| e.normalization)
}

/// Tasks of one category, in table order.
pub fn tasks_in(category: TaskCategory) -> impl Iterator<Item = CharacterSpec> {
    CATALOG
        .iter()
        .filter(move |e| e.category == category)
        .map(|e| e.task)
}

/// Catalogue as a JSON array of rows.
pub fn catalog_json() -> serde_json::Value {
    serde_json::Value::Array(
        CATALOG
            .iter()
            .map(|e| {
                serde_json::json!({
                    "task": e.task.to_string(),
                    "category": e.category,
                    "stats": e.stats,
                    "normalization": e.normalization,
                })
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn t(id: &str) -> CharacterSpec {
        CharacterSpec::parse(id).unwrap()
    }

    #[test]
    fn category_counts() {
        assert_eq!(CATALOG.len(), 38);
        assert_eq!(tasks_in(Base).count(), 13);
        assert_eq!(tasks_in(Extended).count(), 15);
        assert_eq!(tasks_in(Complete).count(), 10);
        let unique: HashSet<_> = CATALOG.iter().map(|e| e.task).collect();
        assert_eq!(unique.len(), 38);
    }

    #[test]
    fn base_covers_every_role_once() {
        let roles: HashSet<_> = tasks_in(Base).map(|s| s.role).collect();
        assert_eq!(roles.len(), Role::ALL.len());
        assert!(tasks_in(Base).all(|s| s.race == Race::Human));
    }

    #[test]
    fn row_invariants() {
        for e in entries() {
            let s = e.stats;
            assert!(s.compressed_size_gb < s.size_gb, "{}", e.task);
            assert!(s.median_deathlvl >= 1.0);
            let n = e.normalization;
            assert!(n.min_score <= n.mean_score && n.mean_score <= n.max_score, "{}", e.task);
            assert!(n.max_score > n.min_score);
        }
    }

    #[test]
    fn spot_values() {
        assert_eq!(catalog_stats(t("mon-hum-neu")).unwrap().transitions, 33741542);
        assert_eq!(catalog_stats(t("tou-hum-neu")).unwrap().median_score, 2554.5);
        assert_eq!(catalog_stats(t("bar-hum-cha")).unwrap().median_deathlvl, 5.0);
        assert_eq!(catalog_category(t("kni-hum-law")).unwrap(), Base);
        assert_eq!(catalog_category(t("val-dwa-law")).unwrap(), Extended);
        assert_eq!(catalog_category(t("wiz-hum-cha")).unwrap(), Complete);
        let n = normalization_scores(t("arc-hum-neu")).unwrap();
        assert_eq!((n.min_score, n.max_score, n.mean_score), (0.0, 138103.0, 6636.44));
        assert_eq!(normalization_scores(t("val-hum-neu")).unwrap().min_score, 16.0);
        assert_eq!(normalization_scores(t("val-dwa-law")).unwrap().max_score, 1136591.0);
    }

    #[test]
    fn unknown_triple_is_rejected() {
        let bogus = CharacterSpec {
            role: Role::Monk,
            race: Race::Elf,
            alignment: Alignment::Neutral,
        };
        assert!(matches!(catalog_stats(bogus), Err(DatasetError::UnknownTask(_))));
    }

    #[test]
    fn json_export_has_all_rows() {
        let v = catalog_json();
        assert_eq!(v.as_array().unwrap().len(), 38);
        assert_eq!(v[0]["task"], "arc-hum-neu");
    }
}
