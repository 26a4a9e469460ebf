use serde::{Deserialize, Serialize};

use super::Task;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variability {
    /// Target and drawer at their nominal positions.
    Fixed,
    /// Positions jittered along `x` only.
    Var1,
    /// Positions jittered along `x` and `y`.
    Var2,
    /// As `Var2`, plus the robot base slides along the table edge.
    Var3,
}

/// One cell of the dataset grid. Serialized as the flat JSON object read
/// by `gen-data --config`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    pub variability: Variability,
    #[serde(default)]
    pub distractors: usize,
    pub tasks: Vec<Task>,
}

/// The 34 grid cells. `var2-reach` and `var2-lift` are the same datasets as
/// `random-reach` and `random-lift` and are accepted as aliases.
pub const PRESET_NAMES: [&str; 34] = [
    "fixed-reach", "fixed-move-left", "fixed-move-right", "fixed-lift", "fixed-2actions", "fixed-3actions",
    "random-reach", "random-move-left", "random-move-right", "random-lift", "random-2actions", "random-3actions",
    "random-1d-reach", "random-1d-move-left", "random-1d-move-right", "random-1d-lift", "random-1d-2actions", "random-1d-3actions",
    "random-2d-reach", "random-2d-move-left", "random-2d-move-right", "random-2d-lift", "random-2d-2actions", "random-2d-3actions",
    "var1-reach", "var1-lift", "var1-insert", "var1-close",
    "var2-insert", "var2-close",
    "var3-reach", "var3-lift", "var3-insert", "var3-close",
];

impl DatasetConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let canonical = match name {
            "var2-reach" => "random-reach",
            "var2-lift" => "random-lift",
            other => other,
        };
        let unknown = || Error::Config(format!("unknown preset `{name}`"));
        if !PRESET_NAMES.contains(&canonical) {
            return Err(unknown());
        }
        let (scene, tasks) = canonical.rsplit_once('-').ok_or_else(unknown)?;
        // "move-left" and "move-right" contain a dash themselves
        let (scene, tasks) = match (scene.strip_suffix("-move"), tasks) {
            (Some(s), "left") => (s, "move-left"),
            (Some(s), "right") => (s, "move-right"),
            _ => (scene, tasks),
        };
        let (variability, distractors) = match scene {
            "fixed" => (Variability::Fixed, 0),
            "random" | "var2" => (Variability::Var2, 0),
            "random-1d" => (Variability::Var2, 1),
            "random-2d" => (Variability::Var2, 2),
            "var1" => (Variability::Var1, 0),
            "var3" => (Variability::Var3, 0),
            _ => return Err(unknown()),
        };
        let tasks = match tasks {
            "reach" => vec![Task::Reach],
            "move-left" => vec![Task::MoveLeft],
            "move-right" => vec![Task::MoveRight],
            "lift" => vec![Task::Lift],
            "2actions" => vec![Task::MoveRight, Task::Lift],
            "3actions" => vec![Task::MoveRight, Task::MoveLeft, Task::Lift],
            "insert" => vec![Task::ReachLiftInsert],
            "close" => vec![Task::ReachLiftInsertClose],
            _ => return Err(unknown()),
        };
        Ok(Self { name: canonical.to_string(), variability, distractors, tasks })
    }

    pub fn presets() -> Vec<Self> {
        PRESET_NAMES.iter().map(|n| Self::preset(n).expect("preset names parse")).collect()
    }

    /// Parses a config file body. Unknown keys and task names are reported
    /// by name.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Config("`tasks` must name at least one task".into()));
        }
        if self.distractors > 2 {
            return Err(Error::Config(format!("`distractors` is {}, at most 2 fit the object set", self.distractors)));
        }
        let drawer = self.tasks.iter().filter(|t| t.needs_drawer()).count();
        if drawer != 0 && drawer != self.tasks.len() {
            return Err(Error::Config("drawer and non-drawer tasks cannot share a dataset".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_presets_parse_and_are_distinct() {
        let all = DatasetConfig::presets();
        assert_eq!(all.len(), 34);
        for (i, a) in all.iter().enumerate() {
            a.validate().unwrap();
            for b in &all[i + 1..] {
                assert!(a.variability != b.variability || a.distractors != b.distractors || a.tasks != b.tasks, "{} == {}", a.name, b.name);
            }
        }
    }

    #[test]
    fn aliases_map_to_grid_a() {
        assert_eq!(DatasetConfig::preset("var2-reach").unwrap(), DatasetConfig::preset("random-reach").unwrap());
        assert_eq!(DatasetConfig::preset("var2-lift").unwrap().name, "random-lift");
        assert!(DatasetConfig::preset("var2-move-left").is_err());
        assert!(DatasetConfig::preset("nonsense").is_err());
        assert!(DatasetConfig::preset("fixed-dance").is_err());
    }

    #[test]
    fn two_actions_are_move_right_and_lift() {
        assert_eq!(DatasetConfig::preset("random-1d-2actions").unwrap().tasks, vec![Task::MoveRight, Task::Lift]);
    }

    #[test]
    fn json_errors_name_the_offending_key() {
        let err = DatasetConfig::from_json(r#"{"name":"x","variability":"fixed","tasks":["dance"]}"#).unwrap_err();
        assert!(err.to_string().contains("dance"), "{err}");
        let err = DatasetConfig::from_json(r#"{"name":"x","variability":"fixed","tasks":["reach"],"colour":1}"#).unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
        let cfg = DatasetConfig::preset("var3-close").unwrap();
        assert_eq!(DatasetConfig::from_json(&cfg.to_json()).unwrap(), cfg);
    }
}
