use std::fmt;
use std::path::{Path, PathBuf};

use permlearn::tasks::{generate_instance, InstanceSpec, TaskKind};
use permlearn::train::{Mode, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// A config problem, anchored to a line of the source document.
#[derive(Debug)]
pub struct ConfigError {
    pub path: PathBuf,
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {}", self.path.display(), self.line, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskBlock {
    #[serde(flatten)]
    pub spec: InstanceSpec,
    #[serde(default)]
    pub anchors: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    #[serde(default)]
    pub h0: Vec<f64>,
    #[serde(default)]
    pub b_max: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    task: TaskBlock,
    #[serde(default)]
    train: Map<String, Value>,
    modes: Vec<Mode>,
    seeds: Vec<u64>,
    #[serde(default)]
    sweep: Option<Sweep>,
    #[serde(default)]
    out_dir: Option<PathBuf>,
}

/// One (h0, b_max) point of the sweep grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Cell {
    pub h0: f64,
    pub b_max: f64,
}

/// A validated experiment: the task preset with the `train` block merged in.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub task: TaskBlock,
    pub train: TrainConfig,
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
    pub sweep: Option<Sweep>,
    pub out_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.to_owned(),
            line: 0,
            message: format!("cannot read config: {e}"),
        })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let fail = |key: &str, message: String| ConfigError {
            path: path.to_owned(),
            line: key_line(text, key),
            message,
        };
        let raw: RawConfig = serde_json::from_str(text).map_err(|e| ConfigError {
            path: path.to_owned(),
            line: e.line(),
            message: e.to_string(),
        })?;

        let mut merged = serde_json::to_value(TrainConfig::for_task(raw.task.spec.kind())).expect("preset serializes");
        merge(&mut merged, Value::Object(raw.train));
        let train: TrainConfig = serde_json::from_value(merged).map_err(|e| fail("train", format!("train: {e}")))?;
        train.validate().map_err(|e| fail("train", format!("train: {e}")))?;

        if raw.modes.is_empty() {
            return Err(fail("modes", "modes must not be empty".into()));
        }
        if raw.seeds.is_empty() {
            return Err(fail("seeds", "seeds must not be empty".into()));
        }
        let kind = raw.task.spec.kind();
        if raw.modes.contains(&Mode::DegreeAdaptive) && kind != TaskKind::Tsp {
            return Err(fail(
                "modes",
                format!("degree_adaptive needs a tsp task, got {}", kind.name()),
            ));
        }
        generate_instance(&raw.task.spec, raw.task.anchors, raw.seeds[0])
            .map_err(|e| fail("task", format!("task: {e}")))?;

        let config = Self {
            task: raw.task,
            train,
            modes: raw.modes,
            seeds: raw.seeds,
            sweep: raw.sweep,
            out_dir: raw.out_dir,
        };
        for cell in config.cells() {
            config
                .train_for(cell, 0)
                .controller
                .validate()
                .map_err(|e| fail("sweep", format!("sweep: {e}")))?;
        }
        Ok(config)
    }

    /// Sweep grid in row-major (h0, b_max) order; a missing axis uses the
    /// trained controller value.
    pub fn cells(&self) -> Vec<Cell> {
        let sweep = self.sweep.clone().unwrap_or_default();
        let h0s = if sweep.h0.is_empty() {
            vec![self.train.controller.h0]
        } else {
            sweep.h0
        };
        let bs = if sweep.b_max.is_empty() {
            vec![self.train.controller.b_max]
        } else {
            sweep.b_max
        };
        h0s.iter()
            .flat_map(|&h0| bs.iter().map(move |&b_max| Cell { h0, b_max }))
            .collect()
    }

    pub fn train_for(&self, cell: Cell, seed: u64) -> TrainConfig {
        let mut cfg = self.train.clone();
        cfg.controller.h0 = cell.h0;
        cfg.controller.b_max = cell.b_max;
        cfg.seed = seed;
        cfg
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// 1-based line of the first occurrence of `"key"`, or 1.
fn key_line(text: &str, key: &str) -> usize {
    let needle = format!("\"{key}\"");
    text.lines().position(|l| l.contains(&needle)).map_or(1, |i| i + 1)
}
