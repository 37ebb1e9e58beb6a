//! Run configuration: a flat `key = value` text file.
//!
//! Blank lines and `#` comments are ignored. Every key is optional; unknown
//! and repeated keys are errors. [`KEYS`] lists each key with its default.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use voxsg::geometry::Connectivity;
use voxsg::instancing::InstancingConfig;
use voxsg::metrics::{MatchSpec, Task};
use voxsg::relnet::{Architecture, ModelConfig, ObjectOrder, RankMode, TrainConfig};

use crate::error::CliError;

/// `(key, default, description)` for every accepted key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("dataset", "", "dataset directory"),
    ("out", "", "output directory"),
    ("seeds", "0,1,2,3,4", "comma-separated training seeds"),
    ("arch", "v-motif", "v-motif or v-imp"),
    ("hidden", "16", "hidden state size"),
    ("iterations", "2", "message passing rounds (v-imp)"),
    ("grid", "8", "occupancy grid edge for grounding"),
    ("grounding", "false", "segmentation grounding"),
    ("order", "top-to-bottom", "v-motif object order: top-to-bottom or size"),
    ("epochs", "60", "maximum training epochs"),
    ("learning_rate", "0.05", "SGD step size"),
    ("momentum", "0.9", "SGD momentum"),
    ("batch_size", "8", "cases per mini-batch"),
    ("clip_norm", "5", "global gradient norm cap, 0 disables"),
    ("patience", "15", "early stopping patience in epochs, 0 disables"),
    ("eval_k", "8", "K used for model selection"),
    ("min_bleeding_volume_cm3", "0.05", "smallest kept bleeding component"),
    ("connectivity", "26", "bleeding component connectivity: 6 or 26"),
    ("min_anatomy_voxels", "10", "smallest kept ventricle or midline"),
    ("task", "predcls", "predcls or sggen"),
    ("k", "8", "relations kept per case"),
    ("iou_threshold", "0.3", "localization threshold"),
    ("rank_mode", "constrained", "constrained or unconstrained"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub instancing: InstancingConfig,
    pub matching: MatchSpec,
    pub rank_mode: RankMode,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            out: None,
            seeds: vec![0, 1, 2, 3, 4],
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            instancing: InstancingConfig::default(),
            matching: MatchSpec::default(),
            rank_mode: RankMode::Constrained,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("invalid value {value:?} for `{key}`: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("invalid value {value:?} for `{key}`: expected true or false")),
    }
}

pub fn parse_seeds(value: &str) -> Result<Vec<u64>, String> {
    let seeds = value
        .split(',')
        .map(|s| parse::<u64>("seeds", s.trim()))
        .collect::<Result<Vec<_>, _>>()?;
    if seeds.is_empty() {
        return Err("`seeds` must list at least one seed".into());
    }
    Ok(seeds)
}

pub fn parse_connectivity(value: &str) -> Result<Connectivity, String> {
    parse::<u32>("connectivity", value)
        .ok()
        .and_then(Connectivity::from_count)
        .ok_or_else(|| format!("invalid value {value:?} for `connectivity`: expected 6 or 26"))
}

pub fn parse_rank_mode(value: &str) -> Result<RankMode, String> {
    match value {
        "constrained" => Ok(RankMode::Constrained),
        "unconstrained" => Ok(RankMode::Unconstrained),
        _ => Err(format!("invalid value {value:?} for `rank_mode`")),
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "seeds" => self.seeds = parse_seeds(value)?,
            "arch" => self.model.arch = parse::<Architecture>(key, value)?,
            "hidden" => self.model.hidden = parse(key, value)?,
            "iterations" => self.model.iterations = parse(key, value)?,
            "grid" => self.model.grid = parse(key, value)?,
            "grounding" => self.model.grounding = parse_bool(key, value)?,
            "order" => self.model.order = parse::<ObjectOrder>(key, value)?,
            "epochs" => self.train.epochs = parse(key, value)?,
            "learning_rate" => self.train.learning_rate = parse(key, value)?,
            "momentum" => self.train.momentum = parse(key, value)?,
            "batch_size" => self.train.batch_size = parse(key, value)?,
            "clip_norm" => self.train.clip_norm = parse(key, value)?,
            "patience" => self.train.patience = parse(key, value)?,
            "eval_k" => self.train.eval_k = parse(key, value)?,
            "min_bleeding_volume_cm3" => self.instancing.min_bleeding_volume_cm3 = parse(key, value)?,
            "connectivity" => self.instancing.connectivity = parse_connectivity(value)?,
            "min_anatomy_voxels" => self.instancing.min_anatomy_voxels = parse(key, value)?,
            "task" => self.matching.task = parse::<Task>(key, value)?,
            "k" => self.matching.k = parse(key, value)?,
            "iou_threshold" => self.matching.iou_threshold = parse(key, value)?,
            "rank_mode" => self.rank_mode = parse_rank_mode(value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn parse_str(text: &str) -> Result<Self, CliError> {
        let mut config = RunConfig::default();
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fail = |msg: String| CliError::Usage(format!("config line {}: {msg}", n + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| fail(format!("expected `key = value`, found {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(fail(format!("`{key}` given more than once")));
            }
            config.set(key, value).map_err(fail)?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.train.validate()?;
        self.instancing.validate()?;
        self.matching.validate()?;
        Ok(())
    }

    /// The configuration as a config file, every key spelled out.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        let rank = match self.rank_mode {
            RankMode::Constrained => "constrained",
            RankMode::Unconstrained => "unconstrained",
        };
        let order = match self.model.order {
            ObjectOrder::TopToBottom => "top-to-bottom",
            ObjectOrder::Size => "size",
        };
        let values = [
            path(&self.dataset),
            path(&self.out),
            seeds.join(","),
            self.model.arch.name().to_string(),
            self.model.hidden.to_string(),
            self.model.iterations.to_string(),
            self.model.grid.to_string(),
            self.model.grounding.to_string(),
            order.to_string(),
            self.train.epochs.to_string(),
            self.train.learning_rate.to_string(),
            self.train.momentum.to_string(),
            self.train.batch_size.to_string(),
            self.train.clip_norm.to_string(),
            self.train.patience.to_string(),
            self.train.eval_k.to_string(),
            self.instancing.min_bleeding_volume_cm3.to_string(),
            self.instancing.connectivity.count().to_string(),
            self.instancing.min_anatomy_voxels.to_string(),
            self.matching.task.name().to_string(),
            self.matching.k.to_string(),
            self.matching.iou_threshold.to_string(),
            rank.to_string(),
        ];
        KEYS.iter()
            .zip(values)
            .filter(|(_, v)| !v.is_empty())
            .map(|((k, _, _), v)| format!("{k} = {v}\n"))
            .collect()
    }
}
