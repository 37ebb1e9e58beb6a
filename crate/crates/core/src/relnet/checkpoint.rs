//! JSON checkpoints. Floats are written with round-trip precision, so a
//! saved model reloads bit-identically.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, RelationModel};
use super::tape::ParamSet;
use crate::error::{Error, Result};

const FORMAT: &str = "voxsg-relation-model";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct StoredTensor {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Stored {
    format: String,
    version: u32,
    config: ModelConfig,
    params: Vec<StoredTensor>,
}

pub fn to_json(model: &RelationModel) -> String {
    let stored = Stored {
        format: FORMAT.into(),
        version: VERSION,
        config: model.config,
        params: model
            .params
            .names
            .iter()
            .zip(&model.params.tensors)
            .map(|(n, t)| StoredTensor {
                name: n.clone(),
                rows: t.rows,
                cols: t.cols,
                data: t.data.clone(),
            })
            .collect(),
    };
    serde_json::to_string(&stored).expect("checkpoint serializes")
}

pub fn from_json(text: &str) -> Result<RelationModel> {
    let stored: Stored =
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("invalid checkpoint: {e}")))?;
    if stored.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format {:?}", stored.format)));
    }
    if stored.version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", stored.version)));
    }
    let mut params = ParamSet::default();
    for t in stored.params {
        let id = params.add(t.name, t.rows, t.cols);
        params.get_mut(id).data = t.data;
    }
    RelationModel::from_params(stored.config, params)
}

pub fn save(model: &RelationModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_json(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<RelationModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}
