//! On-disk phantom datasets.
//!
//! ```text
//! <root>/manifest.json
//! <root>/cases/<id>/labels.nii.gz
//! <root>/cases/<id>/graph.json
//! ```
//!
//! The manifest records the generator config, the master seed, every case
//! with its seed and split, and dataset statistics.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph_io::{read_scene_graph, write_scene_graph};
use crate::instancing::degrade_labelmap;
use crate::nifti::{read_volume, write_volume};
use crate::phantom::{case_seed, generate, splitmix64, PhantomConfig};
use crate::scene::{stats, DatasetStats, SceneGraph};
use crate::volume::LabelMap;

const FORMAT: &str = "voxsg-dataset";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub id: String,
    pub seed: u64,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub master_seed: u64,
    pub config: PhantomConfig,
    pub cases: Vec<CaseEntry>,
    pub stats: DatasetStats,
}

/// Split sizes for `n` cases: one sixth test, the rest 80/20 train/val.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let test = n / 6;
    let val = (n - test) / 5;
    (n - test - val, val, test)
}

pub fn case_id(index: usize) -> String {
    format!("case_{index:04}")
}

/// Generate `n` phantoms under `root` and write the manifest.
pub fn generate_dataset(root: impl AsRef<Path>, config: &PhantomConfig, n: usize, master_seed: u64) -> Result<Manifest> {
    let root = root.as_ref();
    if n == 0 {
        return Err(Error::InvalidConfig("a dataset needs at least one case".into()));
    }
    config.validate()?;
    let (_, n_val, n_test) = split_sizes(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(master_seed));
    let mut splits = vec![Split::Train; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_test {
            Split::Test
        } else if rank < n_test + n_val {
            Split::Val
        } else {
            Split::Train
        };
    }

    let cases_dir = root.join("cases");
    fs::create_dir_all(&cases_dir).map_err(|e| Error::io(&cases_dir, e))?;
    let graphs = (0..n)
        .into_par_iter()
        .map(|i| -> Result<SceneGraph> {
            let id = case_id(i);
            let seed = case_seed(master_seed, i);
            let p = generate(config, seed, &id).map_err(|e| e.in_case(&id))?;
            let dir = cases_dir.join(&id);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_volume(&p.labels.to_volume(), dir.join("labels.nii.gz"))?;
            write_scene_graph(&p.graph, dir.join("graph.json"))?;
            Ok(p.graph)
        })
        .collect::<Result<Vec<_>>>()?;

    let manifest = Manifest {
        format: FORMAT.into(),
        master_seed,
        config: config.clone(),
        cases: (0..n)
            .map(|i| CaseEntry {
                id: case_id(i),
                seed: case_seed(master_seed, i),
                split: splits[i],
            })
            .collect(),
        stats: stats(&graphs),
    };
    let path = root.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        let path = root.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::schema("manifest.json", e.to_string()))?;
        if manifest.format != FORMAT {
            return Err(Error::schema("manifest.json", format!("unknown format {:?}", manifest.format)));
        }
        Ok(Dataset { root, manifest })
    }

    pub fn case_dir(&self, id: &str) -> PathBuf {
        self.root.join("cases").join(id)
    }

    pub fn ids(&self, split: Option<Split>) -> Vec<String> {
        self.manifest
            .cases
            .iter()
            .filter(|c| split.is_none_or(|s| c.split == s))
            .map(|c| c.id.clone())
            .collect()
    }

    fn entry(&self, id: &str) -> Result<&CaseEntry> {
        self.manifest
            .cases
            .iter()
            .find(|c| c.id == id)
            .ok_or_else(|| Error::schema("case", format!("no case {id:?} in the manifest")))
    }

    pub fn labels(&self, id: &str) -> Result<LabelMap> {
        let vol = read_volume(self.case_dir(id).join("labels.nii.gz")).map_err(|e| e.in_case(id))?;
        LabelMap::try_from(&vol).map_err(|e| e.in_case(id))
    }

    pub fn graph(&self, id: &str) -> Result<SceneGraph> {
        read_scene_graph(self.case_dir(id).join("graph.json")).map_err(|e| e.in_case(id))
    }

    /// The label map after the configured segmentation noise, seeded per case.
    pub fn degraded_labels(&self, id: &str) -> Result<LabelMap> {
        let seed = splitmix64(self.entry(id)?.seed);
        Ok(degrade_labelmap(&self.labels(id)?, seed, &self.manifest.config.noise))
    }
}
