use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{ModelConfig, RankMode, RelationModel, TrainingCase, CLASSES};
use crate::error::{Error, Result};
use crate::metrics::{recall_suite, MatchSpec, Task};
use crate::scene::SceneGraph;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// Global gradient norm cap; 0 disables clipping.
    pub clip_norm: f64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub eval_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            learning_rate: 0.05,
            momentum: 0.9,
            batch_size: 8,
            clip_norm: 5.0,
            patience: 15,
            eval_k: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_k == 0 {
            return Err(Error::InvalidConfig("batch_size and eval_k must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && (0.0..1.0).contains(&self.momentum)) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} / momentum {} out of range",
                self.learning_rate, self.momentum
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub val_recall: f64,
    pub val_mean_recall: f64,
    pub val_map: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub class_weights: [f64; CLASSES],
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_recall: f64,
    pub best_val_mean_recall: f64,
    pub best_val_map: f64,
}

/// Weight of the none class: related over unrelated pairs; predicates get 1.
pub fn class_weights(cases: &[&TrainingCase]) -> [f64; CLASSES] {
    let related = cases.iter().flat_map(|c| &c.targets).filter(|&&t| t != 0).count();
    let unrelated = cases.iter().flat_map(|c| &c.targets).filter(|&&t| t == 0).count();
    let none = if unrelated == 0 || related == 0 {
        1.0
    } else {
        related as f64 / unrelated as f64
    };
    [none, 1.0, 1.0, 1.0]
}

/// Predicate-classification R@K, mR@K and mAP@K of `model` on `cases`.
pub fn validation_scores(model: &RelationModel, cases: &[TrainingCase], k: usize) -> Result<(f64, f64, f64)> {
    let preds = cases
        .iter()
        .map(|c| model.predict_graph(&c.features, &c.graph, RankMode::Constrained))
        .collect::<Result<Vec<SceneGraph>>>()?;
    let pairs: Vec<(&SceneGraph, &SceneGraph)> = preds.iter().zip(cases.iter().map(|c| &c.graph)).collect();
    let spec = MatchSpec {
        k,
        task: Task::PredCls,
        ..Default::default()
    };
    let r = recall_suite(&pairs, &spec);
    Ok((r.recall, r.mean_recall, r.map))
}

/// Mini-batch SGD with momentum. Cases without relations are not used.
///
/// Early stopping tracks validation R@K (training cases when `val` is
/// empty). R@K saturates quickly when few pairs compete for `K` slots, so
/// ties are broken by mR@K and then mAP@K. The best epoch's model is
/// returned.
pub fn train(
    train_cases: &[TrainingCase],
    val: &[TrainingCase],
    model_config: ModelConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<(RelationModel, TrainLog)> {
    config.validate()?;
    let cases: Vec<&TrainingCase> = train_cases
        .iter()
        .filter(|c| c.targets.iter().any(|&t| t != 0))
        .collect();
    if cases.is_empty() {
        return Err(Error::EmptyDataset("no training case carries a relation".into()));
    }
    let weights = class_weights(&cases);
    let mut model = RelationModel::init(model_config, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut velocity = model.params.zeros_like();
    let owned_train: Vec<TrainingCase>;
    let val_set: &[TrainingCase] = if val.is_empty() {
        owned_train = cases.iter().map(|&c| c.clone()).collect();
        &owned_train
    } else {
        val
    };

    let mut best_model = model.clone();
    let mut log = TrainLog {
        class_weights: weights,
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_recall: f64::NEG_INFINITY,
        best_val_mean_recall: f64::NEG_INFINITY,
        best_val_map: f64::NEG_INFINITY,
    };
    let mut order: Vec<usize> = (0..cases.len()).collect();
    let mut stale = 0;
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let refs: Vec<&TrainingCase> = batch.iter().map(|&i| cases[i]).collect();
            let (loss, mut grads) = model.loss_and_grad(&refs, &weights);
            epoch_loss += loss * batch.len() as f64;
            if config.clip_norm > 0.0 {
                let norm = grads
                    .iter()
                    .flat_map(|g| &g.data)
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt();
                if norm > config.clip_norm {
                    let s = config.clip_norm / norm;
                    grads.iter_mut().for_each(|g| g.data.iter_mut().for_each(|v| *v *= s));
                }
            }
            for ((p, v), g) in model.params.tensors.iter_mut().zip(&mut velocity).zip(&grads) {
                for ((pv, vv), gv) in p.data.iter_mut().zip(&mut v.data).zip(&g.data) {
                    *vv = config.momentum * *vv + gv;
                    *pv -= config.learning_rate * *vv;
                }
            }
        }
        if !model.params.all_finite() {
            return Err(Error::InvalidConfig(format!(
                "training diverged at epoch {epoch}; lower the learning rate"
            )));
        }
        let (val_recall, val_mean_recall, val_map) = validation_scores(&model, val_set, config.eval_k)?;
        log.epochs.push(EpochLog {
            epoch,
            loss: epoch_loss / cases.len() as f64,
            val_recall,
            val_mean_recall,
            val_map,
        });
        let score = (val_recall, val_mean_recall, val_map);
        let best = (log.best_val_recall, log.best_val_mean_recall, log.best_val_map);
        if score.partial_cmp(&best) == Some(std::cmp::Ordering::Greater) {
            (log.best_val_recall, log.best_val_mean_recall, log.best_val_map) = score;
            log.best_epoch = epoch;
            best_model = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if config.patience > 0 && stale >= config.patience {
                break;
            }
        }
    }
    Ok((best_model, log))
}
