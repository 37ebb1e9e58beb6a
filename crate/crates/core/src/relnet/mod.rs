//! Relation prediction between detected objects.
//!
//! Two context models share one readout: V-MOTIF runs a bidirectional LSTM
//! over the objects sorted top to bottom, V-IMP alternates GRU updates on
//! the object graph and its dual edge graph with attention-pooled messages.
//! Gradients are computed by the reverse-mode [`tape`].

pub mod checkpoint;
pub mod features;
pub mod model;
pub mod tape;
pub mod train;

pub use features::{featurize, CaseFeatures};
pub use model::{
    Architecture, ModelConfig, ObjectOrder, PairPrediction, RankMode, RelationModel, TrainingCase,
};
pub use train::{train, TrainConfig, TrainLog};
