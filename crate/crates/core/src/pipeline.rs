//! Glue between datasets, relation models and metrics.

use rayon::prelude::*;

use crate::dataset::{Dataset, Split};
use crate::error::Result;
use crate::instancing::{extract_objects, InstancingConfig};
use crate::metrics::{check_upper_bound, recall_suite, upper_bound_recall, MatchSpec, RecallReport, Task, UpperBound};
use crate::relnet::{featurize, CaseFeatures, ModelConfig, RankMode, RelationModel, TrainingCase};
use crate::scene::SceneGraph;
use crate::volume::LabelMap;

/// Predicate-classification input: ground-truth objects, grounded on the
/// ground-truth label map.
pub fn predcls_case(labels: &LabelMap, gt: &SceneGraph, model: &ModelConfig) -> Result<TrainingCase> {
    let f = featurize(&gt.objects, gt.shape, Some(labels), model.grounding, model.grid)
        .map_err(|e| e.in_case(&gt.case_id))?;
    Ok(TrainingCase::new(f, gt))
}

/// Detection-based input: objects instanced from a (degraded) label map.
#[derive(Clone, Debug)]
pub struct SggenCase {
    pub features: CaseFeatures,
    /// Detected objects, no relations.
    pub detections: SceneGraph,
    pub gt: SceneGraph,
}

pub fn sggen_case(
    labels: &LabelMap,
    gt: &SceneGraph,
    instancing: &InstancingConfig,
    model: &ModelConfig,
) -> Result<SggenCase> {
    let objects = extract_objects(labels, instancing, None);
    let features = featurize(&objects, gt.shape, Some(labels), model.grounding, model.grid)
        .map_err(|e| e.in_case(&gt.case_id))?;
    let detections = SceneGraph {
        case_id: gt.case_id.clone(),
        shape: gt.shape,
        spacing: gt.spacing,
        objects,
        relations: Vec::new(),
    };
    Ok(SggenCase {
        features,
        detections,
        gt: gt.clone(),
    })
}

pub fn load_predcls(ds: &Dataset, split: Split, model: &ModelConfig) -> Result<Vec<TrainingCase>> {
    ds.ids(Some(split))
        .par_iter()
        .map(|id| predcls_case(&ds.labels(id)?, &ds.graph(id)?, model))
        .collect()
}

pub fn load_sggen(
    ds: &Dataset,
    split: Split,
    instancing: &InstancingConfig,
    model: &ModelConfig,
) -> Result<Vec<SggenCase>> {
    ds.ids(Some(split))
        .par_iter()
        .map(|id| sggen_case(&ds.degraded_labels(id)?, &ds.graph(id)?, instancing, model))
        .collect()
}

pub fn predict_predcls(model: &RelationModel, cases: &[TrainingCase], mode: RankMode) -> Result<Vec<SceneGraph>> {
    cases
        .par_iter()
        .map(|c| model.predict_graph(&c.features, &c.graph, mode))
        .collect()
}

pub fn predict_sggen(model: &RelationModel, cases: &[SggenCase], mode: RankMode) -> Result<Vec<SceneGraph>> {
    cases
        .par_iter()
        .map(|c| model.predict_graph(&c.features, &c.detections, mode))
        .collect()
}

pub fn evaluate_predcls(model: &RelationModel, cases: &[TrainingCase], spec: &MatchSpec, mode: RankMode) -> Result<RecallReport> {
    let preds = predict_predcls(model, cases, mode)?;
    let pairs: Vec<_> = preds.iter().zip(cases.iter().map(|c| &c.graph)).collect();
    Ok(recall_suite(&pairs, &MatchSpec { task: Task::PredCls, ..*spec }))
}

/// Recall of detection-based prediction and its detection upper bound. Fails
/// if the recall exceeds the bound.
pub fn evaluate_sggen(
    model: &RelationModel,
    cases: &[SggenCase],
    spec: &MatchSpec,
    mode: RankMode,
) -> Result<(RecallReport, UpperBound)> {
    let preds = predict_sggen(model, cases, mode)?;
    let spec = MatchSpec { task: Task::SgGen, ..*spec };
    let pairs: Vec<_> = preds.iter().zip(cases.iter().map(|c| &c.gt)).collect();
    let report = recall_suite(&pairs, &spec);
    let det: Vec<_> = cases.iter().map(|c| (&c.detections, &c.gt)).collect();
    let bound = upper_bound_recall(&det, &spec);
    check_upper_bound(&report, &bound)?;
    Ok((report, bound))
}
