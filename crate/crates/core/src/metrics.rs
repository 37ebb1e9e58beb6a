//! Detection and relation metrics.
//!
//! Triplet recall follows the usual scene-graph protocol: per image, the top
//! `K` predicted relations are matched one-to-one against ground-truth
//! relations. `mAP@K` is defined here as the mean over predicates of the
//! all-point interpolated AP over the dataset-wide ranking of every image's
//! top-`K` predictions of that predicate. Numbers are comparable only
//! between runs of this crate.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou3, match_detections};
use crate::scene::{Category, Predicate, Relation, SceneGraph};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Ground-truth objects given; predictions refer to gt object ids.
    #[default]
    PredCls,
    /// Objects detected first; endpoints matched by box IoU.
    SgGen,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "predcls" => Ok(Task::PredCls),
            "sggen" => Ok(Task::SgGen),
            other => Err(Error::InvalidConfig(format!(
                "unknown task {other:?} (expected predcls or sggen)"
            ))),
        }
    }
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::PredCls => "predcls",
            Task::SgGen => "sggen",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchSpec {
    pub iou_threshold: f64,
    pub k: usize,
    pub task: Task,
}

impl Default for MatchSpec {
    fn default() -> Self {
        MatchSpec {
            iou_threshold: 0.3,
            k: 8,
            task: Task::PredCls,
        }
    }
}

impl MatchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidConfig("K must be at least 1".into()));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "IoU threshold {} outside (0, 1]",
                self.iou_threshold
            )));
        }
        Ok(())
    }
}

/// How the precision-recall curve is integrated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ApMode {
    /// Area under the monotone precision envelope.
    #[default]
    Interpolated,
    /// Mean of raw precision at each true positive.
    Raw,
}

/// Average precision of a ranked list of true/false positives against
/// `positives` ground-truth items. Items must already be ranked.
pub fn average_precision(ranked_tp: &[bool], positives: usize, mode: ApMode) -> f64 {
    if positives == 0 {
        return 0.0;
    }
    let mut tp = 0usize;
    let mut precision = Vec::with_capacity(ranked_tp.len());
    for (i, &hit) in ranked_tp.iter().enumerate() {
        if hit {
            tp += 1;
        }
        precision.push(tp as f64 / (i + 1) as f64);
    }
    if mode == ApMode::Interpolated {
        for i in (0..precision.len().saturating_sub(1)).rev() {
            precision[i] = precision[i].max(precision[i + 1]);
        }
    }
    let sum: f64 = ranked_tp
        .iter()
        .zip(&precision)
        .filter(|(&hit, _)| hit)
        .map(|(_, &p)| p)
        .sum();
    sum / positives as f64
}

/// Relations sorted by descending score, ties in list order, cut to `k`.
pub fn top_k(relations: &[Relation], k: usize) -> Vec<Relation> {
    let mut r = relations.to_vec();
    r.sort_by(|a, b| b.score.total_cmp(&a.score));
    r.truncate(k);
    r
}

fn endpoints_match(pred: &SceneGraph, r: &Relation, gt: &SceneGraph, g: &Relation, spec: &MatchSpec) -> bool {
    if r.predicate != g.predicate {
        return false;
    }
    match spec.task {
        Task::PredCls => r.subject == g.subject && r.object == g.object,
        Task::SgGen => {
            let boxes = (
                pred.object(r.subject),
                pred.object(r.object),
                gt.object(g.subject),
                gt.object(g.object),
            );
            let (Some(ps), Some(po), Some(gs), Some(go)) = boxes else {
                return false;
            };
            iou3(&ps.bbox, &gs.bbox) >= spec.iou_threshold && iou3(&po.bbox, &go.bbox) >= spec.iou_threshold
        }
    }
}

/// Outcome of matching one image's predictions.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletMatch {
    /// The top-`K` predictions in rank order.
    pub ranked: Vec<Relation>,
    /// Matched gt relation index per ranked prediction.
    pub gt_of: Vec<Option<usize>>,
}

impl TripletMatch {
    pub fn matched_count(&self) -> usize {
        self.gt_of.iter().flatten().count()
    }
}

/// One-to-one matching of the top-`K` predictions to gt relations.
///
/// Predictions are taken in rank order and each is matched whenever an
/// augmenting path exists, so higher-ranked predictions are never displaced
/// and the number of matches is maximal.
pub fn match_triplets(pred: &SceneGraph, gt: &SceneGraph, spec: &MatchSpec) -> TripletMatch {
    let ranked = top_k(&pred.relations, spec.k);
    let adj: Vec<Vec<usize>> = ranked
        .iter()
        .map(|r| {
            (0..gt.relations.len())
                .filter(|&g| endpoints_match(pred, r, gt, &gt.relations[g], spec))
                .collect()
        })
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; gt.relations.len()];
    fn augment(p: usize, adj: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
        for &g in &adj[p] {
            if seen[g] {
                continue;
            }
            seen[g] = true;
            if owner[g].is_none_or(|q| augment(q, adj, owner, seen)) {
                owner[g] = Some(p);
                return true;
            }
        }
        false
    }
    for p in 0..ranked.len() {
        let mut seen = vec![false; gt.relations.len()];
        augment(p, &adj, &mut owner, &mut seen);
    }
    let mut gt_of = vec![None; ranked.len()];
    for (g, o) in owner.iter().enumerate() {
        if let Some(p) = o {
            gt_of[*p] = Some(g);
        }
    }
    TripletMatch { ranked, gt_of }
}

/// Order-independent mean: values are sorted before summation.
fn stable_mean(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub task: Task,
    pub k: usize,
    pub iou_threshold: f64,
    /// Cases with at least one gt relation.
    pub cases: usize,
    pub recall: f64,
    pub mean_recall: f64,
    pub map: f64,
    /// Keyed by predicate name; only predicates present in the gt appear.
    pub per_predicate_recall: BTreeMap<String, f64>,
    pub per_predicate_ap: BTreeMap<String, f64>,
}

impl RecallReport {
    pub fn scalars(&self) -> BTreeMap<String, f64> {
        let k = self.k;
        let mut m = BTreeMap::new();
        m.insert(format!("R@{k}"), self.recall);
        m.insert(format!("mR@{k}"), self.mean_recall);
        m.insert(format!("mAP@{k}"), self.map);
        for (p, v) in &self.per_predicate_recall {
            m.insert(format!("R@{k} {p}"), *v);
        }
        m
    }
}

/// Per-case recall split by predicate: (matched, total) per predicate.
fn predicate_counts(gt: &SceneGraph, matched: &[bool]) -> [(usize, usize); 3] {
    let mut c = [(0, 0); 3];
    for (g, r) in gt.relations.iter().enumerate() {
        let slot = &mut c[r.predicate.index()];
        slot.1 += 1;
        if matched[g] {
            slot.0 += 1;
        }
    }
    c
}

/// Fold per-case (matched flags, gt) into R, per-predicate R and mR.
fn aggregate_recall(per_case: &[(&SceneGraph, Vec<bool>)]) -> (f64, [Option<f64>; 3], f64) {
    let mut recalls = Vec::with_capacity(per_case.len());
    let mut per_pred: [Vec<f64>; 3] = Default::default();
    for (gt, matched) in per_case {
        let hits = matched.iter().filter(|&&m| m).count();
        recalls.push(hits as f64 / gt.relations.len() as f64);
        for (p, (m, t)) in predicate_counts(gt, matched).into_iter().enumerate() {
            if t > 0 {
                per_pred[p].push(m as f64 / t as f64);
            }
        }
    }
    let recall = stable_mean(&mut recalls);
    let mut pp = [None; 3];
    let mut present = Vec::new();
    for (p, v) in per_pred.iter_mut().enumerate() {
        if !v.is_empty() {
            let r = stable_mean(v);
            pp[p] = Some(r);
            present.push(r);
        }
    }
    let mean_recall = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };
    (recall, pp, mean_recall)
}

fn named(values: &[Option<f64>; 3]) -> BTreeMap<String, f64> {
    Predicate::ALL
        .iter()
        .filter_map(|p| values[p.index()].map(|v| (p.name().to_string(), v)))
        .collect()
}

/// R@K, mR@K and mAP@K over `(prediction, ground truth)` pairs. Cases whose
/// ground truth has no relations are skipped.
pub fn recall_suite(cases: &[(&SceneGraph, &SceneGraph)], spec: &MatchSpec) -> RecallReport {
    let mut per_case = Vec::new();
    // (score, case id, rank, tp) per predicate
    let mut ranked: [Vec<(f64, &str, usize, bool)>; 3] = Default::default();
    let mut positives = [0usize; 3];
    for &(pred, gt) in cases {
        if gt.relations.is_empty() {
            continue;
        }
        let m = match_triplets(pred, gt, spec);
        let mut matched = vec![false; gt.relations.len()];
        for g in m.gt_of.iter().flatten() {
            matched[*g] = true;
        }
        for (rank, (r, g)) in m.ranked.iter().zip(&m.gt_of).enumerate() {
            ranked[r.predicate.index()].push((r.score, gt.case_id.as_str(), rank, g.is_some()));
        }
        for r in &gt.relations {
            positives[r.predicate.index()] += 1;
        }
        per_case.push((gt, matched));
    }
    let (recall, per_pred, mean_recall) = aggregate_recall(&per_case);

    let mut ap = [None; 3];
    for p in 0..3 {
        if positives[p] == 0 {
            continue;
        }
        let list = &mut ranked[p];
        list.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)).then(a.2.cmp(&b.2)));
        let flags: Vec<bool> = list.iter().map(|e| e.3).collect();
        ap[p] = Some(average_precision(&flags, positives[p], ApMode::Interpolated));
    }
    let present: Vec<f64> = ap.iter().flatten().copied().collect();
    let map = if present.is_empty() {
        0.0
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    };

    RecallReport {
        task: spec.task,
        k: spec.k,
        iou_threshold: spec.iou_threshold,
        cases: per_case.len(),
        recall,
        mean_recall,
        map,
        per_predicate_recall: named(&per_pred),
        per_predicate_ap: named(&ap),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpperBound {
    pub cases: usize,
    pub recall: f64,
    pub mean_recall: f64,
    pub per_predicate_recall: BTreeMap<String, f64>,
}

/// Fraction of gt relations whose two endpoints are each covered by some
/// detection of the same category at IoU at least `spec.iou_threshold`.
/// `cases` holds `(detections, ground truth)`.
pub fn upper_bound_recall(cases: &[(&SceneGraph, &SceneGraph)], spec: &MatchSpec) -> UpperBound {
    let mut per_case = Vec::new();
    for &(det, gt) in cases {
        if gt.relations.is_empty() {
            continue;
        }
        let found = |id: u32| -> bool {
            let Some(g) = gt.object(id) else { return false };
            det.objects
                .iter()
                .any(|d| d.category == g.category && iou3(&d.bbox, &g.bbox) >= spec.iou_threshold)
        };
        let matched: Vec<bool> = gt
            .relations
            .iter()
            .map(|r| found(r.subject) && found(r.object))
            .collect();
        per_case.push((gt, matched));
    }
    let (recall, per_pred, mean_recall) = aggregate_recall(&per_case);
    UpperBound {
        cases: per_case.len(),
        recall,
        mean_recall,
        per_predicate_recall: named(&per_pred),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryDetection {
    pub gts: usize,
    pub predictions: usize,
    pub ar: f64,
    pub ap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub iou_threshold: f64,
    pub per_category: BTreeMap<String, CategoryDetection>,
    /// Means over categories with at least one gt object.
    pub ar: f64,
    pub ap: f64,
}

impl DetectionReport {
    pub fn scalars(&self) -> BTreeMap<String, f64> {
        let t = (self.iou_threshold * 100.0).round();
        let mut m = BTreeMap::new();
        m.insert(format!("AR{t}"), self.ar);
        m.insert(format!("AP{t}"), self.ap);
        for (c, d) in &self.per_category {
            m.insert(format!("AR{t} {c}"), d.ar);
            m.insert(format!("AP{t} {c}"), d.ap);
        }
        m
    }
}

/// Per-category AR and AP over `(predictions, ground truth)` pairs.
pub fn detection_metrics(cases: &[(&SceneGraph, &SceneGraph)], iou_threshold: f64) -> DetectionReport {
    let mut per_category = BTreeMap::new();
    let mut ars = Vec::new();
    let mut aps = Vec::new();
    for cat in Category::ALL {
        let mut gts_total = 0;
        let mut preds_total = 0;
        let mut matched = 0;
        let mut ranked: Vec<(f64, &str, usize, bool)> = Vec::new();
        for &(pred, gt) in cases {
            let p: Vec<_> = pred.objects_of(cat).cloned().collect();
            let g: Vec<_> = gt.objects_of(cat).cloned().collect();
            let m = match_detections(&p, &g, iou_threshold);
            gts_total += g.len();
            preds_total += p.len();
            matched += m.pairs.len();
            for (i, o) in p.iter().enumerate() {
                ranked.push((o.score, gt.case_id.as_str(), i, m.gt_for_prediction(i).is_some()));
            }
        }
        ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)).then(a.2.cmp(&b.2)));
        let flags: Vec<bool> = ranked.iter().map(|e| e.3).collect();
        let (ar, ap) = if gts_total == 0 {
            (0.0, 0.0)
        } else {
            (
                matched as f64 / gts_total as f64,
                average_precision(&flags, gts_total, ApMode::Interpolated),
            )
        };
        if gts_total > 0 {
            ars.push(ar);
            aps.push(ap);
        }
        per_category.insert(
            cat.name().to_string(),
            CategoryDetection {
                gts: gts_total,
                predictions: preds_total,
                ar,
                ap,
            },
        );
    }
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    DetectionReport {
        iou_threshold,
        per_category,
        ar: mean(&ars),
        ap: mean(&aps),
    }
}

/// Fails when a scene-graph-generation recall exceeds its detection upper
/// bound, which would indicate a matching bug.
pub fn check_upper_bound(sggen: &RecallReport, bound: &UpperBound) -> Result<()> {
    const SLACK: f64 = 1e-12;
    if sggen.recall > bound.recall + SLACK {
        return Err(Error::InvalidConfig(format!(
            "R@{} {} exceeds its upper bound {}",
            sggen.k, sggen.recall, bound.recall
        )));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Per-metric mean and population standard deviation over runs.
pub fn aggregate_seeds(reports: &[BTreeMap<String, f64>]) -> Result<BTreeMap<String, MeanStd>> {
    let first = reports
        .first()
        .ok_or_else(|| Error::EmptyDataset("no reports to aggregate".into()))?;
    if let Some(r) = reports.iter().find(|r| r.keys().ne(first.keys())) {
        return Err(Error::ShapeMismatch(format!(
            "reports carry different metrics: {:?} vs {:?}",
            first.keys().collect::<Vec<_>>(),
            r.keys().collect::<Vec<_>>()
        )));
    }
    let n = reports.len() as f64;
    Ok(first
        .keys()
        .map(|k| {
            let vals: Vec<f64> = reports.iter().map(|r| r[k]).collect();
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            (k.clone(), MeanStd { mean, std: var.sqrt() })
        })
        .collect())
}

/// Aligned text table with values scaled by 100, one row per method.
pub fn format_table(columns: &[String], rows: &[(String, BTreeMap<String, MeanStd>)]) -> String {
    let cell = |m: Option<&MeanStd>| match m {
        Some(m) => format!("{:.1} ± {:.1}", 100.0 * m.mean, 100.0 * m.std),
        None => "-".to_string(),
    };
    let mut table: Vec<Vec<String>> = Vec::with_capacity(rows.len() + 1);
    table.push(std::iter::once("Method".to_string()).chain(columns.iter().cloned()).collect());
    for (name, vals) in rows {
        table.push(
            std::iter::once(name.clone())
                .chain(columns.iter().map(|c| cell(vals.get(c))))
                .collect(),
        );
    }
    let widths: Vec<usize> = (0..=columns.len())
        .map(|c| table.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in table.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let pad = widths[c] - s.chars().count();
                if c == 0 {
                    format!("{s}{}", " ".repeat(pad))
                } else {
                    format!("{}{s}", " ".repeat(pad))
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
        if i == 0 {
            let total = widths.iter().sum::<usize>() + 2 * columns.len();
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
    }
    out
}

/// CSV with `<metric>_mean,<metric>_std` columns.
pub fn format_csv(columns: &[String], rows: &[(String, BTreeMap<String, MeanStd>)]) -> String {
    let mut out = String::from("method");
    for c in columns {
        let _ = write!(out, ",{c}_mean,{c}_std");
    }
    out.push('\n');
    for (name, vals) in rows {
        out.push_str(name);
        for c in columns {
            match vals.get(c) {
                Some(m) => {
                    let _ = write!(out, ",{},{}", m.mean, m.std);
                }
                None => out.push_str(",,"),
            }
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Box3;
    use crate::scene::tests::example_graph;
    use crate::scene::SceneObject;

    fn rel(s: u32, o: u32, p: Predicate, score: f64) -> Relation {
        Relation {
            subject: s,
            object: o,
            predicate: p,
            score,
        }
    }

    #[test]
    fn ap_of_tp_fp_tp_tp() {
        let ranked = [true, false, true, true];
        let raw = average_precision(&ranked, 3, ApMode::Raw);
        assert!((raw - (1.0 + 2.0 / 3.0 + 0.75) / 3.0).abs() < 1e-12);
        assert_eq!(format!("{raw:.4}"), "0.8056");
        let interp = average_precision(&ranked, 3, ApMode::Interpolated);
        assert!((interp - 2.5 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn predictions_equal_to_gt_match_fully() {
        let gt = example_graph();
        let r = recall_suite(&[(&gt, &gt)], &MatchSpec::default());
        assert_eq!((r.recall, r.mean_recall, r.map), (1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_enumerated_mean_recall() {
        let mut gt = example_graph();
        gt.objects.push(SceneObject::new(4, Category::Bleeding, Box3::new([8, 8, 8], [9, 9, 9]).unwrap(), 1.0));
        gt.relations = vec![
            rel(0, 2, Predicate::BloodFlow, 1.0),
            rel(1, 2, Predicate::BloodFlow, 1.0),
            rel(4, 3, Predicate::MidlineShift, 1.0),
        ];
        let mut pred = gt.clone();
        pred.relations = vec![
            rel(0, 2, Predicate::BloodFlow, 0.9),
            rel(4, 3, Predicate::MidlineShift, 0.8),
            rel(1, 2, Predicate::VentricleAsymmetry, 0.7),
        ];
        let r = recall_suite(&[(&pred, &gt)], &MatchSpec::default());
        assert!((r.recall - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.mean_recall - 0.75).abs() < 1e-15);
    }

    #[test]
    fn higher_ranked_duplicate_consumes_gt() {
        let gt = example_graph();
        let mut pred = gt.clone();
        let g = gt.relations[0];
        pred.relations = vec![rel(g.subject, g.object, g.predicate, 0.4), rel(g.subject, g.object, g.predicate, 0.9)];
        let m = match_triplets(&pred, &gt, &MatchSpec::default());
        assert_eq!(m.ranked[0].score, 0.9);
        assert_eq!(m.gt_of, vec![Some(0), None]);
    }

    #[test]
    fn sggen_iou_threshold_is_enforced() {
        let mut gt = SceneGraph::new("c", [10, 10, 100], [1.0; 3]);
        gt.objects = vec![
            SceneObject::new(0, Category::Bleeding, Box3::new([0, 0, 0], [1, 1, 100]).unwrap(), 1.0),
            SceneObject::new(1, Category::Midline, Box3::new([5, 5, 0], [6, 6, 10]).unwrap(), 1.0),
        ];
        gt.relations = vec![rel(0, 1, Predicate::MidlineShift, 1.0)];
        let mut pred = gt.clone();
        // 29 of 100 voxels overlap: IoU 0.29
        pred.objects[0].bbox = Box3::new([0, 0, 71], [1, 1, 100]).unwrap();
        let spec = MatchSpec { task: Task::SgGen, ..Default::default() };
        assert!((iou3(&pred.objects[0].bbox, &gt.objects[0].bbox) - 0.29).abs() < 1e-12);
        assert_eq!(recall_suite(&[(&pred, &gt)], &spec).recall, 0.0);
        pred.objects[0].bbox = Box3::new([0, 0, 70], [1, 1, 100]).unwrap();
        assert_eq!(recall_suite(&[(&pred, &gt)], &spec).recall, 1.0);
    }

    #[test]
    fn upper_bound_with_missing_midline() {
        let gt = example_graph();
        let mut det = gt.clone();
        det.objects.retain(|o| o.category != Category::Midline);
        let spec = MatchSpec { task: Task::SgGen, ..Default::default() };
        let ub = upper_bound_recall(&[(&det, &gt)], &spec);
        assert_eq!(ub.recall, 0.5);
        assert_eq!(upper_bound_recall(&[(&gt, &gt)], &spec).recall, 1.0);
        det.objects.clear();
        assert_eq!(upper_bound_recall(&[(&det, &gt)], &spec).recall, 0.0);
    }

    #[test]
    fn detection_edge_cases() {
        let gt = example_graph();
        let full = detection_metrics(&[(&gt, &gt)], 0.3);
        assert_eq!((full.ar, full.ap), (1.0, 1.0));
        let empty = SceneGraph::new("case", gt.shape, gt.spacing);
        let none = detection_metrics(&[(&empty, &gt)], 0.3);
        assert_eq!((none.ar, none.ap), (0.0, 0.0));
    }

    #[test]
    fn seed_aggregation() {
        let r = |v: f64| BTreeMap::from([("R@8".to_string(), v)]);
        let agg = aggregate_seeds(&[r(0.6), r(0.7)]).unwrap();
        assert!((agg["R@8"].mean - 0.65).abs() < 1e-15);
        assert!((agg["R@8"].std - 0.05).abs() < 1e-15);
        let one = aggregate_seeds(&[r(0.3)]).unwrap();
        assert_eq!((one["R@8"].mean, one["R@8"].std), (0.3, 0.0));
        assert!(aggregate_seeds(&[]).is_err());
    }

    #[test]
    fn table_layout() {
        let cols = vec!["R@8".to_string(), "mR@8".to_string()];
        let row = BTreeMap::from([
            ("R@8".to_string(), MeanStd { mean: 0.65, std: 0.05 }),
            ("mR@8".to_string(), MeanStd { mean: 1.0, std: 0.0 }),
        ]);
        let t = format_table(&cols, &[("v-motif".into(), row)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("v-motif"));
        assert!(lines[2].contains("65.0 ± 5.0"));
        assert!(lines[2].ends_with("100.0 ± 0.0"));
    }
}
