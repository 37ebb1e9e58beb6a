//! Box arithmetic, connected components and detection matching.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::scene::SceneObject;
use crate::volume::{linear_index, LabelMap, Shape};

/// Axis-aligned half-open box in voxel index space: voxel `v` belongs iff
/// `min <= v < max` on every axis (`z, y, x` order).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[usize; 6]", into = "[usize; 6]")]
pub struct Box3 {
    pub min: [usize; 3],
    pub max: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmptyBox;

impl fmt::Display for EmptyBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("box must satisfy min < max on every axis")
    }
}

impl TryFrom<[usize; 6]> for Box3 {
    type Error = EmptyBox;

    fn try_from(v: [usize; 6]) -> Result<Self, EmptyBox> {
        Box3::new([v[0], v[1], v[2]], [v[3], v[4], v[5]]).ok_or(EmptyBox)
    }
}

impl From<Box3> for [usize; 6] {
    fn from(b: Box3) -> Self {
        [b.min[0], b.min[1], b.min[2], b.max[0], b.max[1], b.max[2]]
    }
}

impl Box3 {
    /// `None` unless `min < max` on every axis.
    pub fn new(min: [usize; 3], max: [usize; 3]) -> Option<Self> {
        (0..3)
            .all(|a| min[a] < max[a])
            .then_some(Box3 { min, max })
    }

    pub fn extent(&self, axis: usize) -> usize {
        self.max[axis] - self.min[axis]
    }

    pub fn volume(&self) -> u64 {
        (0..3).map(|a| self.extent(a) as u64).product()
    }

    /// Geometric center in voxel coordinates (box edges at integer planes).
    pub fn center(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| (self.min[a] + self.max[a]) as f64 / 2.0)
    }

    pub fn intersection(&self, other: &Box3) -> Option<Box3> {
        let min = [0, 1, 2].map(|a| self.min[a].max(other.min[a]));
        let max = [0, 1, 2].map(|a| self.max[a].min(other.max[a]));
        Box3::new(min, max)
    }

    pub fn intersection_volume(&self, other: &Box3) -> u64 {
        self.intersection(other).map_or(0, |b| b.volume())
    }

    pub fn union_bound(&self, other: &Box3) -> Box3 {
        Box3 {
            min: [0, 1, 2].map(|a| self.min[a].min(other.min[a])),
            max: [0, 1, 2].map(|a| self.max[a].max(other.max[a])),
        }
    }

    pub fn contains(&self, v: [usize; 3]) -> bool {
        (0..3).all(|a| self.min[a] <= v[a] && v[a] < self.max[a])
    }

    pub fn fits_in(&self, shape: Shape) -> bool {
        (0..3).all(|a| self.max[a] <= shape[a])
    }

    /// The box covering the whole grid.
    pub fn full(shape: Shape) -> Option<Box3> {
        Box3::new([0; 3], shape)
    }
}

/// Intersection over union measured in voxels.
pub fn iou3(a: &Box3, b: &Box3) -> f64 {
    let inter = a.intersection_volume(b);
    if inter == 0 {
        return 0.0;
    }
    let union = a.volume() + b.volume() - inter;
    inter as f64 / union as f64
}

/// Incremental tight bound over voxel coordinates.
#[derive(Clone, Copy, Debug, Default)]
pub struct BoundAccumulator {
    bound: Option<([usize; 3], [usize; 3])>,
}

impl BoundAccumulator {
    #[inline]
    pub fn add(&mut self, v: [usize; 3]) {
        match &mut self.bound {
            None => self.bound = Some((v, v)),
            Some((lo, hi)) => {
                for a in 0..3 {
                    lo[a] = lo[a].min(v[a]);
                    hi[a] = hi[a].max(v[a]);
                }
            }
        }
    }

    pub fn finish(&self) -> Option<Box3> {
        self.bound
            .map(|(lo, hi)| Box3 { min: lo, max: hi.map(|v| v + 1) })
    }
}

/// Tightest box containing every voxel labelled `category`.
pub fn bbox_of_label(map: &LabelMap, category: u8) -> Option<Box3> {
    let [nz, ny, nx] = map.shape();
    let labels = map.labels();
    let mut acc = BoundAccumulator::default();
    let mut idx = 0;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if labels[idx] == category {
                    acc.add([z, y, x]);
                }
                idx += 1;
            }
        }
    }
    acc.finish()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbours only.
    Six,
    /// Face, edge and corner neighbours.
    #[default]
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Option<Self> {
        match n {
            6 => Some(Connectivity::Six),
            26 => Some(Connectivity::TwentySix),
            _ => None,
        }
    }

    pub fn count(self) -> u32 {
        match self {
            Connectivity::Six => 6,
            Connectivity::TwentySix => 26,
        }
    }

    pub fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let manhattan = dz.abs() + dy.abs() + dx.abs();
                    let keep = match self {
                        Connectivity::Six => manhattan == 1,
                        Connectivity::TwentySix => manhattan > 0,
                    };
                    if keep {
                        out.push([dz, dy, dx]);
                    }
                }
            }
        }
        out
    }
}

#[inline]
pub(crate) fn neighbor(shape: Shape, v: [usize; 3], d: [isize; 3]) -> Option<[usize; 3]> {
    let mut out = [0usize; 3];
    for a in 0..3 {
        let c = v[a] as isize + d[a];
        if c < 0 || c >= shape[a] as isize {
            return None;
        }
        out[a] = c as usize;
    }
    Some(out)
}

/// Component labelling result: `labels[i]` is 0 for background, else 1..=count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Components {
    pub labels: Vec<u32>,
    pub count: usize,
}

impl Components {
    /// Voxel count of each component, indexed by `label - 1`.
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.count];
        for &l in &self.labels {
            if l > 0 {
                sizes[l as usize - 1] += 1;
            }
        }
        sizes
    }
}

/// Label the connected foreground regions of a binary mask. Labels follow
/// the order in which each component's first voxel appears in a z-major scan.
pub fn connected_components(mask: &[bool], shape: Shape, connectivity: Connectivity) -> Components {
    assert_eq!(mask.len(), shape.iter().product::<usize>(), "mask/shape mismatch");
    let offsets = connectivity.offsets();
    let mut labels = vec![0u32; mask.len()];
    let mut count = 0u32;
    let mut queue = VecDeque::new();
    let [nz, ny, nx] = shape;
    let mut idx = 0;
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if mask[idx] && labels[idx] == 0 {
                    count += 1;
                    labels[idx] = count;
                    queue.push_back([z, y, x]);
                    while let Some(v) = queue.pop_front() {
                        for d in &offsets {
                            if let Some(n) = neighbor(shape, v, *d) {
                                let ni = linear_index(shape, n[0], n[1], n[2]);
                                if mask[ni] && labels[ni] == 0 {
                                    labels[ni] = count;
                                    queue.push_back(n);
                                }
                            }
                        }
                    }
                }
                idx += 1;
            }
        }
    }
    Components {
        labels,
        count: count as usize,
    }
}

/// One-to-one assignment between predictions and ground truth.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchResult {
    /// `(prediction index, gt index, iou)`, in matching order.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_predictions: Vec<usize>,
    pub unmatched_gt: Vec<usize>,
}

impl MatchResult {
    pub fn gt_for_prediction(&self, pred: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.0 == pred).map(|p| p.1)
    }
}

/// Greedy matching: predictions in descending score order (ties by input
/// index) each take the still-unmatched gt box of highest IoU (ties by gt
/// index) when that IoU is at least `iou_threshold`.
pub fn match_boxes(
    predictions: &[(Box3, f64)],
    gts: &[Box3],
    iou_threshold: f64,
) -> MatchResult {
    let mut order: Vec<usize> = (0..predictions.len()).collect();
    order.sort_by(|&a, &b| predictions[b].1.total_cmp(&predictions[a].1).then(a.cmp(&b)));

    let mut gt_taken = vec![false; gts.len()];
    let mut pred_taken = vec![false; predictions.len()];
    let mut pairs = Vec::new();
    for &p in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_taken[g] {
                continue;
            }
            let iou = iou3(&predictions[p].0, gt);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((g, iou));
            }
        }
        if let Some((g, iou)) = best {
            if iou >= iou_threshold {
                gt_taken[g] = true;
                pred_taken[p] = true;
                pairs.push((p, g, iou));
            }
        }
    }
    MatchResult {
        pairs,
        unmatched_predictions: (0..predictions.len()).filter(|&i| !pred_taken[i]).collect(),
        unmatched_gt: (0..gts.len()).filter(|&i| !gt_taken[i]).collect(),
    }
}

/// [`match_boxes`] over scene objects of a single category.
pub fn match_detections(
    predictions: &[SceneObject],
    gts: &[SceneObject],
    iou_threshold: f64,
) -> MatchResult {
    let preds: Vec<(Box3, f64)> = predictions.iter().map(|o| (o.bbox, o.score)).collect();
    let gts: Vec<Box3> = gts.iter().map(|o| o.bbox).collect();
    match_boxes(&preds, &gts, iou_threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(v: [usize; 6]) -> Box3 {
        Box3::try_from(v).unwrap()
    }

    fn rasterized_iou(a: &Box3, b: &Box3) -> f64 {
        let mut inter = 0u64;
        let mut union = 0u64;
        let hi = a.union_bound(b);
        for z in hi.min[0]..hi.max[0] {
            for y in hi.min[1]..hi.max[1] {
                for x in hi.min[2]..hi.max[2] {
                    let (ia, ib) = (a.contains([z, y, x]), b.contains([z, y, x]));
                    inter += (ia && ib) as u64;
                    union += (ia || ib) as u64;
                }
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn iou_examples() {
        let a = b([0, 0, 0, 10, 10, 10]);
        assert_eq!(iou3(&a, &a), 1.0);
        assert_eq!(iou3(&a, &b([20, 0, 0, 30, 10, 10])), 0.0);
        let shifted = b([0, 0, 5, 10, 10, 15]);
        let oracle = rasterized_iou(&a, &shifted);
        assert_eq!(oracle, 500.0 / 1500.0);
        assert_eq!(iou3(&a, &shifted), oracle);
    }

    #[test]
    fn box_rejects_empty() {
        assert!(Box3::new([0, 0, 0], [1, 0, 1]).is_none());
        assert!(Box3::try_from([2, 2, 2, 2, 3, 3]).is_err());
    }

    #[test]
    fn bbox_examples() {
        let mut labels = vec![0u8; 5 * 5 * 5];
        labels[linear_index([5, 5, 5], 2, 3, 4)] = 2;
        let map = LabelMap::new([5, 5, 5], [1.0; 3], labels.clone()).unwrap();
        assert_eq!(bbox_of_label(&map, 2), Some(b([2, 3, 4, 3, 4, 5])));
        assert_eq!(bbox_of_label(&map, 3), None);

        let mut labels = vec![0u8; 5 * 5 * 5];
        labels[linear_index([5, 5, 5], 0, 0, 0)] = 1;
        labels[linear_index([5, 5, 5], 4, 1, 0)] = 1;
        let map = LabelMap::new([5, 5, 5], [1.0; 3], labels).unwrap();
        assert_eq!(bbox_of_label(&map, 1), Some(b([0, 0, 0, 5, 2, 1])));
    }

    #[test]
    fn components_examples() {
        let shape = [2, 2, 2];
        let empty = vec![false; 8];
        assert_eq!(connected_components(&empty, shape, Connectivity::TwentySix).count, 0);

        let mut diag = vec![false; 8];
        diag[0] = true;
        diag[7] = true;
        assert_eq!(connected_components(&diag, shape, Connectivity::TwentySix).count, 1);
        let six = connected_components(&diag, shape, Connectivity::Six);
        assert_eq!(six.count, 2);
        assert_eq!(six.labels[0], 1);
        assert_eq!(six.labels[7], 2);

        let solid = vec![true; 8];
        assert_eq!(connected_components(&solid, shape, Connectivity::Six).count, 1);
    }

    #[test]
    fn matching_examples() {
        let gt = b([0, 0, 0, 10, 10, 10]);
        let m = match_boxes(&[(gt, 0.5)], &[gt], 0.3);
        assert_eq!(m.pairs, vec![(0, 0, 1.0)]);

        // iou 0.2: 10x10x10 vs shifted by 2/3 along x => overlap 10*10*(10-s)
        let weak = b([0, 0, 0, 10, 10, 10]);
        let g = b([0, 0, 0, 10, 10, 2]);
        assert!((iou3(&weak, &g) - 0.2).abs() < 1e-12);
        let m = match_boxes(&[(weak, 0.9)], &[g], 0.3);
        assert!(m.pairs.is_empty());
        assert_eq!(m.unmatched_predictions, vec![0]);
        assert_eq!(m.unmatched_gt, vec![0]);

        // threshold is inclusive
        let third = b([0, 0, 0, 10, 10, 3]);
        let thr = iou3(&weak, &third);
        assert!(match_boxes(&[(weak, 1.0)], &[third], thr).pairs.len() == 1);
    }

    #[test]
    fn higher_score_wins_single_gt() {
        let gt = b([0, 0, 0, 10, 10, 10]);
        let p06 = b([0, 0, 0, 10, 10, 6]); // iou 0.6
        let p07 = b([0, 0, 0, 10, 10, 7]); // iou 0.7
        assert!((iou3(&p06, &gt) - 0.6).abs() < 1e-12);
        let m = match_boxes(&[(p06, 0.9), (p07, 0.8)], &[gt], 0.3);
        assert_eq!(m.pairs.len(), 1);
        assert_eq!(m.pairs[0].0, 0);
        assert_eq!(m.unmatched_predictions, vec![1]);
    }
}
