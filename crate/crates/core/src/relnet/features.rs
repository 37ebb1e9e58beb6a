//! Object and pair features fed to the relation models.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geometry::iou3;
use crate::scene::{candidate_pairs, Category, SceneObject};
use crate::volume::{LabelMap, Shape};

pub const EDGE_DIM: usize = 7;
pub const DEFAULT_GRID: usize = 8;

/// Length of an object feature vector for occupancy grid side `grid`.
pub fn object_dim(grid: usize) -> usize {
    10 + grid * grid * grid
}

/// Features of one case: per-object vectors and per candidate pair vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseFeatures {
    pub shape: Shape,
    pub objects: Vec<SceneObject>,
    pub object_features: Vec<Vec<f64>>,
    /// Candidate pairs as indices into `objects`.
    pub pairs: Vec<(usize, usize)>,
    pub edge_features: Vec<Vec<f64>>,
}

impl CaseFeatures {
    pub fn pair_ids(&self) -> Vec<(u32, u32)> {
        self.pairs
            .iter()
            .map(|&(s, o)| (self.objects[s].id, self.objects[o].id))
            .collect()
    }
}

/// Start and end (exclusive) of adaptive pooling cell `j` of `g` over `n`.
fn cell_range(j: usize, n: usize, g: usize) -> (usize, usize) {
    let start = j * n / g;
    let end = ((j + 1) * n).div_ceil(g);
    (start, end.max(start + 1).min(n))
}

/// Occupancy of `object` binarized from the label map crop, or its own mask.
fn occupancy(object: &SceneObject, labels: Option<&LabelMap>, grid: usize) -> Result<Vec<f64>> {
    let b = object.bbox;
    let ext = [b.extent(0), b.extent(1), b.extent(2)];
    let inside: Box<dyn Fn([usize; 3]) -> bool + '_> = match (labels, &object.mask) {
        (Some(map), _) => {
            let cat = object.category.id();
            Box::new(move |v: [usize; 3]| map.get(v[0], v[1], v[2]) == cat)
        }
        (None, Some(mask)) => Box::new(move |v: [usize; 3]| mask.get(v)),
        (None, None) => return Err(Error::MissingMask(object.id)),
    };
    let ranges: Vec<Vec<(usize, usize)>> = ext
        .iter()
        .map(|&n| (0..grid).map(|j| cell_range(j, n, grid)).collect())
        .collect();
    let mut out = vec![0.0; grid * grid * grid];
    for gz in 0..grid {
        for gy in 0..grid {
            for gx in 0..grid {
                let (z0, z1) = ranges[0][gz];
                let (y0, y1) = ranges[1][gy];
                let (x0, x1) = ranges[2][gx];
                let hit = (z0..z1).any(|z| {
                    (y0..y1).any(|y| {
                        (x0..x1).any(|x| inside([b.min[0] + z, b.min[1] + y, b.min[2] + x]))
                    })
                });
                if hit {
                    out[(gz * grid + gy) * grid + gx] = 1.0;
                }
            }
        }
    }
    Ok(out)
}

pub fn object_feature(
    object: &SceneObject,
    shape: Shape,
    labels: Option<&LabelMap>,
    grounding: bool,
    grid: usize,
) -> Result<Vec<f64>> {
    let mut f = Vec::with_capacity(object_dim(grid));
    for c in Category::ALL {
        f.push(if c == object.category { 1.0 } else { 0.0 });
    }
    let center = object.bbox.center();
    for a in 0..3 {
        f.push(center[a] / shape[a] as f64);
    }
    for (a, &n) in shape.iter().enumerate() {
        f.push(object.bbox.extent(a) as f64 / n as f64);
    }
    let total = (shape[0] * shape[1] * shape[2]) as f64;
    f.push((object.bbox.volume() as f64 / total).log10());
    if grounding {
        f.extend(occupancy(object, labels, grid)?);
    } else {
        f.resize(object_dim(grid), 0.0);
    }
    Ok(f)
}

pub fn edge_feature(subject: &SceneObject, object: &SceneObject, shape: Shape) -> Vec<f64> {
    let cs = subject.bbox.center();
    let co = object.bbox.center();
    let mut f = Vec::with_capacity(EDGE_DIM);
    for a in 0..3 {
        f.push((co[a] - cs[a]) / shape[a] as f64);
    }
    let inter = subject.bbox.intersection_volume(&object.bbox) as f64;
    f.push(iou3(&subject.bbox, &object.bbox));
    f.push(inter / subject.bbox.volume() as f64);
    f.push(inter / object.bbox.volume() as f64);
    let dist = (0..3).map(|a| (co[a] - cs[a]).powi(2)).sum::<f64>().sqrt();
    let diag = shape.iter().map(|&n| (n * n) as f64).sum::<f64>().sqrt();
    f.push(dist / diag);
    f
}

/// Features of `objects` and of every candidate (bleeding, anatomy) pair.
///
/// With `grounding`, occupancy comes from `labels` when given, otherwise
/// from each object's mask.
pub fn featurize(
    objects: &[SceneObject],
    shape: Shape,
    labels: Option<&LabelMap>,
    grounding: bool,
    grid: usize,
) -> Result<CaseFeatures> {
    if let Some(map) = labels {
        if map.shape() != shape {
            return Err(Error::ShapeMismatch(format!(
                "label map {:?} vs graph {:?}",
                map.shape(),
                shape
            )));
        }
    }
    let object_features = objects
        .iter()
        .map(|o| object_feature(o, shape, labels, grounding, grid))
        .collect::<Result<Vec<_>>>()?;
    let index: HashMap<u32, usize> = objects.iter().enumerate().map(|(i, o)| (o.id, i)).collect();
    let pairs: Vec<(usize, usize)> = candidate_pairs(objects)
        .into_iter()
        .map(|(s, o)| (index[&s], index[&o]))
        .collect();
    let edge_features = pairs
        .iter()
        .map(|&(s, o)| edge_feature(&objects[s], &objects[o], shape))
        .collect();
    Ok(CaseFeatures {
        shape,
        objects: objects.to_vec(),
        object_features,
        pairs,
        edge_features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Box3;

    #[test]
    fn whole_volume_object() {
        let shape = [6, 10, 12];
        let map = LabelMap::new(shape, [1.0; 3], vec![2; 720]).unwrap();
        let obj = SceneObject::new(0, Category::VentricleSystem, Box3::full(shape).unwrap(), 1.0);
        let f = object_feature(&obj, shape, Some(&map), true, 8).unwrap();
        assert_eq!(&f[..3], &[0.0, 1.0, 0.0]);
        assert_eq!(&f[3..6], &[0.5, 0.5, 0.5]);
        assert_eq!(&f[6..9], &[1.0, 1.0, 1.0]);
        assert_eq!(f[9], 0.0);
        assert!(f[10..].iter().all(|&v| v == 1.0));
        assert_eq!(f.len(), object_dim(8));
    }

    #[test]
    fn grounding_off_zeroes_occupancy() {
        let shape = [8, 8, 8];
        let obj = SceneObject::new(3, Category::Bleeding, Box3::new([1, 1, 1], [4, 4, 4]).unwrap(), 1.0);
        let f = object_feature(&obj, shape, None, false, 4).unwrap();
        assert!(f[10..].iter().all(|&v| v == 0.0));
        let err = object_feature(&obj, shape, None, true, 4).unwrap_err();
        assert!(matches!(err, Error::MissingMask(3)));
    }

    #[test]
    fn cells_cover_small_extents() {
        for n in 1..20 {
            for g in [2, 4, 8] {
                let mut covered = vec![false; n];
                for j in 0..g {
                    let (s, e) = cell_range(j, n, g);
                    assert!(s < e && e <= n);
                    covered[s..e].iter_mut().for_each(|c| *c = true);
                }
                assert!(covered.iter().all(|&c| c));
            }
        }
    }
}
