//! Turning a semantic label map into scene objects.
//!
//! Anatomies (ventricle system, midline) are always one object each, bound
//! around every voxel of the category even when the region is fragmented.
//! Bleedings are instanced as connected components.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{connected_components, neighbor, BoundAccumulator, Box3, Connectivity};
use crate::scene::{Category, ObjectMask, SceneObject};
use crate::volume::{linear_index, unravel, LabelMap, ProbabilityMaps, Shape, BACKGROUND};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstancingConfig {
    /// Bleeding components below this physical volume are discarded.
    pub min_bleeding_volume_cm3: f64,
    pub connectivity: Connectivity,
    /// Anatomies with fewer voxels than this are treated as absent.
    pub min_anatomy_voxels: usize,
}

impl Default for InstancingConfig {
    fn default() -> Self {
        InstancingConfig {
            min_bleeding_volume_cm3: 0.05,
            connectivity: Connectivity::TwentySix,
            min_anatomy_voxels: 10,
        }
    }
}

impl InstancingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_bleeding_volume_cm3.is_finite() && self.min_bleeding_volume_cm3 >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "min_bleeding_volume_cm3 = {} must be >= 0",
                self.min_bleeding_volume_cm3
            )));
        }
        if self.min_anatomy_voxels < 1 {
            return Err(Error::InvalidConfig("min_anatomy_voxels must be >= 1".into()));
        }
        Ok(())
    }
}

/// Crop the voxels satisfying `member` to `bbox`.
fn crop_mask(shape: Shape, bbox: Box3, member: impl Fn(usize) -> bool) -> ObjectMask {
    let mut voxels = Vec::with_capacity(bbox.volume() as usize);
    for z in bbox.min[0]..bbox.max[0] {
        for y in bbox.min[1]..bbox.max[1] {
            for x in bbox.min[2]..bbox.max[2] {
                voxels.push(member(linear_index(shape, z, y, x)));
            }
        }
    }
    ObjectMask { bbox, voxels }
}

fn mean_probability(probs: Option<&ProbabilityMaps>, category: Category, voxels: &[usize]) -> f64 {
    match probs {
        Some(p) if !voxels.is_empty() => {
            let ch = p.channel(category.id());
            let sum: f64 = voxels.iter().map(|&i| ch[i] as f64).sum();
            (sum / voxels.len() as f64).clamp(0.0, 1.0)
        }
        _ => 1.0,
    }
}

/// The single ventricle-system or midline object of a label map, or `None`
/// when fewer than `min_anatomy_voxels` voxels carry the category.
pub fn extract_singleton(
    map: &LabelMap,
    category: Category,
    config: &InstancingConfig,
    probs: Option<&ProbabilityMaps>,
    id: u32,
) -> Option<SceneObject> {
    assert!(category.is_singleton(), "bleedings are not singletons");
    let shape = map.shape();
    let labels = map.labels();
    let mut acc = BoundAccumulator::default();
    let mut members = Vec::new();
    for (i, &l) in labels.iter().enumerate() {
        if l == category.id() {
            acc.add(unravel(shape, i));
            members.push(i);
        }
    }
    if members.len() < config.min_anatomy_voxels {
        return None;
    }
    let bbox = acc.finish()?;
    let mask = crop_mask(shape, bbox, |i| labels[i] == category.id());
    Some(SceneObject {
        id,
        category,
        bbox,
        score: mean_probability(probs, category, &members),
        mask: Some(Arc::new(mask)),
    })
}

/// One object per connected bleeding component large enough to keep, with
/// ids `first_id, first_id + 1, ...` in component order.
pub fn extract_bleedings(
    map: &LabelMap,
    config: &InstancingConfig,
    probs: Option<&ProbabilityMaps>,
    first_id: u32,
) -> Vec<SceneObject> {
    let shape = map.shape();
    let mask = map.binary_mask(Category::Bleeding.id());
    let comps = connected_components(&mask, shape, config.connectivity);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); comps.count];
    for (i, &l) in comps.labels.iter().enumerate() {
        if l > 0 {
            members[l as usize - 1].push(i);
        }
    }
    let voxel_mm3 = map.voxel_volume_mm3();
    let mut out = Vec::new();
    for (c, voxels) in members.iter().enumerate() {
        let cm3 = voxels.len() as f64 * voxel_mm3 / 1000.0;
        if cm3 < config.min_bleeding_volume_cm3 {
            continue;
        }
        let mut acc = BoundAccumulator::default();
        for &i in voxels {
            acc.add(unravel(shape, i));
        }
        let bbox = acc.finish().expect("component is nonempty");
        let label = c as u32 + 1;
        let mask = crop_mask(shape, bbox, |i| comps.labels[i] == label);
        out.push(SceneObject {
            id: first_id + out.len() as u32,
            category: Category::Bleeding,
            bbox,
            score: mean_probability(probs, Category::Bleeding, voxels),
            mask: Some(Arc::new(mask)),
        });
    }
    out
}

/// All objects of a label map: bleedings first (ids from 0), then the
/// ventricle system, then the midline.
pub fn extract_objects(
    map: &LabelMap,
    config: &InstancingConfig,
    probs: Option<&ProbabilityMaps>,
) -> Vec<SceneObject> {
    let mut objects = extract_bleedings(map, config, probs, 0);
    for cat in [Category::VentricleSystem, Category::Midline] {
        let id = objects.len() as u32;
        if let Some(o) = extract_singleton(map, cat, config, probs, id) {
            objects.push(o);
        }
    }
    objects
}

/// Objects from per-category probabilities: argmax to hard labels, then
/// instancing with mean-probability scores.
pub fn extract_objects_from_probabilities(
    probs: &ProbabilityMaps,
    config: &InstancingConfig,
) -> Vec<SceneObject> {
    extract_objects(&probs.argmax(), config, Some(probs))
}

/// Morphological noise used to imitate an imperfect segmentation model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Per-category probability of a one-voxel dilation into background.
    pub dilate_prob: f64,
    /// Per-category probability of a one-voxel erosion; skipped when it
    /// would remove more than half of the category's voxels.
    pub erode_prob: f64,
    /// Components (26-connected, per category) smaller than this are
    /// candidates for removal.
    pub small_component_voxels: usize,
    pub drop_prob: f64,
    /// Per-voxel probability that a boundary voxel takes a neighbour's label.
    pub flip_prob: f64,
}

impl NoiseConfig {
    pub fn none() -> Self {
        NoiseConfig {
            dilate_prob: 0.0,
            erode_prob: 0.0,
            small_component_voxels: 0,
            drop_prob: 0.0,
            flip_prob: 0.0,
        }
    }
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            dilate_prob: 0.3,
            erode_prob: 0.3,
            small_component_voxels: 10,
            drop_prob: 0.5,
            flip_prob: 0.05,
        }
    }
}

const FACE: [[isize; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

fn dilate(labels: &mut [u8], shape: Shape, cat: u8) {
    let snapshot = labels.to_vec();
    for (i, &l) in snapshot.iter().enumerate() {
        if l != BACKGROUND {
            continue;
        }
        let v = unravel(shape, i);
        let touches = FACE.iter().any(|d| {
            neighbor(shape, v, *d).is_some_and(|n| snapshot[linear_index(shape, n[0], n[1], n[2])] == cat)
        });
        if touches {
            labels[i] = cat;
        }
    }
}

fn erode(labels: &mut [u8], shape: Shape, cat: u8) {
    let mut remove = Vec::new();
    let mut total = 0usize;
    for (i, &l) in labels.iter().enumerate() {
        if l != cat {
            continue;
        }
        total += 1;
        let v = unravel(shape, i);
        let boundary = FACE.iter().any(|d| match neighbor(shape, v, *d) {
            Some(n) => labels[linear_index(shape, n[0], n[1], n[2])] != cat,
            None => false,
        });
        if boundary {
            remove.push(i);
        }
    }
    if 2 * remove.len() > total {
        return;
    }
    for i in remove {
        labels[i] = BACKGROUND;
    }
}

/// Deterministically perturb a label map. With [`NoiseConfig::none`] the
/// output equals the input.
pub fn degrade_labelmap(map: &LabelMap, seed: u64, noise: &NoiseConfig) -> LabelMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = map.shape();
    let mut labels = map.labels().to_vec();

    for cat in [1u8, 2, 3] {
        let grow = rng.gen::<f64>() < noise.dilate_prob;
        let shrink = rng.gen::<f64>() < noise.erode_prob;
        if grow {
            dilate(&mut labels, shape, cat);
        } else if shrink {
            erode(&mut labels, shape, cat);
        }
    }

    if noise.drop_prob > 0.0 && noise.small_component_voxels > 0 {
        for cat in [1u8, 2, 3] {
            let mask: Vec<bool> = labels.iter().map(|&l| l == cat).collect();
            let comps = connected_components(&mask, shape, Connectivity::TwentySix);
            let sizes = comps.sizes();
            let drop: Vec<bool> = sizes
                .iter()
                .map(|&s| s < noise.small_component_voxels && rng.gen::<f64>() < noise.drop_prob)
                .collect();
            for (i, &c) in comps.labels.iter().enumerate() {
                if c > 0 && drop[c as usize - 1] {
                    labels[i] = BACKGROUND;
                }
            }
        }
    }

    if noise.flip_prob > 0.0 {
        let snapshot = labels.clone();
        let mut differing = Vec::with_capacity(6);
        for (i, &l) in snapshot.iter().enumerate() {
            let v = unravel(shape, i);
            differing.clear();
            for d in &FACE {
                if let Some(n) = neighbor(shape, v, *d) {
                    let nl = snapshot[linear_index(shape, n[0], n[1], n[2])];
                    if nl != l {
                        differing.push(nl);
                    }
                }
            }
            if differing.is_empty() {
                continue;
            }
            if rng.gen::<f64>() < noise.flip_prob {
                labels[i] = differing[rng.gen_range(0..differing.len())];
            }
        }
    }

    LabelMap::new(shape, map.spacing(), labels).expect("degraded labels stay in 0..=3")
}
