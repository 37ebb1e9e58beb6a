//! Seeded synthetic head phantoms with planted relations.
//!
//! A phantom is a label map holding one sagittal midline sheet, a ventricle
//! system made of two ellipsoidal lobes, and a handful of ellipsoidal
//! bleedings. Each bleeding is given one role and placed so that the
//! geometry evidences it:
//!
//! * midline shift: a large bleeding next to the midline, which bends away
//!   from it;
//! * blood flow: the bleeding overlaps a ventricle lobe;
//! * asymmetry: the bleeding sits 2 to 3 voxels lateral of a lobe that is
//!   shrunk and pushed towards the midline;
//! * none: far from both anatomies.
//!
//! Distances are Chebyshev voxel distances.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{neighbor, BoundAccumulator, Box3, Connectivity};
use crate::instancing::{extract_objects, InstancingConfig, NoiseConfig};
use crate::scene::{validate, Category, Predicate, Relation, SceneGraph, SceneObject};
use crate::volume::{linear_index, unravel, voxel_count, LabelMap, Shape, Spacing, BACKGROUND};

/// Volume ranges (cm³) of each role, intersected with the configured range.
const SHIFT_CM3: [f64; 2] = [8.0, 40.0];
const FLOW_CM3: [f64; 2] = [1.0, 15.0];
const ASYMMETRY_CM3: [f64; 2] = [2.0, 20.0];
const NONE_CM3: [f64; 2] = [0.1, 5.0];

/// Minimum gap between two bleedings.
const BLEEDING_SEPARATION: u8 = 5;
const MIN_SHAPE: Shape = [32, 48, 48];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    pub shape: Shape,
    pub spacing: Spacing,
    /// Inclusive range of bleedings per case.
    pub bleeding_count: [usize; 2],
    /// Relative frequency of each count in `bleeding_count`; empty means
    /// uniform.
    pub count_weights: Vec<f64>,
    pub bleeding_volume_cm3: [f64; 2],
    pub p_midline_shift: f64,
    pub p_blood_flow: f64,
    pub p_asymmetry: f64,
    pub p_fragmented_ventricle: f64,
    /// Degradation applied to label maps for the detection-based task.
    pub noise: NoiseConfig,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            shape: [64, 96, 96],
            spacing: [2.0, 2.0, 2.0],
            bleeding_count: [1, 7],
            count_weights: vec![0.30, 0.25, 0.15, 0.12, 0.08, 0.06, 0.04],
            bleeding_volume_cm3: [0.1, 100.0],
            p_midline_shift: 0.2,
            p_blood_flow: 0.3,
            p_asymmetry: 0.15,
            p_fragmented_ventricle: 0.3,
            noise: NoiseConfig::default(),
        }
    }
}

impl PhantomConfig {
    /// Phantom without any planted relation.
    pub fn without_relations() -> Self {
        PhantomConfig {
            p_midline_shift: 0.0,
            p_blood_flow: 0.0,
            p_asymmetry: 0.0,
            ..Default::default()
        }
    }

    fn role_range(&self, role: Role) -> Option<[f64; 2]> {
        let r = match role {
            Role::MidlineShift => SHIFT_CM3,
            Role::BloodFlow => FLOW_CM3,
            Role::Asymmetry => ASYMMETRY_CM3,
            Role::Unrelated => NONE_CM3,
        };
        let lo = r[0].max(self.bleeding_volume_cm3[0]);
        let hi = r[1].min(self.bleeding_volume_cm3[1]);
        (lo <= hi).then_some([lo, hi])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let probs = [
            ("p_midline_shift", self.p_midline_shift),
            ("p_blood_flow", self.p_blood_flow),
            ("p_asymmetry", self.p_asymmetry),
            ("p_fragmented_ventricle", self.p_fragmented_ventricle),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} outside [0, 1]"));
            }
        }
        if self.p_midline_shift + self.p_blood_flow + self.p_asymmetry > 1.0 + 1e-12 {
            return bad("relation probabilities sum to more than 1".into());
        }
        let [lo, hi] = self.bleeding_count;
        if lo > hi {
            return bad(format!("bleeding count range {lo}..={hi} is empty"));
        }
        if !self.count_weights.is_empty()
            && (self.count_weights.len() != hi - lo + 1
                || self.count_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0))
                || self.count_weights.iter().sum::<f64>() <= 0.0)
        {
            return bad(format!(
                "count_weights needs {} nonnegative entries with a positive sum",
                hi - lo + 1
            ));
        }
        let [vlo, vhi] = self.bleeding_volume_cm3;
        if !(vlo > 0.0 && vlo <= vhi && vhi.is_finite()) {
            return bad(format!("bleeding volume range [{vlo}, {vhi}] is invalid"));
        }
        if self.spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad(format!("spacing {:?} must be positive", self.spacing));
        }
        if (0..3).any(|a| self.shape[a] < MIN_SHAPE[a]) {
            return Err(Error::InfeasibleConfig(format!(
                "shape {:?} is smaller than the minimum {MIN_SHAPE:?}",
                self.shape
            )));
        }
        let roles = [
            (Role::MidlineShift, self.p_midline_shift),
            (Role::BloodFlow, self.p_blood_flow),
            (Role::Asymmetry, self.p_asymmetry),
            (Role::Unrelated, 1.0),
        ];
        for (role, p) in roles {
            if p > 0.0 && hi > 0 && self.role_range(role).is_none() {
                return Err(Error::InfeasibleConfig(format!(
                    "no {role:?} bleeding fits the volume range [{vlo}, {vhi}] cm³"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    MidlineShift,
    BloodFlow,
    Asymmetry,
    Unrelated,
}

impl Role {
    fn predicate(self) -> Option<Predicate> {
        match self {
            Role::MidlineShift => Some(Predicate::MidlineShift),
            Role::BloodFlow => Some(Predicate::BloodFlow),
            Role::Asymmetry => Some(Predicate::VentricleAsymmetry),
            Role::Unrelated => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedBleeding {
    pub role: Role,
    pub object_id: u32,
    pub voxels: usize,
    /// Bounds of the painted voxels.
    pub bbox: Box3,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub labels: LabelMap,
    /// Objects carry their instanced masks.
    pub graph: SceneGraph,
    /// Ventricle voxels before bleedings were painted over them.
    pub ventricle_mask: Vec<bool>,
    pub bleedings: Vec<PlantedBleeding>,
}

/// Chebyshev distance to the nearest `true` voxel, saturating at `cap + 1`.
pub fn chebyshev_distance(mask: &[bool], shape: Shape, cap: u8) -> Vec<u8> {
    let far = cap.saturating_add(1);
    let mut dist = vec![far; mask.len()];
    let mut queue = VecDeque::new();
    for (i, &m) in mask.iter().enumerate() {
        if m {
            dist[i] = 0;
            queue.push_back(i);
        }
    }
    let offsets = Connectivity::TwentySix.offsets();
    while let Some(i) = queue.pop_front() {
        let d = dist[i];
        if d >= cap {
            continue;
        }
        let v = unravel(shape, i);
        for &o in &offsets {
            if let Some(n) = neighbor(shape, v, o) {
                let j = linear_index(shape, n[0], n[1], n[2]);
                if dist[j] > d + 1 {
                    dist[j] = d + 1;
                    queue.push_back(j);
                }
            }
        }
    }
    dist
}

#[derive(Clone, Copy, Debug)]
struct Ellipsoid {
    center: [f64; 3],
    radii: [f64; 3],
}

impl Ellipsoid {
    /// Linear indices of covered voxels, or `None` when it leaves the volume
    /// (a one-voxel border is kept free).
    fn voxels(&self, shape: Shape) -> Option<Vec<usize>> {
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let l = (self.center[a] - self.radii[a]).floor();
            let h = (self.center[a] + self.radii[a]).ceil();
            if l < 1.0 || h > (shape[a] - 2) as f64 {
                return None;
            }
            lo[a] = l as usize;
            hi[a] = h as usize;
        }
        let mut out = Vec::new();
        for z in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for x in lo[2]..=hi[2] {
                    let p = [z as f64, y as f64, x as f64];
                    let r: f64 = (0..3)
                        .map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2))
                        .sum();
                    if r <= 1.0 {
                        out.push(linear_index(shape, z, y, x));
                    }
                }
            }
        }
        Some(out)
    }
}

/// Per-case layout constants derived from the shape.
struct Layout {
    center: [f64; 3],
    lobe_offset: f64,
    lobe_radii: [f64; 3],
    midline_z: (usize, usize),
    midline_y: (usize, usize),
}

impl Layout {
    fn new(shape: Shape) -> Self {
        let s = |a: usize, v: f64, base: f64| v * shape[a] as f64 / base;
        Layout {
            center: [shape[0] as f64 / 2.0, shape[1] as f64 / 2.0, shape[2] as f64 / 2.0],
            lobe_offset: s(2, 10.0, 96.0),
            lobe_radii: [s(0, 8.0, 64.0), s(1, 14.0, 96.0), s(2, 5.0, 96.0)],
            midline_z: (6 * shape[0] / 64, 58 * shape[0] / 64),
            midline_y: (8 * shape[1] / 96, 88 * shape[1] / 96),
        }
    }
}

/// Gaussian bend of the midline away from a shift bleeding.
#[derive(Clone, Copy, Debug)]
struct Bend {
    z: f64,
    y: f64,
    /// Signed displacement in x at the bend center.
    amplitude: f64,
    sigma: f64,
}

fn midline_x(layout: &Layout, bend: Option<Bend>, z: usize, y: usize) -> f64 {
    let base = layout.center[2];
    match bend {
        Some(b) => {
            let d2 = (z as f64 - b.z).powi(2) + (y as f64 - b.y).powi(2);
            base + b.amplitude * (-d2 / (2.0 * b.sigma * b.sigma)).exp()
        }
        None => base,
    }
}

fn log_uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        (rng.gen_range(lo.ln()..hi.ln())).exp()
    }
}

/// Radii of an ellipsoid of `voxels` volume with a random aspect.
fn radii_for(rng: &mut ChaCha8Rng, voxels: f64, aspect: [(f64, f64); 3]) -> [f64; 3] {
    let r = (3.0 * voxels / (4.0 * std::f64::consts::PI)).cbrt();
    let mut a = [0.0; 3];
    for (v, (lo, hi)) in a.iter_mut().zip(aspect) {
        *v = rng.gen_range(lo..hi);
    }
    let norm = (a[0] * a[1] * a[2]).cbrt();
    [r * a[0] / norm, r * a[1] / norm, r * a[2] / norm]
}

const ROUND: [(f64, f64); 3] = [(0.8, 1.25), (0.8, 1.25), (0.8, 1.25)];

struct Maps {
    midline: Vec<u8>,
    ventricle: Vec<u8>,
    bleeding: Vec<u8>,
}

fn min_over(map: &[u8], voxels: &[usize]) -> u8 {
    voxels.iter().map(|&i| map[i]).min().unwrap_or(u8::MAX)
}

/// Whether a candidate blob satisfies the constraints of `role`.
fn accepts(role: Role, voxels: &[usize], maps: &Maps, min_voxels: usize) -> bool {
    if voxels.len() < min_voxels || min_over(&maps.bleeding, voxels) < BLEEDING_SEPARATION {
        return false;
    }
    let mid = min_over(&maps.midline, voxels);
    let vent = min_over(&maps.ventricle, voxels);
    match role {
        Role::MidlineShift => (2..=3).contains(&mid) && vent >= 8,
        Role::BloodFlow => {
            let inside = voxels.iter().filter(|&&i| maps.ventricle[i] == 0).count();
            mid >= 5 && inside > 0 && inside * 10 <= voxels.len() * 6
        }
        Role::Asymmetry => (3..=4).contains(&vent) && mid >= 5,
        Role::Unrelated => mid >= 14 && vent >= 8,
    }
}

struct Retry;

struct Draft {
    labels: Vec<u8>,
    ventricle: Vec<bool>,
    placed: Vec<(Role, Vec<usize>)>,
}

fn sample_count(rng: &mut ChaCha8Rng, config: &PhantomConfig) -> usize {
    let [lo, hi] = config.bleeding_count;
    if config.count_weights.is_empty() {
        return rng.gen_range(lo..=hi);
    }
    let total: f64 = config.count_weights.iter().sum();
    let mut u = rng.gen_range(0.0..total);
    for (k, w) in config.count_weights.iter().enumerate() {
        if u < *w {
            return lo + k;
        }
        u -= w;
    }
    hi
}

fn try_generate(rng: &mut ChaCha8Rng, config: &PhantomConfig) -> std::result::Result<Draft, Retry> {
    let shape = config.shape;
    let layout = Layout::new(shape);
    let n = sample_count(rng, config);
    let mut roles = Vec::with_capacity(n);
    let mut has_shift = false;
    for _ in 0..n {
        let u: f64 = rng.gen();
        let role = if u < config.p_midline_shift {
            if has_shift {
                Role::Unrelated
            } else {
                has_shift = true;
                Role::MidlineShift
            }
        } else if u < config.p_midline_shift + config.p_blood_flow {
            Role::BloodFlow
        } else if u < config.p_midline_shift + config.p_blood_flow + config.p_asymmetry {
            Role::Asymmetry
        } else {
            Role::Unrelated
        };
        roles.push(role);
    }
    // Constrained roles are placed first.
    roles.sort_by_key(|r| match r {
        Role::MidlineShift => 0,
        Role::Asymmetry => 1,
        Role::BloodFlow => 2,
        Role::Unrelated => 3,
    });
    // Asymmetry bleedings pick the lobe they sit next to.
    let asym_sides: Vec<f64> = roles
        .iter()
        .filter(|r| **r == Role::Asymmetry)
        .map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 })
        .collect();

    let voxel_cm3 = config.spacing.iter().product::<f64>() / 1000.0;
    let [cz, cy, cx] = layout.center;

    // Shift bleeding size and position decide the midline bend.
    let mut shift_plan = None;
    let mut bend = None;
    if roles.first() == Some(&Role::MidlineShift) {
        let range = config.role_range(Role::MidlineShift).ok_or(Retry)?;
        let volume = log_uniform(rng, range) / voxel_cm3;
        let radii = radii_for(rng, volume, [(1.0, 1.3), (0.6, 0.85), (0.9, 1.2)]);
        let side = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        let vent_y = layout.lobe_radii[1];
        let front = rng.gen::<bool>();
        let reach = vent_y + 9.0 + radii[1];
        let y_room = cy - 3.0 - radii[1] - reach;
        if y_room < 0.0 {
            return Err(Retry);
        }
        let y = if front {
            cy + reach + rng.gen_range(0.0..=y_room)
        } else {
            cy - reach - rng.gen_range(0.0..=y_room)
        };
        let z = cz + rng.gen_range(-0.2..0.2) * shape[0] as f64;
        let amplitude = -side * rng.gen_range(3.0..6.0);
        let sigma = rng.gen_range(8.0..10.0);
        bend = Some(Bend { z, y, amplitude, sigma });
        shift_plan = Some((radii, side, z, y));
    }

    let mut labels = vec![BACKGROUND; voxel_count(shape)];
    let mut midline = vec![false; labels.len()];
    for z in layout.midline_z.0..layout.midline_z.1 {
        for y in layout.midline_y.0..layout.midline_y.1 {
            let xm = midline_x(&layout, bend, z, y).round() as isize;
            for x in xm - 1..=xm + 1 {
                if x >= 0 && (x as usize) < shape[2] {
                    let i = linear_index(shape, z, y, x as usize);
                    midline[i] = true;
                    labels[i] = Category::Midline.id();
                }
            }
        }
    }

    let mut ventricle = vec![false; labels.len()];
    for side in [-1.0, 1.0] {
        let mut center = [cz, cy, cx + side * layout.lobe_offset];
        let mut radii = layout.lobe_radii;
        if asym_sides.contains(&side) {
            radii = radii.map(|r| r * 0.75);
            center[2] -= side * 2.0;
        }
        for i in (Ellipsoid { center, radii }).voxels(shape).ok_or(Retry)? {
            if !midline[i] {
                ventricle[i] = true;
            }
        }
    }
    if rng.gen::<f64>() < config.p_fragmented_ventricle {
        let cut = (cy + rng.gen_range(-4.0..4.0)).round() as usize;
        for (i, v) in ventricle.iter_mut().enumerate() {
            let y = unravel(shape, i)[1];
            if y == cut || y == cut + 1 {
                *v = false;
            }
        }
    }
    for (i, &v) in ventricle.iter().enumerate() {
        if v {
            labels[i] = Category::VentricleSystem.id();
        }
    }

    let mut maps = Maps {
        midline: chebyshev_distance(&midline, shape, 14),
        ventricle: chebyshev_distance(&ventricle, shape, 8),
        bleeding: vec![u8::MAX; labels.len()],
    };
    let min_voxels = ((0.05 / voxel_cm3).ceil() as usize).max(8);

    let mut placed: Vec<(Role, Vec<usize>)> = Vec::with_capacity(roles.len());
    let mut asym_iter = asym_sides.iter();
    for &role in &roles {
        let range = config.role_range(role).ok_or(Retry)?;
        let mut volume = log_uniform(rng, range) / voxel_cm3;
        let asym_side = if role == Role::Asymmetry { asym_iter.next().copied() } else { None };
        let mut found = None;
        for attempt in 0..240 {
            if attempt > 0 && attempt % 40 == 0 {
                volume = (volume * 0.8).max(range[0] / voxel_cm3);
            }
            let candidates: Vec<Ellipsoid> = match role {
                Role::MidlineShift => {
                    let (radii, side, z, y) = shift_plan.expect("shift bleeding planned");
                    let xm = midline_x(&layout, bend, z.round() as usize, y.round() as usize);
                    (0..8)
                        .map(|step| Ellipsoid {
                            center: [z, y, xm + side * (1.0 + radii[2] + step as f64)],
                            radii,
                        })
                        .collect()
                }
                Role::BloodFlow => {
                    let side = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    let lobe_x = cx + side * layout.lobe_offset;
                    let mut d: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0)];
                    let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
                    d.iter_mut().for_each(|v| *v /= norm);
                    let r = layout.lobe_radii;
                    let radii = radii_for(rng, volume, ROUND);
                    vec![Ellipsoid {
                        center: [cz + d[0] * r[0], cy + d[1] * r[1], lobe_x + side * d[2] * r[2]],
                        radii,
                    }]
                }
                Role::Asymmetry => {
                    let side = asym_side.expect("asymmetry side chosen");
                    let r = layout.lobe_radii.map(|v| v * 0.75);
                    let lobe_x = cx + side * (layout.lobe_offset - 2.0);
                    let radii = radii_for(rng, volume, [(0.8, 1.2), (0.9, 1.3), (0.6, 0.9)]);
                    let y = cy + rng.gen_range(-0.5..0.5) * r[1];
                    let z = cz + rng.gen_range(-0.3..0.3) * r[0];
                    (0..8)
                        .map(|step| Ellipsoid {
                            center: [z, y, lobe_x + side * (r[2] + radii[2] + 1.0 + step as f64)],
                            radii,
                        })
                        .collect()
                }
                Role::Unrelated => {
                    let radii = radii_for(rng, volume, ROUND);
                    let mut center = [0.0; 3];
                    for a in 0..3 {
                        let lo = radii[a] + 1.0;
                        let hi = shape[a] as f64 - radii[a] - 2.0;
                        if lo >= hi {
                            return Err(Retry);
                        }
                        center[a] = rng.gen_range(lo..hi);
                    }
                    vec![Ellipsoid { center, radii }]
                }
            };
            found = candidates
                .iter()
                .filter_map(|e| e.voxels(shape))
                .find(|v| accepts(role, v, &maps, min_voxels));
            if found.is_some() || role == Role::MidlineShift {
                break;
            }
        }
        let voxels = found.ok_or(Retry)?;
        let mut seed = vec![false; labels.len()];
        for &i in &voxels {
            labels[i] = Category::Bleeding.id();
            seed[i] = true;
        }
        for (_, prev) in &placed {
            for &i in prev {
                seed[i] = true;
            }
        }
        maps.bleeding = chebyshev_distance(&seed, shape, BLEEDING_SEPARATION);
        placed.push((role, voxels));
    }
    Ok(Draft {
        labels,
        ventricle,
        placed,
    })
}

fn object_containing(objects: &[SceneObject], shape: Shape, voxel: usize) -> Option<u32> {
    let v = unravel(shape, voxel);
    objects
        .iter()
        .find(|o| o.category == Category::Bleeding && o.mask.as_ref().is_some_and(|m| m.get(v)))
        .map(|o| o.id)
}

/// One phantom for `(config, seed)`.
pub fn generate(config: &PhantomConfig, seed: u64, case_id: &str) -> Result<Phantom> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..50 {
        let Ok(draft) = try_generate(&mut rng, config) else { continue };
        let labels = LabelMap::new(config.shape, config.spacing, draft.labels)?;
        let objects = extract_objects(&labels, &InstancingConfig::default(), None);
        let ids: Option<Vec<u32>> = draft
            .placed
            .iter()
            .map(|(_, v)| object_containing(&objects, config.shape, v[0]))
            .collect();
        let Some(ids) = ids else { continue };
        let bleedings = objects.iter().filter(|o| o.category == Category::Bleeding).count();
        if bleedings != draft.placed.len() {
            continue;
        }
        let anatomy = |c: Category| objects.iter().find(|o| o.category == c).map(|o| o.id);
        let (Some(vent), Some(mid)) = (anatomy(Category::VentricleSystem), anatomy(Category::Midline)) else {
            continue;
        };
        let mut relations: Vec<Relation> = draft
            .placed
            .iter()
            .zip(&ids)
            .filter_map(|((role, _), &id)| {
                role.predicate().map(|p| Relation {
                    subject: id,
                    object: if p == Predicate::MidlineShift { mid } else { vent },
                    predicate: p,
                    score: 1.0,
                })
            })
            .collect();
        relations.sort_by_key(|r| (r.subject, r.object));
        let graph = SceneGraph {
            case_id: case_id.to_string(),
            shape: config.shape,
            spacing: config.spacing,
            objects,
            relations,
        };
        if let Some(v) = validate(&graph).first() {
            return Err(Error::InvalidConfig(format!("generated graph is invalid: {}", v.message)));
        }
        let bleedings = draft
            .placed
            .iter()
            .zip(&ids)
            .map(|((role, v), &id)| {
                let mut acc = BoundAccumulator::default();
                v.iter().for_each(|&i| acc.add(unravel(config.shape, i)));
                PlantedBleeding {
                    role: *role,
                    object_id: id,
                    voxels: v.len(),
                    bbox: acc.finish().expect("planted bleedings are non-empty"),
                }
            })
            .collect();
        return Ok(Phantom {
            labels,
            graph,
            ventricle_mask: draft.ventricle,
            bleedings,
        });
    }
    Err(Error::InfeasibleConfig(format!(
        "could not place the requested bleedings in {:?} after 50 attempts",
        config.shape
    )))
}

/// Hand-written geometric rules: adjacency to the ventricle means blood
/// flow, a ventricle gap of at most 4 voxels means asymmetry, and a bleeding
/// of at least 6 cm³ within 4 voxels of the midline means midline shift.
pub fn rule_based_relations(map: &LabelMap, objects: &[SceneObject]) -> Vec<Relation> {
    let shape = map.shape();
    let vent = chebyshev_distance(&map.binary_mask(Category::VentricleSystem.id()), shape, 8);
    let mid = chebyshev_distance(&map.binary_mask(Category::Midline.id()), shape, 8);
    let find = |c: Category| objects.iter().find(|o| o.category == c).map(|o| o.id);
    let (vent_id, mid_id) = (find(Category::VentricleSystem), find(Category::Midline));
    let voxel_cm3 = map.voxel_volume_mm3() / 1000.0;
    let mut out = Vec::new();
    for o in objects.iter().filter(|o| o.category == Category::Bleeding) {
        let Some(mask) = &o.mask else { continue };
        let b = mask.bbox;
        let mut voxels = Vec::new();
        let mut k = 0;
        for z in b.min[0]..b.max[0] {
            for y in b.min[1]..b.max[1] {
                for x in b.min[2]..b.max[2] {
                    if mask.voxels[k] {
                        voxels.push(linear_index(shape, z, y, x));
                    }
                    k += 1;
                }
            }
        }
        let dv = min_over(&vent, &voxels);
        let dm = min_over(&mid, &voxels);
        let rel = |object, predicate| Relation {
            subject: o.id,
            object,
            predicate,
            score: 1.0,
        };
        if let Some(v) = vent_id {
            if dv <= 1 {
                out.push(rel(v, Predicate::BloodFlow));
            } else if dv <= 4 {
                out.push(rel(v, Predicate::VentricleAsymmetry));
            }
        }
        if let Some(m) = mid_id {
            if dm <= 4 && voxels.len() as f64 * voxel_cm3 >= 6.0 {
                out.push(rel(m, Predicate::MidlineShift));
            }
        }
    }
    out
}

/// SplitMix64 step, used to derive independent per-case seeds.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of case `index` under `master`.
pub fn case_seed(master: u64, index: usize) -> u64 {
    splitmix64(master ^ splitmix64(index as u64))
}
