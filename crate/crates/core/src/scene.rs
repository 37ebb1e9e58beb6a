//! The hemorrhage scene-graph model: object categories, bleeding-induced
//! predicates, their compatibility table, and graph validation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::Box3;
use crate::volume::{Shape, Spacing};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Category {
    Bleeding = 1,
    VentricleSystem = 2,
    Midline = 3,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Bleeding, Category::VentricleSystem, Category::Midline];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(Category::Bleeding),
            2 => Some(Category::VentricleSystem),
            3 => Some(Category::Midline),
            _ => None,
        }
    }

    /// Categories that appear at most once per image.
    pub fn is_singleton(self) -> bool {
        !matches!(self, Category::Bleeding)
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::Bleeding => "bleeding",
            Category::VentricleSystem => "ventricle-system",
            Category::Midline => "midline",
        }
    }
}

impl TryFrom<u8> for Category {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        Category::from_id(v).ok_or_else(|| format!("category {v} is not one of 1, 2, 3"))
    }
}

impl From<Category> for u8 {
    fn from(c: Category) -> u8 {
        c.id()
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Predicate {
    MidlineShift = 1,
    BloodFlow = 2,
    VentricleAsymmetry = 3,
}

impl Predicate {
    pub const ALL: [Predicate; 3] = [
        Predicate::MidlineShift,
        Predicate::BloodFlow,
        Predicate::VentricleAsymmetry,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            1 => Some(Predicate::MidlineShift),
            2 => Some(Predicate::BloodFlow),
            3 => Some(Predicate::VentricleAsymmetry),
            _ => None,
        }
    }

    /// Zero-based index among the three predicates.
    pub fn index(self) -> usize {
        self as usize - 1
    }

    /// The only object category this predicate may point at.
    pub fn object_category(self) -> Category {
        match self {
            Predicate::MidlineShift => Category::Midline,
            Predicate::BloodFlow | Predicate::VentricleAsymmetry => Category::VentricleSystem,
        }
    }

    pub fn compatible(self, subject: Category, object: Category) -> bool {
        subject == Category::Bleeding && object == self.object_category()
    }

    pub fn name(self) -> &'static str {
        match self {
            Predicate::MidlineShift => "midline-shift",
            Predicate::BloodFlow => "blood-flow",
            Predicate::VentricleAsymmetry => "ventricle-asymmetry",
        }
    }
}

impl TryFrom<u8> for Predicate {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, String> {
        Predicate::from_id(v).ok_or_else(|| format!("predicate {v} is not one of 1, 2, 3"))
    }
}

impl From<Predicate> for u8 {
    fn from(p: Predicate) -> u8 {
        p.id()
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Predicates allowed between a subject and object category pair.
pub fn compatible_predicates(subject: Category, object: Category) -> Vec<Predicate> {
    Predicate::ALL
        .into_iter()
        .filter(|p| p.compatible(subject, object))
        .collect()
}

/// Binary mask of one object, cropped to `bbox`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ObjectMask {
    pub bbox: Box3,
    /// `(z, y, x)`-ordered voxels of the crop, x fastest.
    pub voxels: Vec<bool>,
}

impl ObjectMask {
    pub fn voxel_count(&self) -> usize {
        self.voxels.iter().filter(|&&v| v).count()
    }

    /// Whether absolute voxel `v` is set.
    pub fn get(&self, v: [usize; 3]) -> bool {
        if !self.bbox.contains(v) {
            return false;
        }
        let ny = self.bbox.extent(1);
        let nx = self.bbox.extent(2);
        let (z, y, x) = (v[0] - self.bbox.min[0], v[1] - self.bbox.min[1], v[2] - self.bbox.min[2]);
        self.voxels[(z * ny + y) * nx + x]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneObject {
    pub id: u32,
    pub category: Category,
    pub bbox: Box3,
    pub score: f64,
    pub mask: Option<Arc<ObjectMask>>,
}

impl SceneObject {
    pub fn new(id: u32, category: Category, bbox: Box3, score: f64) -> Self {
        SceneObject {
            id,
            category,
            bbox,
            score,
            mask: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub subject: u32,
    pub object: u32,
    pub predicate: Predicate,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneGraph {
    pub case_id: String,
    pub shape: Shape,
    pub spacing: Spacing,
    pub objects: Vec<SceneObject>,
    pub relations: Vec<Relation>,
}

impl SceneGraph {
    pub fn new(case_id: impl Into<String>, shape: Shape, spacing: Spacing) -> Self {
        SceneGraph {
            case_id: case_id.into(),
            shape,
            spacing,
            objects: Vec::new(),
            relations: Vec::new(),
        }
    }

    pub fn object(&self, id: u32) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn objects_of(&self, category: Category) -> impl Iterator<Item = &SceneObject> {
        self.objects.iter().filter(move |o| o.category == category)
    }

    pub fn bleeding_count(&self) -> usize {
        self.objects_of(Category::Bleeding).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Rule {
    DuplicateObjectId,
    ScoreOutOfRange,
    BoxOutOfBounds,
    DuplicateSingleton,
    DanglingRelation,
    SelfRelation,
    SubjectNotBleeding,
    PredicateObjectMismatch,
    DuplicateRelation,
}

impl Rule {
    pub fn describe(self) -> &'static str {
        match self {
            Rule::DuplicateObjectId => "duplicate object id",
            Rule::ScoreOutOfRange => "score outside [0, 1]",
            Rule::BoxOutOfBounds => "box outside volume",
            Rule::DuplicateSingleton => "duplicate singleton category",
            Rule::DanglingRelation => "relation references missing object",
            Rule::SelfRelation => "relation subject equals object",
            Rule::SubjectNotBleeding => "relation subject is not a bleeding",
            Rule::PredicateObjectMismatch => "predicate/object-category mismatch",
            Rule::DuplicateRelation => "duplicate relation triple",
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.describe())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub rule: Rule,
    pub ids: Vec<u32>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:?}: {}", self.rule, self.ids, self.message)
    }
}

/// Check every graph invariant; an empty result means the graph is valid.
pub fn validate(graph: &SceneGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut by_id: HashMap<u32, &SceneObject> = HashMap::new();
    for o in &graph.objects {
        if by_id.insert(o.id, o).is_some() {
            out.push(Violation {
                rule: Rule::DuplicateObjectId,
                ids: vec![o.id],
                message: format!("object id {} used more than once", o.id),
            });
        }
        if !(0.0..=1.0).contains(&o.score) {
            out.push(Violation {
                rule: Rule::ScoreOutOfRange,
                ids: vec![o.id],
                message: format!("object score {}", o.score),
            });
        }
        if !o.bbox.fits_in(graph.shape) {
            out.push(Violation {
                rule: Rule::BoxOutOfBounds,
                ids: vec![o.id],
                message: format!("box {:?} exceeds shape {:?}", <[usize; 6]>::from(o.bbox), graph.shape),
            });
        }
    }
    for cat in [Category::VentricleSystem, Category::Midline] {
        let ids: Vec<u32> = graph.objects_of(cat).map(|o| o.id).collect();
        if ids.len() > 1 {
            out.push(Violation {
                rule: Rule::DuplicateSingleton,
                ids,
                message: format!("more than one {cat} object"),
            });
        }
    }

    let mut seen = HashSet::new();
    for (i, r) in graph.relations.iter().enumerate() {
        if !(0.0..=1.0).contains(&r.score) {
            out.push(Violation {
                rule: Rule::ScoreOutOfRange,
                ids: vec![r.subject, r.object],
                message: format!("relation {i} score {}", r.score),
            });
        }
        if r.subject == r.object {
            out.push(Violation {
                rule: Rule::SelfRelation,
                ids: vec![r.subject],
                message: format!("relation {i} points from object {} to itself", r.subject),
            });
        }
        if !seen.insert((r.subject, r.object, r.predicate)) {
            out.push(Violation {
                rule: Rule::DuplicateRelation,
                ids: vec![r.subject, r.object],
                message: format!("relation {i} repeats ({}, {}, {})", r.subject, r.object, r.predicate),
            });
        }
        let (subject, object) = match (by_id.get(&r.subject), by_id.get(&r.object)) {
            (Some(s), Some(o)) => (s, o),
            _ => {
                let missing: Vec<u32> = [r.subject, r.object]
                    .into_iter()
                    .filter(|id| !by_id.contains_key(id))
                    .collect();
                out.push(Violation {
                    rule: Rule::DanglingRelation,
                    ids: missing,
                    message: format!("relation {i} references an unknown object"),
                });
                continue;
            }
        };
        if r.subject == r.object {
            continue;
        }
        if subject.category != Category::Bleeding {
            out.push(Violation {
                rule: Rule::SubjectNotBleeding,
                ids: vec![r.subject],
                message: format!("relation {i} subject is a {}", subject.category),
            });
        }
        if object.category != r.predicate.object_category() {
            out.push(Violation {
                rule: Rule::PredicateObjectMismatch,
                ids: vec![r.subject, r.object],
                message: format!(
                    "relation {i}: {} requires a {} object, found {}",
                    r.predicate,
                    r.predicate.object_category(),
                    object.category
                ),
            });
        }
    }
    out
}

/// Every ordered (bleeding, anatomy) id pair, sorted by subject then object id.
pub fn candidate_pairs(objects: &[SceneObject]) -> Vec<(u32, u32)> {
    let mut subjects: Vec<u32> = objects
        .iter()
        .filter(|o| o.category == Category::Bleeding)
        .map(|o| o.id)
        .collect();
    let mut anatomies: Vec<u32> = objects
        .iter()
        .filter(|o| o.category != Category::Bleeding)
        .map(|o| o.id)
        .collect();
    subjects.sort_unstable();
    anatomies.sort_unstable();
    subjects
        .iter()
        .flat_map(|&s| anatomies.iter().map(move |&o| (s, o)))
        .collect()
}

/// Decade bins for bleeding volumes in cm³.
pub fn volume_bin(cm3: f64) -> &'static str {
    match cm3 {
        v if v < 0.1 => "<0.1",
        v if v < 1.0 => "0.1-1",
        v if v < 10.0 => "1-10",
        v if v < 100.0 => "10-100",
        _ => ">=100",
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub cases: usize,
    pub bleedings_per_image: BTreeMap<usize, usize>,
    pub bleeding_volumes_cm3: Vec<f64>,
    pub bleeding_volume_histogram: BTreeMap<String, usize>,
    pub relations_per_image: BTreeMap<usize, usize>,
    pub relation_counts: BTreeMap<String, usize>,
}

impl DatasetStats {
    pub fn mean_relations_per_image(&self) -> f64 {
        if self.cases == 0 {
            return 0.0;
        }
        let total: usize = self.relations_per_image.iter().map(|(k, v)| k * v).sum();
        total as f64 / self.cases as f64
    }
}

/// Volume of an object in cm³: mask voxels when a mask is attached,
/// otherwise the box volume.
pub fn object_volume_cm3(object: &SceneObject, spacing: Spacing) -> f64 {
    let voxels = match &object.mask {
        Some(m) => m.voxel_count() as f64,
        None => object.bbox.volume() as f64,
    };
    voxels * spacing.iter().product::<f64>() / 1000.0
}

pub fn stats(graphs: &[SceneGraph]) -> DatasetStats {
    let mut s = DatasetStats {
        cases: graphs.len(),
        ..Default::default()
    };
    for g in graphs {
        *s.bleedings_per_image.entry(g.bleeding_count()).or_default() += 1;
        *s.relations_per_image.entry(g.relations.len()).or_default() += 1;
        for o in g.objects_of(Category::Bleeding) {
            let v = object_volume_cm3(o, g.spacing);
            s.bleeding_volumes_cm3.push(v);
            *s.bleeding_volume_histogram.entry(volume_bin(v).to_string()).or_default() += 1;
        }
        for r in &g.relations {
            *s.relation_counts.entry(r.predicate.name().to_string()).or_default() += 1;
        }
    }
    s
}
