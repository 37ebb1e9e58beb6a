#![allow(dead_code)]

use voxsg::instancing::{extract_objects, InstancingConfig};
use voxsg::relnet::{featurize, CaseFeatures, TrainingCase};
use voxsg::scene::{Category, Predicate, Relation, SceneGraph};
use voxsg::volume::{linear_index, LabelMap};

pub const SHAPE: [usize; 3] = [12, 16, 16];

/// A small label map with `bleedings` bleedings (at most 3), a ventricle,
/// and optionally a midline. Anatomy is only partially filled inside its
/// box so occupancy features are informative.
pub fn label_map(bleedings: usize, midline: bool) -> LabelMap {
    assert!(bleedings <= 3);
    let mut l = vec![0u8; SHAPE.iter().product()];
    let mut paint = |z: usize, y: usize, x: usize, v: u8| l[linear_index(SHAPE, z, y, x)] = v;
    for z in 3..9 {
        for y in 5..11 {
            for x in 5..11 {
                if (z + y + x) % 3 != 0 {
                    paint(z, y, x, Category::VentricleSystem.id());
                }
            }
        }
    }
    if midline {
        for z in 0..12 {
            for y in 0..16 {
                paint(z, y, 13 + (z / 6), Category::Midline.id());
            }
        }
    }
    for i in 0..bleedings {
        for z in 2 * i..2 * i + 2 {
            for y in 12..15 {
                for x in 3 * i..3 * i + 2 {
                    paint(z, y, x, Category::Bleeding.id());
                }
            }
        }
    }
    LabelMap::new(SHAPE, [2.0, 2.0, 2.0], l).unwrap()
}

/// Graph of `n_objects` in {2, 3, 5} with relations on compatible pairs.
pub fn fixture(n_objects: usize) -> (LabelMap, SceneGraph) {
    let (bleedings, midline) = match n_objects {
        2 => (1, false),
        3 => (1, true),
        5 => (3, true),
        _ => panic!("fixtures have 2, 3 or 5 objects"),
    };
    let map = label_map(bleedings, midline);
    let config = InstancingConfig {
        min_bleeding_volume_cm3: 0.0,
        min_anatomy_voxels: 1,
        ..Default::default()
    };
    let objects = extract_objects(&map, &config, None);
    assert_eq!(objects.len(), n_objects);
    let find = |c: Category| objects.iter().find(|o| o.category == c).map(|o| o.id);
    let vent = find(Category::VentricleSystem).unwrap();
    let mut relations = vec![Relation { subject: 0, object: vent, predicate: Predicate::BloodFlow, score: 1.0 }];
    if let Some(mid) = find(Category::Midline) {
        relations.push(Relation { subject: 0, object: mid, predicate: Predicate::MidlineShift, score: 1.0 });
    }
    if bleedings == 3 {
        relations.push(Relation { subject: 2, object: vent, predicate: Predicate::VentricleAsymmetry, score: 1.0 });
    }
    let mut graph = SceneGraph::new(format!("fixture{n_objects}"), SHAPE, [2.0; 3]);
    graph.objects = objects;
    graph.relations = relations;
    (map, graph)
}

pub fn features(map: &LabelMap, graph: &SceneGraph, grounding: bool, grid: usize) -> CaseFeatures {
    featurize(&graph.objects, SHAPE, Some(map), grounding, grid).unwrap()
}

pub fn training_case(n_objects: usize, grounding: bool, grid: usize) -> TrainingCase {
    let (map, graph) = fixture(n_objects);
    TrainingCase::new(features(&map, &graph, grounding, grid), &graph)
}
