use serde_json::json;
use tempfile::TempDir;
use voxsg::geometry::Box3;
use voxsg::graph_io::{from_json_str, from_json_value, read_scene_graph, to_json_string, to_json_value, write_scene_graph_atomic};
use voxsg::scene::{
    candidate_pairs, compatible_predicates, stats, validate, Category, Predicate, Relation, Rule, SceneGraph, SceneObject,
};
use voxsg::Error;

fn graph() -> SceneGraph {
    let mut g = SceneGraph::new("case_0007", [32, 48, 48], [2.0, 2.0, 2.0]);
    let b = |v: [usize; 6]| Box3::try_from(v).unwrap();
    g.objects = vec![
        SceneObject::new(0, Category::Bleeding, b([2, 3, 4, 8, 9, 10]), 1.0),
        SceneObject::new(1, Category::Bleeding, b([10, 10, 10, 12, 12, 12]), 0.75),
        SceneObject::new(2, Category::VentricleSystem, b([8, 16, 14, 20, 32, 34]), 1.0),
        SceneObject::new(3, Category::Midline, b([0, 0, 23, 32, 48, 25]), 1.0),
    ];
    g.relations = vec![
        Relation { subject: 0, object: 3, predicate: Predicate::MidlineShift, score: 1.0 },
        Relation { subject: 1, object: 2, predicate: Predicate::BloodFlow, score: 0.5 },
    ];
    g
}

#[test]
fn json_round_trip_preserves_the_graph() {
    let g = graph();
    let text = to_json_string(&g);
    assert_eq!(from_json_str(&text).unwrap(), g);
    let v = to_json_value(&g);
    assert_eq!(v["objects"][0]["box"], json!([2, 3, 4, 8, 9, 10]));
    assert_eq!(v["relations"][1]["predicate"], json!(2));
    assert_eq!(v["spacing_mm"], json!([2.0, 2.0, 2.0]));
}

#[test]
fn atomic_write_replaces_the_file() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("graph.json");
    let mut g = graph();
    write_scene_graph_atomic(&g, &path).unwrap();
    g.relations.clear();
    write_scene_graph_atomic(&g, &path).unwrap();
    assert_eq!(read_scene_graph(&path).unwrap(), g);
    let names: Vec<_> = std::fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![std::ffi::OsString::from("graph.json")]);
}

#[test]
fn schema_violations_name_the_field() {
    let mut v = to_json_value(&graph());
    v["objects"][1]["category"] = json!(9);
    let err = from_json_value(&v).unwrap_err();
    assert!(err.to_string().contains("objects[1]"), "{err}");

    let mut v = to_json_value(&graph());
    v["objects"][0]["colour"] = json!("red");
    assert!(matches!(from_json_value(&v), Err(Error::SchemaViolation { .. })));

    let mut v = to_json_value(&graph());
    v["objects"][0]["box"] = json!([5, 5, 5, 5, 6, 6]);
    assert!(from_json_value(&v).is_err());

    let mut v = to_json_value(&graph());
    v["relations"][0]["object"] = json!(42);
    assert!(matches!(from_json_value(&v), Err(Error::DanglingRelation { index: 0, id: 42 })));

    let mut v = to_json_value(&graph());
    v.as_object_mut().unwrap().remove("shape");
    assert!(from_json_value(&v).is_err());

    assert!(from_json_str("{not json").is_err());
}

#[test]
fn valid_graph_has_no_violations() {
    assert!(validate(&graph()).is_empty());
}

#[test]
fn each_invariant_is_reported() {
    let rules = |g: &SceneGraph| validate(g).iter().map(|v| v.rule).collect::<Vec<_>>();

    let mut g = graph();
    g.relations.push(Relation { subject: 1, object: 3, predicate: Predicate::BloodFlow, score: 1.0 });
    assert_eq!(rules(&g), vec![Rule::PredicateObjectMismatch]);

    let mut g = graph();
    g.relations.push(Relation { subject: 2, object: 2, predicate: Predicate::BloodFlow, score: 1.0 });
    assert!(rules(&g).contains(&Rule::SelfRelation));

    let mut g = graph();
    g.relations.push(Relation { subject: 2, object: 3, predicate: Predicate::MidlineShift, score: 1.0 });
    assert_eq!(rules(&g), vec![Rule::SubjectNotBleeding]);

    let mut g = graph();
    g.relations.push(g.relations[0]);
    assert_eq!(rules(&g), vec![Rule::DuplicateRelation]);

    let mut g = graph();
    g.objects.push(SceneObject::new(4, Category::Midline, Box3::try_from([0, 0, 0, 1, 1, 1]).unwrap(), 1.0));
    assert_eq!(rules(&g), vec![Rule::DuplicateSingleton]);

    let mut g = graph();
    g.objects[1].id = 0;
    assert!(rules(&g).contains(&Rule::DuplicateObjectId));

    let mut g = graph();
    g.objects[1].score = 1.5;
    assert_eq!(rules(&g), vec![Rule::ScoreOutOfRange]);

    let mut g = graph();
    g.objects[0].bbox = Box3::try_from([0, 0, 0, 33, 1, 1]).unwrap();
    assert_eq!(rules(&g), vec![Rule::BoxOutOfBounds]);

    let mut g = graph();
    g.relations[0].object = 17;
    assert_eq!(rules(&g), vec![Rule::DanglingRelation]);
}

#[test]
fn compatibility_table() {
    use Category::*;
    assert_eq!(compatible_predicates(Bleeding, Midline), vec![Predicate::MidlineShift]);
    assert_eq!(
        compatible_predicates(Bleeding, VentricleSystem),
        vec![Predicate::BloodFlow, Predicate::VentricleAsymmetry]
    );
    assert!(compatible_predicates(Bleeding, Bleeding).is_empty());
    assert!(compatible_predicates(Midline, VentricleSystem).is_empty());
}

#[test]
fn candidate_pairs_link_each_bleeding_to_each_anatomy() {
    let pairs = candidate_pairs(&graph().objects);
    assert_eq!(pairs, vec![(0, 2), (0, 3), (1, 2), (1, 3)]);
}

#[test]
fn stats_count_bleedings_and_relations() {
    let s = stats(&[graph(), SceneGraph::new("empty", [4, 4, 4], [1.0; 3])]);
    assert_eq!(s.cases, 2);
    assert_eq!(s.bleedings_per_image.get(&2), Some(&1));
    assert_eq!(s.bleedings_per_image.get(&0), Some(&1));
    assert_eq!(s.relation_counts.get("midline-shift"), Some(&1));
    assert_eq!(s.mean_relations_per_image(), 1.0);
    assert_eq!(s.bleeding_volumes_cm3.len(), 2);
}
