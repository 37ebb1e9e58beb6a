//! Scene-graph JSON, schema v1.
//!
//! ```json
//! { "case_id": "case_0000", "shape": [nz, ny, nx], "spacing_mm": [sz, sy, sx],
//!   "objects": [ {"id": 0, "category": 1, "box": [z0, y0, x0, z1, y1, x1], "score": 1.0} ],
//!   "relations": [ {"subject": 0, "object": 2, "predicate": 2, "score": 1.0} ] }
//! ```
//!
//! Boxes are half-open. Object masks are not part of the schema.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::Box3;
use crate::scene::{Category, Predicate, Relation, SceneGraph, SceneObject};

#[derive(Serialize)]
struct GraphOut<'a> {
    case_id: &'a str,
    shape: [usize; 3],
    spacing_mm: [f64; 3],
    objects: Vec<ObjectOut>,
    relations: &'a [Relation],
}

#[derive(Serialize)]
struct ObjectOut {
    id: u32,
    category: Category,
    #[serde(rename = "box")]
    bbox: Box3,
    score: f64,
}

pub fn to_json_value(graph: &SceneGraph) -> Value {
    let out = GraphOut {
        case_id: &graph.case_id,
        shape: graph.shape,
        spacing_mm: graph.spacing,
        objects: graph
            .objects
            .iter()
            .map(|o| ObjectOut {
                id: o.id,
                category: o.category,
                bbox: o.bbox,
                score: o.score,
            })
            .collect(),
        relations: &graph.relations,
    };
    serde_json::to_value(out).expect("scene graph serializes")
}

pub fn to_json_string(graph: &SceneGraph) -> String {
    serde_json::to_string_pretty(&to_json_value(graph)).expect("scene graph serializes")
}

fn field<'a>(obj: &'a serde_json::Map<String, Value>, path: &str, key: &str) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| Error::schema(join(path, key), "missing field"))
}

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn as_object<'a>(v: &'a Value, path: &str) -> Result<&'a serde_json::Map<String, Value>> {
    v.as_object()
        .ok_or_else(|| Error::schema(path, "expected an object"))
}

fn reject_unknown(obj: &serde_json::Map<String, Value>, path: &str, known: &[&str]) -> Result<()> {
    match obj.keys().find(|k| !known.contains(&k.as_str())) {
        Some(k) => Err(Error::schema(join(path, k), "unknown field")),
        None => Ok(()),
    }
}

fn uint(v: &Value, path: &str) -> Result<u64> {
    v.as_u64()
        .ok_or_else(|| Error::schema(path, format!("expected a non-negative integer, found {v}")))
}

fn unit_score(v: &Value, path: &str) -> Result<f64> {
    let s = v
        .as_f64()
        .ok_or_else(|| Error::schema(path, format!("expected a number, found {v}")))?;
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::schema(path, format!("score {s} outside [0, 1]")));
    }
    Ok(s)
}

fn triple<T>(v: &Value, path: &str, parse: impl Fn(&Value, &str) -> Result<T>) -> Result<[T; 3]> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == 3)
        .ok_or_else(|| Error::schema(path, "expected an array of 3 numbers"))?;
    Ok([
        parse(&arr[0], &format!("{path}[0]"))?,
        parse(&arr[1], &format!("{path}[1]"))?,
        parse(&arr[2], &format!("{path}[2]"))?,
    ])
}

fn parse_object(v: &Value, path: &str, shape: [usize; 3]) -> Result<SceneObject> {
    let obj = as_object(v, path)?;
    reject_unknown(obj, path, &["id", "category", "box", "score"])?;
    let id_path = join(path, "id");
    let id = uint(field(obj, path, "id")?, &id_path)?;
    let id = u32::try_from(id).map_err(|_| Error::schema(id_path, "id exceeds u32"))?;

    let cat_path = join(path, "category");
    let cat = uint(field(obj, path, "category")?, &cat_path)?;
    let category = u8::try_from(cat)
        .ok()
        .and_then(Category::from_id)
        .ok_or_else(|| Error::schema(&cat_path, format!("category {cat} is not one of 1, 2, 3")))?;

    let box_path = join(path, "box");
    let raw = field(obj, path, "box")?
        .as_array()
        .filter(|a| a.len() == 6)
        .ok_or_else(|| Error::schema(&box_path, "expected [z0, y0, x0, z1, y1, x1]"))?;
    let mut coords = [0usize; 6];
    for (i, c) in raw.iter().enumerate() {
        coords[i] = uint(c, &format!("{box_path}[{i}]"))? as usize;
    }
    let bbox = Box3::try_from(coords)
        .map_err(|e| Error::schema(&box_path, e.to_string()))?;
    if !bbox.fits_in(shape) {
        return Err(Error::schema(&box_path, format!("box exceeds shape {shape:?}")));
    }

    let score = unit_score(field(obj, path, "score")?, &join(path, "score"))?;
    Ok(SceneObject::new(id, category, bbox, score))
}

fn parse_relation(v: &Value, path: &str) -> Result<Relation> {
    let obj = as_object(v, path)?;
    reject_unknown(obj, path, &["subject", "object", "predicate", "score"])?;
    let id = |key: &str| -> Result<u32> {
        let p = join(path, key);
        let raw = uint(field(obj, path, key)?, &p)?;
        u32::try_from(raw).map_err(|_| Error::schema(p, "id exceeds u32"))
    };
    let subject = id("subject")?;
    let object = id("object")?;
    let pred_path = join(path, "predicate");
    let pred = uint(field(obj, path, "predicate")?, &pred_path)?;
    let predicate = u8::try_from(pred)
        .ok()
        .and_then(Predicate::from_id)
        .ok_or_else(|| Error::schema(&pred_path, format!("predicate {pred} is not one of 1, 2, 3")))?;
    let score = unit_score(field(obj, path, "score")?, &join(path, "score"))?;
    Ok(Relation {
        subject,
        object,
        predicate,
        score,
    })
}

/// Parse a relation list (the `relations` array of schema v1) against the
/// object ids of `graph`.
pub fn parse_relations(value: &Value, objects: &[SceneObject]) -> Result<Vec<Relation>> {
    let arr = value
        .as_array()
        .ok_or_else(|| Error::schema("relations", "expected an array"))?;
    let ids: HashSet<u32> = objects.iter().map(|o| o.id).collect();
    let mut out = Vec::with_capacity(arr.len());
    for (i, r) in arr.iter().enumerate() {
        let rel = parse_relation(r, &format!("relations[{i}]"))?;
        for id in [rel.subject, rel.object] {
            if !ids.contains(&id) {
                return Err(Error::DanglingRelation { index: i, id });
            }
        }
        out.push(rel);
    }
    Ok(out)
}

pub fn from_json_value(value: &Value) -> Result<SceneGraph> {
    let root = as_object(value, "")?;
    reject_unknown(root, "", &["case_id", "shape", "spacing_mm", "objects", "relations"])?;
    let case_id = field(root, "", "case_id")?
        .as_str()
        .ok_or_else(|| Error::schema("case_id", "expected a string"))?
        .to_string();
    let shape = triple(field(root, "", "shape")?, "shape", |v, p| {
        let n = uint(v, p)? as usize;
        if n == 0 {
            return Err(Error::schema(p, "extent must be at least 1"));
        }
        Ok(n)
    })?;
    let spacing = triple(field(root, "", "spacing_mm")?, "spacing_mm", |v, p| {
        let s = v
            .as_f64()
            .ok_or_else(|| Error::schema(p, format!("expected a number, found {v}")))?;
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::schema(p, format!("spacing {s} must be positive")));
        }
        Ok(s)
    })?;

    let objs = field(root, "", "objects")?
        .as_array()
        .ok_or_else(|| Error::schema("objects", "expected an array"))?;
    let objects = objs
        .iter()
        .enumerate()
        .map(|(i, o)| parse_object(o, &format!("objects[{i}]"), shape))
        .collect::<Result<Vec<_>>>()?;
    let relations = parse_relations(field(root, "", "relations")?, &objects)?;
    Ok(SceneGraph {
        case_id,
        shape,
        spacing,
        objects,
        relations,
    })
}

pub fn from_json_str(text: &str) -> Result<SceneGraph> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| Error::schema("", format!("invalid JSON: {e}")))?;
    from_json_value(&value)
}

pub fn read_scene_graph(path: impl AsRef<Path>) -> Result<SceneGraph> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json_str(&text)
}

pub fn write_scene_graph(graph: &SceneGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_json_string(graph)).map_err(|e| Error::io(path, e))
}

/// Write via a sibling temporary file and rename, so readers never observe
/// a partially written graph.
pub fn write_scene_graph_atomic(graph: &SceneGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("json.tmp");
    write_scene_graph(graph, &tmp)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::tests::example_graph;

    #[test]
    fn empty_graph_round_trips() {
        let g = SceneGraph::new("empty", [4, 5, 6], [5.0, 0.4, 0.4]);
        assert_eq!(from_json_str(&to_json_string(&g)).unwrap(), g);
    }

    #[test]
    fn example_graph_round_trips() {
        let g = example_graph();
        assert_eq!(from_json_str(&to_json_string(&g)).unwrap(), g);
    }

    #[test]
    fn dangling_relation_rejected() {
        let mut v = to_json_value(&example_graph());
        v["relations"][1]["object"] = Value::from(99);
        let err = from_json_value(&v).unwrap_err();
        assert!(matches!(err, Error::DanglingRelation { index: 1, id: 99 }));
    }

    #[test]
    fn schema_errors_name_the_field() {
        let base = to_json_value(&example_graph());

        let mut v = base.clone();
        v["objects"][2]["category"] = Value::from(4);
        match from_json_value(&v).unwrap_err() {
            Error::SchemaViolation { field, .. } => assert_eq!(field, "objects[2].category"),
            e => panic!("unexpected {e}"),
        }

        let mut v = base.clone();
        v["relations"][0]["score"] = Value::from(1.5);
        match from_json_value(&v).unwrap_err() {
            Error::SchemaViolation { field, .. } => assert_eq!(field, "relations[0].score"),
            e => panic!("unexpected {e}"),
        }

        let mut v = base.clone();
        v["objects"][0]["box"] = serde_json::json!([0, 0, 0, 0, 1, 1]);
        match from_json_value(&v).unwrap_err() {
            Error::SchemaViolation { field, .. } => assert_eq!(field, "objects[0].box"),
            e => panic!("unexpected {e}"),
        }

        let mut v = base;
        v.as_object_mut().unwrap().remove("spacing_mm");
        match from_json_value(&v).unwrap_err() {
            Error::SchemaViolation { field, .. } => assert_eq!(field, "spacing_mm"),
            e => panic!("unexpected {e}"),
        }
    }
}
