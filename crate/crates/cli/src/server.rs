//! HTTP/JSON API v1 for the annotation UI.
//!
//! | method | path | response |
//! |---|---|---|
//! | GET | `/api/cases` | case ids |
//! | GET | `/api/cases/{id}/meta` | shape, spacing, objects, `has_image` |
//! | GET | `/api/cases/{id}/slice/{axis}/{index}?wl=&ww=` | 8-bit grayscale PNG |
//! | GET | `/api/cases/{id}/overlay/{axis}/{index}` | indexed PNG of the label map |
//! | GET, PUT | `/api/cases/{id}/relations` | relation list |
//!
//! `axis` is `axial` (fixed z; rows y, columns x), `coronal` (fixed y; rows
//! z, columns x) or `sagittal` (fixed x; rows z, columns y). Slices come from
//! `image.nii.gz` when the case has one, otherwise from the label map.
//!
//! A PUT is validated against the case's objects before anything is
//! written; rejected payloads get 422 with the list of violations. Writes are
//! serialized per case and replace `graph.json` atomically.

use std::collections::{BTreeSet, HashMap};
use std::net::SocketAddr;
use std::path::{Path as FsPath, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};

use voxsg::graph_io::{parse_relations, read_scene_graph, to_json_value, write_scene_graph_atomic};
use voxsg::nifti::read_volume;
use voxsg::scene::{validate, Rule, SceneGraph, Violation};
use voxsg::volume::{LabelMap, Shape, Volume};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Axial,
    Coronal,
    Sagittal,
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "axial" => Ok(Axis::Axial),
            "coronal" => Ok(Axis::Coronal),
            "sagittal" => Ok(Axis::Sagittal),
            other => Err(format!("unknown axis {other:?} (expected axial, coronal or sagittal)")),
        }
    }
}

impl Axis {
    /// Index of the fixed axis in `(z, y, x)`.
    fn fixed(self) -> usize {
        match self {
            Axis::Axial => 0,
            Axis::Coronal => 1,
            Axis::Sagittal => 2,
        }
    }

    /// `(height, width)` of a slice.
    pub fn slice_size(self, shape: Shape) -> (usize, usize) {
        match self {
            Axis::Axial => (shape[1], shape[2]),
            Axis::Coronal => (shape[0], shape[2]),
            Axis::Sagittal => (shape[0], shape[1]),
        }
    }
}

/// Row-major values of one slice, or `None` when `index` is out of range.
pub fn extract_slice<T>(shape: Shape, axis: Axis, index: usize, get: impl Fn(usize, usize, usize) -> T) -> Option<Vec<T>> {
    if index >= shape[axis.fixed()] {
        return None;
    }
    let (h, w) = axis.slice_size(shape);
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            out.push(match axis {
                Axis::Axial => get(index, r, c),
                Axis::Coronal => get(r, index, c),
                Axis::Sagittal => get(r, c, index),
            });
        }
    }
    Some(out)
}

/// Map intensities through a window of width `ww` centred on `wl`.
pub fn apply_window(values: &[f64], wl: f64, ww: f64) -> Vec<u8> {
    let lo = wl - ww / 2.0;
    values
        .iter()
        .map(|&v| ((v - lo) / ww * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Overlay colours by label value; background is fully transparent.
pub const OVERLAY_PALETTE: [[u8; 3]; 4] = [[0, 0, 0], [230, 25, 75], [0, 130, 200], [60, 180, 75]];
pub const OVERLAY_ALPHA: [u8; 4] = [0, 170, 170, 170];

fn encode_png(width: usize, height: usize, data: &[u8], indexed: bool) -> Vec<u8> {
    let mut buf = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut buf, width as u32, height as u32);
        enc.set_depth(png::BitDepth::Eight);
        if indexed {
            enc.set_color(png::ColorType::Indexed);
            enc.set_palette(OVERLAY_PALETTE.concat());
            enc.set_trns(OVERLAY_ALPHA.to_vec());
        } else {
            enc.set_color(png::ColorType::Grayscale);
        }
        let mut w = enc.write_header().expect("in-memory PNG header");
        w.write_image_data(data).expect("in-memory PNG data");
    }
    buf
}

pub fn encode_grayscale_png(width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    encode_png(width, height, data, false)
}

pub fn encode_indexed_png(width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    encode_png(width, height, data, true)
}

struct Volumes {
    labels: LabelMap,
    image: Option<Volume>,
}

pub struct AppState {
    root: PathBuf,
    ids: BTreeSet<String>,
    graphs: RwLock<HashMap<String, Arc<SceneGraph>>>,
    volumes: RwLock<HashMap<String, Arc<Volumes>>>,
    locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

const IMAGE_FILES: [&str; 2] = ["image.nii.gz", "image.nii"];

impl AppState {
    /// Serve the cases under `<root>/cases`, one directory per case holding
    /// `graph.json` and `labels.nii.gz`.
    pub fn open(root: impl AsRef<FsPath>) -> Result<Self, CliError> {
        let root = root.as_ref().to_path_buf();
        let cases = root.join("cases");
        let entries = std::fs::read_dir(&cases).map_err(|e| CliError::io(cases.display(), e))?;
        let mut ids = BTreeSet::new();
        for entry in entries {
            let entry = entry.map_err(|e| CliError::io(cases.display(), e))?;
            if entry.path().join("graph.json").is_file() {
                if let Some(name) = entry.file_name().to_str() {
                    ids.insert(name.to_string());
                }
            }
        }
        Ok(AppState {
            root,
            ids,
            graphs: RwLock::default(),
            volumes: RwLock::default(),
            locks: Mutex::default(),
        })
    }

    pub fn case_ids(&self) -> Vec<String> {
        self.ids.iter().cloned().collect()
    }

    fn case_dir(&self, id: &str) -> PathBuf {
        self.root.join("cases").join(id)
    }

    fn lock_for(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.locks.lock().unwrap().entry(id.to_string()).or_default().clone()
    }

    fn check(&self, id: &str) -> Result<(), ApiError> {
        if self.ids.contains(id) {
            Ok(())
        } else {
            Err(ApiError::new(StatusCode::NOT_FOUND, format!("no case {id:?}")))
        }
    }

    async fn graph(self: &Arc<Self>, id: &str) -> Result<Arc<SceneGraph>, ApiError> {
        self.check(id)?;
        if let Some(g) = self.graphs.read().unwrap().get(id) {
            return Ok(g.clone());
        }
        let lock = self.lock_for(id);
        let _guard = lock.lock().await;
        if let Some(g) = self.graphs.read().unwrap().get(id) {
            return Ok(g.clone());
        }
        let path = self.case_dir(id).join("graph.json");
        let g = Arc::new(blocking(move || read_scene_graph(path)).await?);
        self.graphs.write().unwrap().insert(id.to_string(), g.clone());
        Ok(g)
    }

    async fn volumes(self: &Arc<Self>, id: &str) -> Result<Arc<Volumes>, ApiError> {
        self.check(id)?;
        if let Some(v) = self.volumes.read().unwrap().get(id) {
            return Ok(v.clone());
        }
        let dir = self.case_dir(id);
        let v = Arc::new(
            blocking(move || {
                let labels = LabelMap::try_from(&read_volume(dir.join("labels.nii.gz"))?)?;
                let image = match IMAGE_FILES.iter().map(|f| dir.join(f)).find(|p| p.is_file()) {
                    Some(p) => Some(read_volume(p)?),
                    None => None,
                };
                Ok(Volumes { labels, image })
            })
            .await?,
        );
        self.volumes.write().unwrap().insert(id.to_string(), v.clone());
        Ok(v)
    }

    /// Validate and persist a new relation list for case `id`.
    async fn store_relations(self: &Arc<Self>, id: &str, payload: &Value) -> Result<SceneGraph, ApiError> {
        self.check(id)?;
        let lock = self.lock_for(id);
        let _guard = lock.lock().await;
        let path = self.case_dir(id).join("graph.json");
        let read_path = path.clone();
        let mut graph = blocking(move || read_scene_graph(read_path)).await?;
        graph.relations = parse_relations(payload, &graph.objects).map_err(ApiError::rejected)?;
        let violations = validate(&graph);
        if !violations.is_empty() {
            return Err(ApiError::violations(violations));
        }
        let to_write = graph.clone();
        blocking(move || write_scene_graph_atomic(&to_write, path)).await?;
        self.graphs.write().unwrap().insert(id.to_string(), Arc::new(graph.clone()));
        Ok(graph)
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> voxsg::Result<T> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn violations(v: Vec<Violation>) -> Self {
        ApiError {
            status: StatusCode::UNPROCESSABLE_ENTITY,
            body: json!({ "error": "relations violate the scene graph invariants", "violations": v }),
        }
    }

    fn rejected(e: voxsg::Error) -> Self {
        match e {
            voxsg::Error::DanglingRelation { id, .. } => ApiError::violations(vec![Violation {
                rule: Rule::DanglingRelation,
                ids: vec![id],
                message: e.to_string(),
            }]),
            other => ApiError {
                status: StatusCode::UNPROCESSABLE_ENTITY,
                body: json!({ "error": other.to_string(), "violations": [] }),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type Shared = State<Arc<AppState>>;

async fn list_cases(State(s): Shared) -> Json<Vec<String>> {
    Json(s.case_ids())
}

async fn meta(State(s): Shared, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let graph = s.graph(&id).await?;
    let has_image = IMAGE_FILES.iter().any(|f| s.case_dir(&id).join(f).is_file());
    let mut v = to_json_value(&graph);
    let obj = v.as_object_mut().expect("graph serializes to an object");
    obj.remove("relations");
    obj.insert("has_image".into(), Value::Bool(has_image));
    Ok(Json(v))
}

fn slice_request(axis: &str, index: &str) -> Result<(Axis, usize), ApiError> {
    let axis = axis.parse().map_err(|e: String| ApiError::new(StatusCode::BAD_REQUEST, e))?;
    let index = index
        .parse()
        .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, format!("slice index {index:?} is not a number")))?;
    Ok((axis, index))
}

fn out_of_range(axis: Axis, index: usize, shape: Shape) -> ApiError {
    ApiError::new(
        StatusCode::NOT_FOUND,
        format!("{axis:?} slice {index} outside volume of shape {shape:?}"),
    )
}

fn png_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

#[derive(Debug, Default, Deserialize)]
pub struct Window {
    pub wl: Option<f64>,
    pub ww: Option<f64>,
}

/// Brain window for CT; label maps span their four values.
const CT_WINDOW: (f64, f64) = (40.0, 80.0);
const LABEL_WINDOW: (f64, f64) = (1.5, 3.0);

async fn slice(
    State(s): Shared,
    Path((id, axis, index)): Path<(String, String, String)>,
    Query(window): Query<Window>,
) -> Result<Response, ApiError> {
    let (axis, index) = slice_request(&axis, &index)?;
    let vols = s.volumes(&id).await?;
    let (default_wl, default_ww) = if vols.image.is_some() { CT_WINDOW } else { LABEL_WINDOW };
    let wl = window.wl.unwrap_or(default_wl);
    let ww = window.ww.unwrap_or(default_ww);
    if !(wl.is_finite() && ww.is_finite() && ww > 0.0) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "window width must be positive"));
    }
    let values = match &vols.image {
        Some(img) => extract_slice(img.shape(), axis, index, |z, y, x| img.get(z, y, x)),
        None => extract_slice(vols.labels.shape(), axis, index, |z, y, x| vols.labels.get(z, y, x) as f64),
    };
    let shape = vols.image.as_ref().map_or(vols.labels.shape(), Volume::shape);
    let values = values.ok_or_else(|| out_of_range(axis, index, shape))?;
    let (h, w) = axis.slice_size(shape);
    Ok(png_response(encode_grayscale_png(w, h, &apply_window(&values, wl, ww))))
}

async fn overlay(
    State(s): Shared,
    Path((id, axis, index)): Path<(String, String, String)>,
) -> Result<Response, ApiError> {
    let (axis, index) = slice_request(&axis, &index)?;
    let vols = s.volumes(&id).await?;
    let shape = vols.labels.shape();
    let values = extract_slice(shape, axis, index, |z, y, x| vols.labels.get(z, y, x))
        .ok_or_else(|| out_of_range(axis, index, shape))?;
    let (h, w) = axis.slice_size(shape);
    Ok(png_response(encode_indexed_png(w, h, &values)))
}

async fn get_relations(State(s): Shared, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let graph = s.graph(&id).await?;
    Ok(Json(to_json_value(&graph)["relations"].clone()))
}

async fn put_relations(State(s): Shared, Path(id): Path<String>, body: Bytes) -> Result<Json<Value>, ApiError> {
    s.check(&id)?;
    let payload: Value = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("invalid JSON: {e}")))?;
    let graph = s.store_relations(&id, &payload).await?;
    Ok(Json(to_json_value(&graph)["relations"].clone()))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/cases", get(list_cases))
        .route("/api/cases/{id}/meta", get(meta))
        .route("/api/cases/{id}/slice/{axis}/{index}", get(slice))
        .route("/api/cases/{id}/overlay/{axis}/{index}", get(overlay))
        .route("/api/cases/{id}/relations", get(get_relations).put(put_relations))
        .with_state(state)
}

pub async fn serve(state: AppState, addr: SocketAddr) -> Result<(), CliError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|e| CliError::Server(format!("cannot listen on {addr}: {e}")))?;
    let local = listener.local_addr().map_err(|e| CliError::Server(e.to_string()))?;
    eprintln!("serving {} cases on http://{local}", state.ids.len());
    axum::serve(listener, router(Arc::new(state)))
        .await
        .map_err(|e| CliError::Server(e.to_string()))
}
