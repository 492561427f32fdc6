//! C ABI over the `landrisk` crate.
//!
//! Handles are opaque pointers created by `lr_*_open`/`lr_*_build`/`lr_*_run`
//! and released with the matching `lr_*_free`. Every fallible call returns an
//! [`LrStatus`]; on failure the message is available from [`lr_last_error`]
//! until the next failing call on the same thread. Strings handed out by the
//! library must be released with [`lr_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use landrisk::catalog::{filter_region, parse_catalog, BoundingBox, CatalogFormat, EventRecord};
use landrisk::graph_store::{build_knowledge_graph_with, KnowledgeGraphOptions, NodeKind, PropertyGraph};
use landrisk::orchestrator::{run_pipeline, PipelineConfig, PipelineRun};
use landrisk::retrieval::{cosine, retrieve, Embedding, EmbeddingProvider, HashingEmbedder};
use landrisk::spatial_graph::haversine_km;
use landrisk::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    Schema = 5,
    Parse = 6,
    Argument = 7,
    Lookup = 8,
    Construction = 9,
    Shape = 10,
    Divergence = 11,
    Retrieval = 12,
    Json = 13,
    Panic = 14,
}

/// Node kinds accepted by [`lr_graph_count_kind`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrNodeKind {
    Event = 0,
    Source = 1,
    GazetteerPoint = 2,
    LandslideProfile = 3,
}

/// Records kept after parsing and region filtering.
pub struct LrCatalog {
    records: Vec<EventRecord>,
    rejected: usize,
}

/// Knowledge graph with event embeddings.
pub struct LrGraph {
    graph: PropertyGraph,
    embedder: HashingEmbedder,
}

/// Result of a full pipeline run.
pub struct LrRun {
    run: PipelineRun,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> LrStatus {
    match err.root() {
        Error::Io { .. } => LrStatus::Io,
        Error::Format(_) => LrStatus::Format,
        Error::Schema(_) => LrStatus::Schema,
        Error::Parse(_) => LrStatus::Parse,
        Error::Argument(_) => LrStatus::Argument,
        Error::Lookup(_) => LrStatus::Lookup,
        Error::Construction(_) => LrStatus::Construction,
        Error::Shape(_) => LrStatus::Shape,
        Error::Divergence { .. } => LrStatus::Divergence,
        Error::Retrieval(_) => LrStatus::Retrieval,
        Error::Json(_) => LrStatus::Json,
        Error::Stage { .. } => unreachable!("root strips stage wrappers"),
    }
}

struct Fail(LrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LrStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_last_error(msg);
            code
        }
        Err(_) => {
            set_last_error("panic inside landrisk".into());
            LrStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(LrStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(LrStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(LrStatus::NullPointer, format!("{what} is null")))
}

fn out_arg<T>(p: *mut T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(LrStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn to_c_string(s: String) -> Result<*mut c_char, Fail> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Fail(LrStatus::Json, "output contains a NUL byte".into()))
}

fn json_err(e: serde_json::Error) -> Fail {
    Fail(LrStatus::Json, e.to_string())
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn lr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Great-circle distance in km between two (lat, lon) points in degrees.
#[no_mangle]
pub extern "C" fn lr_haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    haversine_km((lat1, lon1), (lat2, lon2))
}

/// Write the unit hashing embedding of `text` into `out[0..dim]`.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` must point to `dim`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lr_embed(text: *const c_char, dim: usize, out: *mut f64) -> LrStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        out_arg(out, "out")?;
        let e = HashingEmbedder::new(dim)?.embed(text);
        std::slice::from_raw_parts_mut(out, dim).copy_from_slice(e.as_slice());
        Ok(())
    })
}

/// Cosine similarity of two unit vectors of length `dim`.
///
/// # Safety
/// `a` and `b` must each point to `dim` readable doubles; `out` to one
/// writable double.
#[no_mangle]
pub unsafe extern "C" fn lr_cosine(a: *const f64, b: *const f64, dim: usize, out: *mut f64) -> LrStatus {
    guard(|| {
        let a = ref_arg(a, "a")?;
        let b = ref_arg(b, "b")?;
        out_arg(out, "out")?;
        let a = Embedding::from_unit(std::slice::from_raw_parts(a, dim).to_vec())?;
        let b = Embedding::from_unit(std::slice::from_raw_parts(b, dim).to_vec())?;
        *out = cosine(&a, &b)?;
        Ok(())
    })
}

/// Parse a catalog and keep the records inside the bounding box.
///
/// `format` is `"csv"`, `"json"` or null to infer from the extension.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lr_catalog_open(
    path: *const c_char,
    format: *const c_char,
    lat_min: f64,
    lat_max: f64,
    lon_min: f64,
    lon_max: f64,
    out: *mut *mut LrCatalog,
) -> LrStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = Path::new(str_arg(path, "path")?);
        let format = if format.is_null() {
            CatalogFormat::from_path(path)
                .ok_or_else(|| Fail(LrStatus::Format, format!("cannot infer format of {}", path.display())))?
        } else {
            match str_arg(format, "format")?.to_ascii_lowercase().as_str() {
                "csv" => CatalogFormat::Csv,
                "json" => CatalogFormat::Json,
                other => return Err(Fail(LrStatus::Format, format!("unsupported catalog format: {other}"))),
            }
        };
        let bbox = BoundingBox::new(lat_min, lat_max, lon_min, lon_max)?;
        let parsed = parse_catalog(path, format)?;
        let records = filter_region(&parsed.records, &bbox)?;
        *out = Box::into_raw(Box::new(LrCatalog {
            records,
            rejected: parsed.rejected.len(),
        }));
        Ok(())
    })
}

/// Number of records kept. Zero for null.
///
/// # Safety
/// `catalog` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lr_catalog_len(catalog: *const LrCatalog) -> usize {
    catalog.as_ref().map_or(0, |c| c.records.len())
}

/// Number of rows rejected while parsing. Zero for null.
///
/// # Safety
/// `catalog` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lr_catalog_rejected(catalog: *const LrCatalog) -> usize {
    catalog.as_ref().map_or(0, |c| c.rejected)
}

/// Coordinates of record `index`.
///
/// # Safety
/// `catalog` must be a live handle; `lat` and `lon` writable.
#[no_mangle]
pub unsafe extern "C" fn lr_catalog_coords(
    catalog: *const LrCatalog,
    index: usize,
    lat: *mut f64,
    lon: *mut f64,
) -> LrStatus {
    guard(|| {
        let c = ref_arg(catalog, "catalog")?;
        out_arg(lat, "lat")?;
        out_arg(lon, "lon")?;
        let r = c.records.get(index).ok_or_else(|| {
            Fail(LrStatus::Argument, format!("record {index} out of range ({})", c.records.len()))
        })?;
        (*lat, *lon) = r.coords();
        Ok(())
    })
}

/// # Safety
/// `catalog` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn lr_catalog_free(catalog: *mut LrCatalog) {
    if !catalog.is_null() {
        drop(Box::from_raw(catalog));
    }
}

/// Build the knowledge graph of a catalog with `dim`-dimensional event
/// embeddings. `near_km <= 0` disables NEAR edges.
///
/// # Safety
/// `catalog` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lr_graph_build(
    catalog: *const LrCatalog,
    dim: usize,
    near_km: f64,
    out: *mut *mut LrGraph,
) -> LrStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ptr::null_mut();
        let c = ref_arg(catalog, "catalog")?;
        let embedder = HashingEmbedder::new(dim)?;
        let opts = KnowledgeGraphOptions {
            embedder: Some(&embedder),
            near_threshold_km: (near_km > 0.0).then_some(near_km),
        };
        let graph = build_knowledge_graph_with(&c.records, &opts)?;
        *out = Box::into_raw(Box::new(LrGraph { graph, embedder }));
        Ok(())
    })
}

/// Total node count. Zero for null.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lr_graph_node_count(graph: *const LrGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.graph.node_count())
}

/// Total edge count. Zero for null.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lr_graph_edge_count(graph: *const LrGraph) -> usize {
    graph.as_ref().map_or(0, |g| g.graph.edge_count())
}

/// Nodes of one kind. Zero for null.
///
/// # Safety
/// `graph` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lr_graph_count_kind(graph: *const LrGraph, kind: LrNodeKind) -> usize {
    let kind = match kind {
        LrNodeKind::Event => NodeKind::Event,
        LrNodeKind::Source => NodeKind::Source,
        LrNodeKind::GazetteerPoint => NodeKind::GazetteerPoint,
        LrNodeKind::LandslideProfile => NodeKind::LandslideProfile,
    };
    graph.as_ref().map_or(0, |g| g.graph.count_kind(kind))
}

/// Retrieve the `k` events most similar to `query` (plus one-hop context when
/// `expand` is nonzero) and return the result as a JSON string.
///
/// # Safety
/// `graph` must be a live handle, `query` NUL-terminated, `json_out` writable.
/// Free the returned string with [`lr_string_free`].
#[no_mangle]
pub unsafe extern "C" fn lr_graph_query(
    graph: *const LrGraph,
    query: *const c_char,
    k: usize,
    expand: i32,
    json_out: *mut *mut c_char,
) -> LrStatus {
    guard(|| {
        out_arg(json_out, "json_out")?;
        *json_out = ptr::null_mut();
        let g = ref_arg(graph, "graph")?;
        let query = str_arg(query, "query")?;
        let result = retrieve(&g.graph, &g.embedder, query, k, expand != 0)?;
        *json_out = to_c_string(serde_json::to_string(&result).map_err(json_err)?)?;
        Ok(())
    })
}

/// # Safety
/// `graph` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn lr_graph_free(graph: *mut LrGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// Run the whole pipeline from a TOML or JSON config file.
///
/// # Safety
/// `config_path` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lr_pipeline_run(config_path: *const c_char, out: *mut *mut LrRun) -> LrStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ptr::null_mut();
        let cfg = PipelineConfig::load(Path::new(str_arg(config_path, "config_path")?))?;
        let run = run_pipeline(&cfg)?;
        *out = Box::into_raw(Box::new(LrRun { run }));
        Ok(())
    })
}

/// Number of hotspots found. Zero for null.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lr_run_hotspot_count(run: *const LrRun) -> usize {
    run.as_ref().map_or(0, |r| r.run.hotspots.len())
}

/// Run summary as a JSON string.
///
/// # Safety
/// `run` must be a live handle; `json_out` writable. Free the returned string
/// with [`lr_string_free`].
#[no_mangle]
pub unsafe extern "C" fn lr_run_summary_json(run: *const LrRun, json_out: *mut *mut c_char) -> LrStatus {
    guard(|| {
        out_arg(json_out, "json_out")?;
        *json_out = ptr::null_mut();
        let r = ref_arg(run, "run")?;
        *json_out = to_c_string(serde_json::to_string(&r.run.summary).map_err(json_err)?)?;
        Ok(())
    })
}

/// Response plan as a JSON string.
///
/// # Safety
/// Same contract as [`lr_run_summary_json`].
#[no_mangle]
pub unsafe extern "C" fn lr_run_response_plan_json(run: *const LrRun, json_out: *mut *mut c_char) -> LrStatus {
    guard(|| {
        out_arg(json_out, "json_out")?;
        *json_out = ptr::null_mut();
        let r = ref_arg(run, "run")?;
        *json_out = to_c_string(serde_json::to_string(&r.run.response_plan).map_err(json_err)?)?;
        Ok(())
    })
}

/// # Safety
/// `run` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn lr_run_free(run: *mut LrRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
