//! Local HTTP review API plus static hosting of the review UI.
//!
//! All data endpoints answer JSON. `labels.csv` in the unsafe set is the
//! single source of truth for labels; `POST /api/labels` rewrites it
//! atomically while holding the writer lock.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::net::SocketAddr;
use std::path::{Component, Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use anyhow::{anyhow, Context, Result};
use rccdbg_core::netcore::Task;
use serde::Deserialize;
use serde_json::{json, Value};
use tiny_http::{Header, Method, Request, Response, Server};

use crate::analysis::{best_manifest, read_summary, ClusterManifest};
use crate::assign::read_unsafe_csv;
use crate::config::PipelineConfig;
use crate::evaluate::TEST_RESULT_CSV;
use crate::report::build_report;
use crate::workspace::{csv_bytes, image_path, parse_target, write_atomic, DataSet, Workspace, LABELS_CSV, UNSAFE_CSV};

const WORKERS: usize = 4;
const MAX_BODY: u64 = 64 * 1024;

struct State {
    ws: Workspace,
    cfg: PipelineConfig,
    task: Option<Task>,
    labels: Mutex<()>,
}

pub struct ReviewServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    workers: Vec<JoinHandle<()>>,
}

impl ReviewServer {
    /// Binds `127.0.0.1:port` (0 picks a free port) and starts serving.
    pub fn start(ws: Workspace, cfg: PipelineConfig, port: u16) -> Result<Self> {
        let server = Server::http(("127.0.0.1", port)).map_err(|e| anyhow!("cannot listen on port {port}: {e}"))?;
        let addr = server.server_addr().to_ip().context("server has no IP address")?;
        let task = ws.load_model(&cfg.model).ok().map(|m| *m.task());
        let state = Arc::new(State {
            ws,
            cfg,
            task,
            labels: Mutex::new(()),
        });
        let server = Arc::new(server);
        let stop = Arc::new(AtomicBool::new(false));
        let workers = (0..WORKERS)
            .map(|_| {
                let (server, state, stop) = (server.clone(), state.clone(), stop.clone());
                std::thread::spawn(move || {
                    while !stop.load(Ordering::Relaxed) {
                        match server.recv_timeout(Duration::from_millis(100)) {
                            Ok(Some(req)) => handle(&state, req),
                            Ok(None) => {}
                            Err(e) => eprintln!("review server: {e}"),
                        }
                    }
                })
            })
            .collect();
        Ok(Self { addr, stop, workers })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the server stops.
    pub fn wait(self) {
        for w in self.workers {
            let _ = w.join();
        }
    }

    pub fn shutdown(self) {
        self.stop.store(true, Ordering::Relaxed);
        self.wait();
    }
}

struct Reply {
    status: u16,
    content_type: &'static str,
    body: Vec<u8>,
}

impl Reply {
    fn json(status: u16, v: &Value) -> Self {
        Self {
            status,
            content_type: "application/json",
            body: serde_json::to_vec_pretty(v).expect("json value serializes"),
        }
    }

    fn raw_json(body: Vec<u8>) -> Self {
        Self {
            status: 200,
            content_type: "application/json",
            body,
        }
    }

    fn error(status: u16, msg: impl std::fmt::Display) -> Self {
        Self::json(status, &json!({ "error": msg.to_string() }))
    }
}

fn header(name: &str, value: &str) -> Header {
    Header::from_bytes(name.as_bytes(), value.as_bytes()).expect("static header is valid")
}

fn handle(state: &State, mut req: Request) {
    let url = req.url().split('?').next().unwrap_or("/").to_string();
    let reply = match route(state, &mut req, &url) {
        Ok(r) => r,
        Err(e) => Reply::error(500, format!("{e:#}")),
    };
    let resp = Response::from_data(reply.body)
        .with_status_code(reply.status)
        .with_header(header("Content-Type", reply.content_type))
        .with_header(header("Access-Control-Allow-Origin", "*"))
        .with_header(header("Access-Control-Allow-Headers", "Content-Type"))
        .with_header(header("Cache-Control", "no-store"));
    if let Err(e) = req.respond(resp) {
        eprintln!("review server: {url}: {e}");
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.starts_with('.') && !id.contains(['/', '\\', '\0'])
}

fn route(state: &State, req: &mut Request, url: &str) -> Result<Reply> {
    let method = req.method().clone();
    let parts: Vec<&str> = url.trim_matches('/').split('/').collect();
    if method == Method::Options {
        return Ok(Reply { status: 204, content_type: "text/plain", body: Vec::new() });
    }
    match (&method, parts.as_slice()) {
        (Method::Get, ["api", "clusters"]) => clusters(state),
        (Method::Get, ["api", "clusters", id, "images"]) => cluster_images(state, id),
        (Method::Get, ["api", "images", id]) => image(state, id),
        (Method::Get, ["api", "report"]) => match build_report(&state.ws, &state.cfg) {
            Ok(r) => Ok(Reply::json(200, &serde_json::to_value(r)?)),
            Err(e) => Ok(Reply::error(404, format!("{e:#}"))),
        },
        (Method::Get, ["api", "unsafe"]) => unsafe_entries(state),
        (Method::Get, ["api", "status"]) => Ok(Reply::json(200, &status(state))),
        (Method::Post, ["api", "labels"]) => post_label(state, req),
        (_, ["api", ..]) => Ok(Reply::error(404, format!("no endpoint {method} {url}"))),
        (Method::Get, _) => static_file(state, url),
        _ => Ok(Reply::error(405, format!("{method} not allowed"))),
    }
}

fn manifest(state: &State) -> Result<std::result::Result<(PathBuf, ClusterManifest), Reply>> {
    match read_summary(&state.ws) {
        Ok(s) => {
            let path = state.ws.best_layer_dir(s.best_layer).join(crate::analysis::MANIFEST);
            Ok(Ok((path, best_manifest(&state.ws)?)))
        }
        Err(e) => Ok(Err(Reply::error(404, format!("{e:#}")))),
    }
}

fn clusters(state: &State) -> Result<Reply> {
    Ok(match manifest(state)? {
        Ok((path, _)) => Reply::raw_json(fs::read(path)?),
        Err(r) => r,
    })
}

fn cluster_images(state: &State, id: &str) -> Result<Reply> {
    let (_, m) = match manifest(state)? {
        Ok(m) => m,
        Err(r) => return Ok(r),
    };
    Ok(match id.parse::<usize>().ok().and_then(|i| m.cluster(i)) {
        Some(c) => Reply::json(200, &json!(c.members)),
        None => Reply::error(404, format!("no cluster {id}")),
    })
}

fn image(state: &State, id: &str) -> Result<Reply> {
    if !valid_id(id) {
        return Ok(Reply::error(400, "invalid image id"));
    }
    let ws = &state.ws;
    let dirs = [
        ws.dataset_dir(DataSet::Test),
        ws.unsafe_dir(),
        ws.dataset_dir(DataSet::Improvement),
        ws.dataset_dir(DataSet::Training),
    ];
    for dir in dirs {
        let p = image_path(&dir, id);
        if p.is_file() {
            return Ok(Reply {
                status: 200,
                content_type: "image/png",
                body: fs::read(p)?,
            });
        }
    }
    Ok(Reply::error(404, format!("no image {id}")))
}

/// Current labels in file order; the last row for an id wins.
fn read_label_file(path: &Path) -> Result<Vec<(String, String)>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path)?;
    let mut order: Vec<String> = Vec::new();
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() < 2 || (i == 0 && &rec[0] == "image_id") {
            continue;
        }
        if map.insert(rec[0].to_string(), rec[1].to_string()).is_none() {
            order.push(rec[0].to_string());
        }
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let label = map[&id].clone();
            (id, label)
        })
        .collect())
}

fn unsafe_entries(state: &State) -> Result<Reply> {
    if !state.ws.unsafe_dir().join(UNSAFE_CSV).exists() {
        return Ok(Reply::error(404, "no unsafe set yet (run `assign`)"));
    }
    let entries = read_unsafe_csv(&state.ws)?;
    let labels: BTreeMap<String, String> = read_label_file(&state.ws.unsafe_dir().join(LABELS_CSV))?.into_iter().collect();
    let rows: Vec<Value> = entries
        .iter()
        .map(|e| {
            json!({
                "image_id": e.image_id,
                "cluster": e.assigned_cluster,
                "distance": e.distance,
                "label": labels.get(&e.image_id),
            })
        })
        .collect();
    let labeled = entries.iter().filter(|e| labels.contains_key(&e.image_id)).count();
    Ok(Reply::json(200, &json!({ "entries": rows, "labeled": labeled, "total": entries.len() })))
}

#[derive(Deserialize)]
struct LabelPost {
    image_id: String,
    label: Value,
}

fn post_label(state: &State, req: &mut Request) -> Result<Reply> {
    let mut body = String::new();
    if req.as_reader().take(MAX_BODY).read_to_string(&mut body).is_err() {
        return Ok(Reply::error(400, "body is not UTF-8 text"));
    }
    let post: LabelPost = match serde_json::from_str(&body) {
        Ok(p) => p,
        Err(e) => return Ok(Reply::error(400, format!("expected {{\"image_id\", \"label\"}}: {e}"))),
    };
    let label = match &post.label {
        Value::String(s) => s.trim().to_string(),
        Value::Number(n) => n.to_string(),
        _ => return Ok(Reply::error(400, "label must be a string or a number")),
    };
    if label.is_empty() || label.contains(['\n', '\r']) {
        return Ok(Reply::error(400, "label must be a non-empty single line"));
    }
    if let Some(task) = &state.task {
        if let Err(e) = parse_target(task, &label) {
            return Ok(Reply::error(400, format!("{e:#}")));
        }
    }
    let _guard = state.labels.lock().unwrap_or_else(|p| p.into_inner());
    if !state.ws.unsafe_dir().join(UNSAFE_CSV).exists() {
        return Ok(Reply::error(409, "no unsafe set yet (run `assign`)"));
    }
    let entries = read_unsafe_csv(&state.ws)?;
    if !entries.iter().any(|e| e.image_id == post.image_id) {
        return Ok(Reply::error(404, format!("{} is not in the unsafe set", post.image_id)));
    }
    let path = state.ws.unsafe_dir().join(LABELS_CSV);
    let mut current: BTreeMap<String, String> = read_label_file(&path)?.into_iter().collect();
    if let Some(old) = current.insert(post.image_id.clone(), label.clone()) {
        eprintln!("label {}: {old} -> {label} (last write wins)", post.image_id);
    }
    // Unsafe-set order first, then labels for ids no longer in the set.
    let mut rows: Vec<Vec<String>> = Vec::new();
    for e in &entries {
        if let Some(l) = current.remove(&e.image_id) {
            rows.push(vec![e.image_id.clone(), l]);
        }
    }
    let labeled = rows.len();
    rows.extend(current.into_iter().map(|(id, l)| vec![id, l]));
    write_atomic(&path, &csv_bytes(&["image_id", "label"], rows)?)?;
    Ok(Reply::json(200, &json!({ "image_id": post.image_id, "label": label, "labeled": labeled, "total": entries.len() })))
}

fn status(state: &State) -> Value {
    let ws = &state.ws;
    let t = ws.t_dir();
    json!({
        "model": state.cfg.model,
        "steps": {
            "test": t.join(TEST_RESULT_CSV).exists(),
            "heatmaps": ws.heatmaps_dir(0).join(crate::heatmaps::META_FILE).exists(),
            "cluster": ws.analysis_root().join(crate::analysis::SUMMARY).exists(),
            "assign": ws.unsafe_dir().join(UNSAFE_CSV).exists(),
            "labels": ws.unsafe_dir().join(LABELS_CSV).exists(),
            "retrain": t.join("Retrain").join("comparison.json").exists(),
            "report": t.join("Report").join("report.json").exists(),
        }
    })
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        Some("ico") => "image/x-icon",
        _ => "application/octet-stream",
    }
}

fn static_file(state: &State, url: &str) -> Result<Reply> {
    let root = state.ws.root().join(&state.cfg.ui_dir);
    let rel = Path::new(url.trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Ok(Reply::error(400, "invalid path"));
    }
    let mut path = root.join(rel);
    if path.is_dir() {
        path = path.join("index.html");
    }
    if !path.is_file() {
        // single-page app: unknown routes fall back to the entry page
        path = root.join("index.html");
    }
    if !path.is_file() {
        return Ok(Reply {
            status: 404,
            content_type: "text/plain",
            body: format!("review UI not found in {}; the API lives under /api\n", root.display()).into_bytes(),
        });
    }
    Ok(Reply {
        status: 200,
        content_type: content_type(&path),
        body: fs::read(&path)?,
    })
}
