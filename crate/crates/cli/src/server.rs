//! HTTP API for the latent explorer.
//!
//! `GET /meta`, `GET /latent`, `POST /decode`, `POST /morph`, `GET /audio/:id`.
//! Bodies are JSON; audio is returned as WAV bytes.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use soundmorph::audio::{encode_wav_bytes, load_split_from_manifest, AudioClip, DatasetSplit};
use soundmorph::eval::{class_center, export_projection_2d, LatentDataset, LatentEntry};
use soundmorph::morph::{latent_of, render_morph, DecodeMode, MorphRequest, DEFAULT_GAP_MS};
use soundmorph::nn::{load_checkpoint, ModelParams};

use crate::config::ServiceConfig;
use crate::error::{CliError, CliResult};

/// Upper bound on morph steps per request.
pub const MAX_STEPS: usize = 256;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Meta {
    pub arch: String,
    pub latent_dim: usize,
    pub input_len: usize,
    pub sample_rate: u32,
    pub num_classes: usize,
    pub decode_mode: DecodeMode,
    pub records: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LatentRecord {
    pub source_id: String,
    pub label: usize,
    pub x: f64,
    pub y: f64,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CenterRecord {
    pub label: usize,
    pub x: f64,
    pub y: f64,
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LatentView {
    pub records: Vec<LatentRecord>,
    pub centers: Vec<CenterRecord>,
    pub explained_variance: [f64; 2],
    pub rank_deficient: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecodeBody {
    z: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MorphBody {
    z_start: Vec<f64>,
    z_end: Vec<f64>,
    steps: usize,
    #[serde(default = "default_gap")]
    gap_ms: f64,
}

fn default_gap() -> f64 {
    DEFAULT_GAP_MS
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AudioRef {
    pub id: String,
    pub url: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MorphResponse {
    pub steps: Vec<AudioRef>,
    pub concatenated: AudioRef,
}

pub struct AppState {
    params: ModelParams,
    meta: Meta,
    latent: LatentView,
    cache: Mutex<HashMap<String, Arc<Vec<u8>>>>,
}

impl AppState {
    /// Projects the evaluation clips of `split` once; every later request
    /// reads from the frozen model and this view.
    pub fn new(params: ModelParams, split: &DatasetSplit, mode: DecodeMode) -> CliResult<Self> {
        let clips = split.evaluation_part();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut entries = Vec::with_capacity(clips.len());
        for c in clips {
            entries.push(LatentEntry {
                source_id: c.source_id.clone(),
                label: c.label,
                mu: latent_of(&params, &c.clip, mode, &mut rng)?,
            });
        }
        let latent = LatentDataset::new(entries, params.latent_dim(), split.num_classes)?;
        let projection = export_projection_2d(&latent)?;
        let project = |z: &[f64]| -> (f64, f64) {
            let coord = |k: usize| -> f64 {
                z.iter()
                    .zip(&projection.mean)
                    .zip(&projection.basis[k])
                    .map(|((v, m), b)| (v - m) * b)
                    .sum()
            };
            (coord(0), coord(1))
        };
        let records = projection
            .points
            .iter()
            .zip(latent.entries())
            .map(|(p, e)| LatentRecord {
                source_id: p.source_id.clone(),
                label: p.label,
                x: p.x,
                y: p.y,
                z: e.mu.clone(),
            })
            .collect::<Vec<_>>();
        let mut centers = Vec::new();
        for label in 0..split.num_classes {
            if let Ok(z) = class_center(&latent, label) {
                let (x, y) = project(&z);
                centers.push(CenterRecord { label, x, y, z });
            }
        }
        let meta = Meta {
            arch: params.tag().to_string(),
            latent_dim: params.latent_dim(),
            input_len: params.input_len(),
            sample_rate: params.config().sample_rate,
            num_classes: split.num_classes,
            decode_mode: mode,
            records: records.len(),
        };
        Ok(Self {
            params,
            meta,
            latent: LatentView {
                records,
                centers,
                explained_variance: projection.explained_variance,
                rank_deficient: projection.rank_deficient,
            },
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Stores the WAV under its content hash unless already present.
    fn remember(&self, clip: &AudioClip) -> (String, Arc<Vec<u8>>) {
        let bytes = encode_wav_bytes(clip);
        let digest = Sha256::digest(&bytes);
        let id: String = digest[..16].iter().map(|b| format!("{b:02x}")).collect();
        let mut cache = self.cache.lock().unwrap_or_else(|p| p.into_inner());
        let stored = cache.entry(id.clone()).or_insert_with(|| Arc::new(bytes)).clone();
        (id, stored)
    }

    fn lookup(&self, id: &str) -> Option<Arc<Vec<u8>>> {
        self.cache.lock().unwrap_or_else(|p| p.into_inner()).get(id).cloned()
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<String>,
    message: String,
}

fn error(status: StatusCode, kind: &'static str, field: Option<&str>, message: impl Into<String>) -> Response {
    (
        status,
        Json(ErrorBody {
            error: kind,
            field: field.map(str::to_string),
            message: message.into(),
        }),
    )
        .into_response()
}

/// Parses a JSON body; failures name the offending field.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, Response> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = (path != ".").then_some(path);
        error(
            StatusCode::BAD_REQUEST,
            "malformed_body",
            field.as_deref(),
            e.into_inner().to_string(),
        )
    })
}

fn check_dim(state: &AppState, field: &str, z: &[f64]) -> Result<(), Response> {
    if z.len() != state.meta.latent_dim {
        return Err(error(
            StatusCode::UNPROCESSABLE_ENTITY,
            "shape",
            Some(field),
            format!("{field} has {} entries, the latent space has {}", z.len(), state.meta.latent_dim),
        ));
    }
    Ok(())
}

fn wav_response(id: &str, bytes: &[u8]) -> Response {
    (
        [
            (header::CONTENT_TYPE, "audio/wav".to_string()),
            (header::HeaderName::from_static("x-audio-id"), id.to_string()),
        ],
        bytes.to_vec(),
    )
        .into_response()
}

fn internal(e: impl std::fmt::Display) -> Response {
    error(StatusCode::INTERNAL_SERVER_ERROR, "internal", None, e.to_string())
}

async fn meta(State(state): State<Arc<AppState>>) -> Json<Meta> {
    Json(state.meta.clone())
}

async fn latent(State(state): State<Arc<AppState>>) -> Json<LatentView> {
    Json(state.latent.clone())
}

async fn decode(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: DecodeBody = match parse_body(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    if let Err(resp) = check_dim(&state, "z", &req.z) {
        return resp;
    }
    let worker = state.clone();
    let decoded = tokio::task::spawn_blocking(move || worker.params.decode_one(&req.z)).await;
    match decoded {
        Ok(Ok(clip)) => {
            let (id, bytes) = state.remember(&clip);
            wav_response(&id, &bytes)
        }
        Ok(Err(e)) => error(StatusCode::UNPROCESSABLE_ENTITY, e.kind(), Some("z"), e.to_string()),
        Err(e) => internal(e),
    }
}

async fn morph(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let req: MorphBody = match parse_body(&body) {
        Ok(r) => r,
        Err(resp) => return resp,
    };
    for (field, z) in [("z_start", &req.z_start), ("z_end", &req.z_end)] {
        if let Err(resp) = check_dim(&state, field, z) {
            return resp;
        }
    }
    if !(2..=MAX_STEPS).contains(&req.steps) {
        return error(
            StatusCode::UNPROCESSABLE_ENTITY,
            "invalid_argument",
            Some("steps"),
            format!("steps must be between 2 and {MAX_STEPS}, got {}", req.steps),
        );
    }
    let request = match MorphRequest::new(req.z_start, req.z_end, req.steps, req.gap_ms) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::UNPROCESSABLE_ENTITY, e.kind(), Some("gap_ms"), e.to_string()),
    };
    let worker = state.clone();
    let rendered = tokio::task::spawn_blocking(move || render_morph(&worker.params, &request)).await;
    let result = match rendered {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => return error(StatusCode::UNPROCESSABLE_ENTITY, e.kind(), None, e.to_string()),
        Err(e) => return internal(e),
    };
    let reference = |clip: &AudioClip| {
        let (id, _) = state.remember(clip);
        AudioRef {
            url: format!("/audio/{id}"),
            id,
        }
    };
    Json(MorphResponse {
        steps: result.step_clips.iter().map(reference).collect(),
        concatenated: reference(&result.concatenated),
    })
    .into_response()
}

async fn audio(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Response {
    match state.lookup(&id) {
        Some(bytes) => wav_response(&id, &bytes),
        None => error(StatusCode::NOT_FOUND, "not_found", None, format!("no rendered audio with id `{id}`")),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/meta", get(meta))
        .route("/latent", get(latent))
        .route("/decode", post(decode))
        .route("/morph", post(morph))
        .route("/audio/:id", get(audio))
        .with_state(state)
}

pub fn load_state(cfg: &ServiceConfig) -> CliResult<AppState> {
    let params = load_checkpoint(&cfg.checkpoint)?;
    let split = load_split_from_manifest(&cfg.manifest)?;
    if split.fixed_length != params.input_len() {
        return Err(CliError::Core(soundmorph::Error::Shape(format!(
            "checkpoint expects {} samples, manifest clips have {}",
            params.input_len(),
            split.fixed_length
        ))));
    }
    AppState::new(params, &split, cfg.decode_mode)
}

/// Blocks serving requests until interrupted.
pub fn serve(cfg: ServiceConfig) -> CliResult<()> {
    let state = Arc::new(load_state(&cfg)?);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Server(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&cfg.bind)
            .await
            .map_err(|e| CliError::Server(format!("cannot bind {}: {e}", cfg.bind)))?;
        eprintln!("listening on http://{}", cfg.bind);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::Server(e.to_string()))
    })
}
