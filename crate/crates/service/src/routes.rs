use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use histosynth::eval::{Answer, BlindItem, SessionCounts, SessionReport, VisualTestSession};
use histosynth::store::generate_samples;
use histosynth::store::io::{gray_png_bytes, rgb_png_bytes};
use histosynth::synth::{RealPatch, SynthesisParams};
use histosynth::{Error, FieldError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{parse_json, ApiError, ApiResult};
use crate::state::{AppState, LoadedModel, Preset};

pub type Shared = Arc<AppState>;

pub const MAX_GRID: usize = 8;
/// Salt for the stream that picks a refinement reference for a preview cell.
const REFERENCE_SALT: u64 = 0x7265_6665_7265_6e63;

fn busy() -> ApiError {
    ApiError::new(
        StatusCode::TOO_MANY_REQUESTS,
        "all workers busy, retry later",
    )
}

#[derive(Serialize)]
pub struct Health {
    pub status: &'static str,
    pub styles: Vec<String>,
    pub real_patches: usize,
    pub gallery_patches: usize,
    pub refiner_loaded: bool,
}

pub async fn healthz(State(st): State<Shared>) -> Json<Health> {
    Json(Health {
        status: "ok",
        styles: st.styles(),
        real_patches: st.real().len(),
        gallery_patches: st.gallery().len(),
        refiner_loaded: st.model().is_some(),
    })
}

fn default_grid() -> usize {
    3
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreviewRequest {
    #[serde(default)]
    pub params: SynthesisParams,
    /// Side of the grid; `grid²` patches are returned.
    #[serde(default = "default_grid")]
    pub grid: usize,
    pub seed: Option<u64>,
    pub style_id: Option<String>,
    #[serde(default)]
    pub refined: bool,
}

#[derive(Debug, Serialize)]
pub struct PreviewItem {
    pub index: usize,
    pub seed: u64,
    pub style_id: String,
    pub nuclei: usize,
    /// Base64 PNG; the refined image when refinement was requested.
    pub image: String,
    /// Base64 PNG, 0/255.
    pub mask: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<String>,
}

#[derive(Debug, Serialize)]
pub struct PreviewResponse {
    pub seed: u64,
    pub grid: usize,
    pub refined: bool,
    pub items: Vec<PreviewItem>,
}

fn prefixed(prefix: &str, fields: Vec<FieldError>) -> Vec<FieldError> {
    fields
        .into_iter()
        .map(|f| FieldError::new(format!("{prefix}.{}", f.field), f.message))
        .collect()
}

fn validate_preview(req: &PreviewRequest, real: &[RealPatch]) -> Vec<FieldError> {
    let mut errors = match req.params.validate() {
        Err(Error::Params(fields)) => prefixed("params", fields),
        Err(e) => vec![FieldError::new("params", e.to_string())],
        Ok(()) => Vec::new(),
    };
    if !(1..=MAX_GRID).contains(&req.grid) {
        errors.push(FieldError::new(
            "grid",
            format!("must be between 1 and {MAX_GRID}"),
        ));
    }
    let pool: Vec<&RealPatch> = real
        .iter()
        .filter(|p| req.style_id.as_ref().is_none_or(|s| &p.style_id == s))
        .collect();
    if let Some(style) = &req.style_id {
        if pool.len() < 2 {
            errors.push(FieldError::new(
                "style_id",
                format!("no style group {style} with at least two patches"),
            ));
        }
    }
    if let Some(smallest) = pool
        .iter()
        .map(|p| p.image.height().min(p.image.width()))
        .min()
    {
        if req.params.patch_size > smallest {
            errors.push(FieldError::new(
                "params.patch_size",
                format!("larger than the smallest source patch ({smallest} px)"),
            ));
        }
    }
    errors
}

fn b64_png_rgb(img: &histosynth::imageops::RgbImage) -> histosynth::Result<String> {
    Ok(B64.encode(rgb_png_bytes(img)?))
}

/// A same-style source crop to condition refinement on, chosen from the cell seed.
fn reference_for(
    real: &[RealPatch],
    style: &str,
    size: usize,
    seed: u64,
) -> histosynth::Result<histosynth::imageops::RgbImage> {
    let pool: Vec<&RealPatch> = real.iter().filter(|p| p.style_id == style).collect();
    if pool.is_empty() {
        return Err(Error::GroupTooSmall(style.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ REFERENCE_SALT);
    let src = &pool[rng.random_range(0..pool.len())].image;
    let (h, w) = src.shape();
    let (y, x) = (
        rng.random_range(0..=h - size),
        rng.random_range(0..=w - size),
    );
    src.crop(y, x, size, size)
}

fn run_preview(
    real: &[RealPatch],
    req: &PreviewRequest,
    seed: u64,
    model: Option<&LoadedModel>,
) -> histosynth::Result<Vec<PreviewItem>> {
    let n = req.grid * req.grid;
    let samples = generate_samples(real, &req.params, n, seed, req.style_id.as_deref())?;
    samples
        .into_iter()
        .enumerate()
        .map(|(index, s)| {
            let cell_seed = s.params_used.rng_seed;
            let (image, initial) = match model {
                Some(m) => {
                    let reference =
                        reference_for(real, &s.style_id, req.params.patch_size, cell_seed)?;
                    let refined = m.refiner.refine(&s.image, &reference)?;
                    (b64_png_rgb(&refined)?, Some(b64_png_rgb(&s.image)?))
                }
                None => (b64_png_rgb(&s.image)?, None),
            };
            Ok(PreviewItem {
                index,
                seed: cell_seed,
                style_id: s.style_id.clone(),
                nuclei: s.provenance.polygons_placed,
                image,
                mask: B64.encode(gray_png_bytes(&s.gt_mask.to_raster())?),
                initial,
            })
        })
        .collect()
}

pub async fn preview(State(st): State<Shared>, body: Bytes) -> ApiResult<Json<PreviewResponse>> {
    let req: PreviewRequest = parse_json(&body)?;
    let real = st.real();
    let errors = validate_preview(&req, &real);
    if !errors.is_empty() {
        return Err(ApiError::fields(errors));
    }
    let model = if req.refined {
        Some(
            st.model()
                .ok_or_else(|| ApiError::conflict("refined preview needs a loaded checkpoint"))?,
        )
    } else {
        None
    };
    // keep seeds inside the range a JSON client can hold exactly
    let seed = req
        .seed
        .unwrap_or_else(|| rand::rng().random::<u32>() as u64);
    let reservation = st.pool().try_reserve().ok_or_else(busy)?;
    let (grid, refined) = (req.grid, req.refined);
    let items = reservation
        .run(move || run_preview(&real, &req, seed, model.as_deref()))
        .await?;
    Ok(Json(PreviewResponse {
        seed,
        grid,
        refined,
        items,
    }))
}

pub async fn list_presets(State(st): State<Shared>) -> Json<Vec<Preset>> {
    Json(st.presets())
}

pub async fn get_preset(
    State(st): State<Shared>,
    Path(name): Path<String>,
) -> ApiResult<Json<Preset>> {
    st.preset(&name)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("no preset named {name}")))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetBody {
    pub params: SynthesisParams,
    #[serde(default)]
    pub checkpoint: Option<String>,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= 64
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
}

pub async fn put_preset(
    State(st): State<Shared>,
    Path(name): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Preset>> {
    let body: PresetBody = parse_json(&body)?;
    let mut errors = Vec::new();
    if !valid_name(&name) {
        errors.push(FieldError::new(
            "name",
            "1-64 characters from A-Z a-z 0-9 - _ .",
        ));
    }
    match body.params.validate() {
        Err(Error::Params(fields)) => errors.extend(prefixed("params", fields)),
        Err(e) => errors.push(FieldError::new("params", e.to_string())),
        Ok(()) => {}
    }
    if !errors.is_empty() {
        return Err(ApiError::fields(errors));
    }
    Ok(Json(st.put_preset(&name, body.params, body.checkpoint)?))
}

#[derive(Debug, Serialize)]
pub struct CheckpointStatus {
    pub loaded: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage: Option<String>,
}

fn checkpoint_status(m: Option<&LoadedModel>) -> CheckpointStatus {
    CheckpointStatus {
        loaded: m.is_some(),
        source: m.map(|m| m.source.clone()),
        stage: m.map(|m| m.stage.clone()),
    }
}

pub async fn get_checkpoint(State(st): State<Shared>) -> Json<CheckpointStatus> {
    Json(checkpoint_status(st.model().as_deref()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointBody {
    pub path: PathBuf,
}

pub async fn load_checkpoint(
    State(st): State<Shared>,
    body: Bytes,
) -> ApiResult<Json<CheckpointStatus>> {
    let body: CheckpointBody = parse_json(&body)?;
    if !body.path.is_file() {
        return Err(ApiError::field(
            "path",
            format!("{} is not a file", body.path.display()),
        ));
    }
    let reservation = st.pool().try_reserve().ok_or_else(busy)?;
    let state = st.clone();
    let model = reservation
        .run(move || state.load_checkpoint(&body.path))
        .await?;
    Ok(Json(checkpoint_status(Some(&model))))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    #[serde(default)]
    pub counts: Option<SessionCounts>,
    pub seed: Option<u64>,
}

/// Everything a rater's client is told about a session position.
#[derive(Debug, Serialize)]
pub struct SessionView {
    pub session_id: String,
    pub complete: bool,
    pub answered: usize,
    pub total: usize,
    pub item: Option<BlindItem>,
}

fn view(s: &VisualTestSession) -> SessionView {
    SessionView {
        session_id: s.id.clone(),
        complete: s.is_complete(),
        answered: s.items.iter().filter(|i| i.answer.is_some()).count(),
        total: s.len(),
        item: s.current(),
    }
}

pub async fn create_session(
    State(st): State<Shared>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<SessionView>)> {
    let req: CreateSession = parse_json(&body)?;
    let counts = req.counts.unwrap_or_default();
    if counts.total() == 0 {
        return Err(ApiError::field("counts", "at least one item is needed"));
    }
    let seed = req
        .seed
        .unwrap_or_else(|| rand::rng().random::<u32>() as u64);
    let id = st.next_session_id(seed);
    let session = VisualTestSession::create(id, counts, &st.gallery_refs(), seed)?;
    let v = view(&session);
    st.insert_session(session)?;
    Ok((StatusCode::CREATED, Json(v)))
}

pub async fn session_next(
    State(st): State<Shared>,
    Path(id): Path<String>,
) -> ApiResult<Json<SessionView>> {
    st.with_session(&id, |s| Ok(view(s))).map(Json)
}

pub async fn session_image(
    State(st): State<Shared>,
    Path((id, item_id)): Path<(String, u32)>,
) -> ApiResult<Response> {
    let patch_id = st.with_session(&id, |s| Ok(s.item(item_id)?.patch_id.clone()))?;
    let patch = st.gallery_patch(&patch_id).cloned().ok_or_else(|| {
        ApiError::internal("session refers to a patch that is no longer available")
    })?;
    let side = st.display_size();
    let reservation = st.pool().try_reserve().ok_or_else(busy)?;
    let png = reservation
        .run(move || rgb_png_bytes(&patch.load()?.center_square(side)?))
        .await?;
    Ok((
        [
            (header::CONTENT_TYPE, "image/png"),
            (header::CACHE_CONTROL, "no-store"),
        ],
        png,
    )
        .into_response())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerBody {
    pub item_id: u32,
    pub answer: Answer,
    /// Seconds between showing the image and the answer.
    pub elapsed_seconds: f64,
}

pub async fn session_answer(
    State(st): State<Shared>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<SessionView>> {
    let body: AnswerBody = parse_json(&body)?;
    st.with_session(&id, |s| {
        if s.is_complete() {
            return Err(ApiError::conflict("session already complete"));
        }
        s.answer(body.item_id, body.answer, body.elapsed_seconds)?;
        Ok(view(s))
    })
    .map(Json)
}

pub async fn session_report(
    State(st): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Response> {
    let report: SessionReport = st.with_session(&id, |s| Ok(s.report()))?;
    Ok(match q.get("format").map(String::as_str) {
        None | Some("json") => Json(report).into_response(),
        Some("csv") => ([(header::CONTENT_TYPE, "text/csv")], report.to_csv()?).into_response(),
        Some("table") => (
            [(header::CONTENT_TYPE, "text/plain; charset=utf-8")],
            report.to_table(),
        )
            .into_response(),
        Some(other) => {
            return Err(ApiError::field(
                "format",
                format!("unknown format {other}; use json, csv or table"),
            ))
        }
    })
}
