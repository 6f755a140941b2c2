use axum::body::Bytes;
use axum::extract::{FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::Json;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use clickseg_core::formats::{decode_image, decode_mask, encode_cspm, encode_mask_png, image_dimensions};
use clickseg_core::{iou, BinaryMask, CfrConfig, Click, SegmentationSession};
use serde::{Deserialize, Serialize};
use tokio::sync::OwnedMutexGuard;

use crate::error::ApiError;
use crate::store::SessionEntry;
use crate::{AppState, BusyPolicy};

/// JSON form of a session upload. `cfr` is either `"fixed:1"` style text
/// or a `{"mode": ..., "n": ...}` object.
#[derive(Debug, Deserialize)]
pub struct CreateRequest {
    pub image_b64: String,
    #[serde(default)]
    pub gt_b64: Option<String>,
    #[serde(default)]
    pub cfr: Option<CfrSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum CfrSpec {
    Text(String),
    Config(CfrConfig),
}

impl CfrSpec {
    fn resolve(&self) -> Result<CfrConfig, ApiError> {
        match self {
            CfrSpec::Text(s) => Ok(s.parse()?),
            CfrSpec::Config(c) => Ok(*c),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateResponse {
    pub session_id: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub foreground_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskResponse {
    /// Binarized mask as a base64 PNG.
    pub mask: String,
    pub prob_stats: ProbStats,
    pub step: usize,
    pub clicks: usize,
    pub inner_steps: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub iou: Option<f64>,
    /// Raw probability map in CSPM format, base64, only with `?full=1`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub prob_map_cspm: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateResponse {
    pub session_id: String,
    pub width: usize,
    pub height: usize,
    pub cfr: CfrConfig,
    pub click_list: Vec<Click>,
    #[serde(flatten)]
    pub mask: MaskResponse,
}

#[derive(Debug, Default, Deserialize)]
pub struct FullQuery {
    #[serde(default)]
    full: Option<String>,
}

impl FullQuery {
    fn wanted(&self) -> bool {
        matches!(self.full.as_deref(), Some("1" | "true"))
    }
}

struct Upload {
    image: Vec<u8>,
    gt: Option<Vec<u8>>,
    cfr: Option<CfrSpec>,
}

fn decode_b64(field: &str, text: &str) -> Result<Vec<u8>, ApiError> {
    B64.decode(text.trim())
        .map_err(|e| ApiError::bad_request(format!("{field}: invalid base64: {e}")))
}

async fn read_upload(state: &AppState, req: Request) -> Result<Upload, ApiError> {
    let is_multipart = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    if is_multipart {
        let mut form = Multipart::from_request(req, state)
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        let mut upload = Upload {
            image: Vec::new(),
            gt: None,
            cfr: None,
        };
        while let Some(field) = form
            .next_field()
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?
        {
            let name = field.name().unwrap_or_default().to_string();
            let data = field.bytes().await.map_err(|e| ApiError::bad_request(e.body_text()))?;
            match name.as_str() {
                "image" => upload.image = data.to_vec(),
                "gt" => upload.gt = Some(data.to_vec()),
                "cfr" => upload.cfr = Some(CfrSpec::Text(String::from_utf8_lossy(&data).into_owned())),
                _ => {}
            }
        }
        if upload.image.is_empty() {
            return Err(ApiError::bad_request("multipart upload has no image field"));
        }
        Ok(upload)
    } else {
        let body = Bytes::from_request(req, state)
            .await
            .map_err(|e| ApiError::new(e.status(), e.body_text()))?;
        let parsed: CreateRequest =
            serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("request body: {e}")))?;
        Ok(Upload {
            image: decode_b64("image_b64", &parsed.image_b64)?,
            gt: parsed.gt_b64.as_deref().map(|g| decode_b64("gt_b64", g)).transpose()?,
            cfr: parsed.cfr,
        })
    }
}

pub async fn create_session(State(state): State<AppState>, req: Request) -> Result<impl IntoResponse, ApiError> {
    let upload = read_upload(&state, req).await?;
    let cfr = match &upload.cfr {
        Some(spec) => spec.resolve()?,
        None => state.config.default_cfr,
    };
    let max = state.config.max_dimension;
    let radius = state.config.radius;
    let worker = state.clone();
    let entry = tokio::task::spawn_blocking(move || -> Result<SessionEntry, ApiError> {
        let (w, h) =
            image_dimensions(&upload.image).map_err(|e| ApiError::bad_request(format!("undecodable image: {e}")))?;
        if w > max || h > max {
            return Err(ApiError::new(
                StatusCode::PAYLOAD_TOO_LARGE,
                format!("image is {w}x{h}, the limit is {max}x{max}"),
            ));
        }
        let image =
            decode_image(&upload.image).map_err(|e| ApiError::bad_request(format!("undecodable image: {e}")))?;
        let gt = match upload.gt {
            Some(bytes) => {
                let gt = decode_mask(&bytes).map_err(|e| ApiError::bad_request(format!("undecodable gt: {e}")))?;
                if gt.dims() != image.dims() {
                    return Err(ApiError::bad_request(format!(
                        "gt is {:?}, image is {:?}",
                        gt.dims(),
                        image.dims()
                    )));
                }
                Some(gt)
            }
            None => None,
        };
        let segmenter = worker
            .factory
            .create()
            .map_err(|e| ApiError::internal(format!("cannot start segmenter: {e}")))?;
        Ok(SessionEntry {
            session: SegmentationSession::with_radius(image, radius),
            segmenter,
            cfr,
            gt,
        })
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;

    let (width, height) = entry.session.image().dims();
    let session_id = state.store.insert(entry);
    tracing::info!(%session_id, width, height, cfr = %cfr, "session created");
    Ok((
        StatusCode::CREATED,
        Json(CreateResponse {
            session_id,
            width,
            height,
        }),
    ))
}

async fn lock(state: &AppState, id: &str) -> Result<OwnedMutexGuard<SessionEntry>, ApiError> {
    let entry = state.store.get(id).ok_or_else(|| ApiError::not_found(id))?;
    match state.config.busy {
        BusyPolicy::Wait => Ok(entry.lock_owned().await),
        BusyPolicy::Reject => entry.try_lock_owned().map_err(|_| ApiError::busy()),
    }
}

fn mask_response(entry: &SessionEntry, inner_steps: usize, full: bool) -> Result<MaskResponse, ApiError> {
    let probs = entry.session.current_mask();
    let binary = entry.session.binary_mask();
    let values = probs.values();
    let prob_stats = ProbStats {
        min: values.iter().copied().fold(f64::INFINITY, f64::min),
        max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mean: values.iter().sum::<f64>() / values.len() as f64,
        foreground_pixels: binary.count(),
    };
    let iou = entry.gt.as_ref().map(|gt: &BinaryMask| iou(&binary, gt)).transpose()?;
    Ok(MaskResponse {
        mask: B64.encode(encode_mask_png(&binary)?),
        prob_stats,
        step: entry.session.step(),
        clicks: entry.session.clicks().len(),
        inner_steps,
        iou,
        prob_map_cspm: if full {
            Some(B64.encode(encode_cspm(probs)?))
        } else {
            None
        },
    })
}

/// Runs `op` on the locked session off the async runtime.
async fn compute<F>(state: &AppState, id: &str, full: bool, op: F) -> Result<Json<MaskResponse>, ApiError>
where
    F: FnOnce(&mut SessionEntry) -> Result<usize, ApiError> + Send + 'static,
{
    let mut guard = lock(state, id).await?;
    tokio::task::spawn_blocking(move || {
        let steps = op(&mut guard)?;
        mask_response(&guard, steps, full).map(Json)
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))?
}

pub async fn add_click(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<FullQuery>,
    Json(click): Json<Click>,
) -> Result<Json<MaskResponse>, ApiError> {
    compute(&state, &id, q.wanted(), move |e| {
        let (w, h) = e.session.image().dims();
        click.check_bounds(w, h)?;
        let SessionEntry {
            session,
            segmenter,
            cfr,
            ..
        } = e;
        Ok(session.interact(segmenter.as_mut(), click, cfr)?)
    })
    .await
}

pub async fn refine(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<FullQuery>,
    Json(spec): Json<CfrSpec>,
) -> Result<Json<MaskResponse>, ApiError> {
    let cfg = spec.resolve()?;
    compute(&state, &id, q.wanted(), move |e| {
        if e.session.clicks().is_empty() {
            return Err(ApiError::new(StatusCode::CONFLICT, "refine needs at least one click"));
        }
        Ok(e.session.refine(e.segmenter.as_mut(), &cfg)?)
    })
    .await
}

pub async fn undo(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<FullQuery>,
) -> Result<Json<MaskResponse>, ApiError> {
    compute(&state, &id, q.wanted(), move |e| {
        let SessionEntry {
            session,
            segmenter,
            cfr,
            ..
        } = e;
        session.undo(segmenter.as_mut(), cfr)?;
        Ok(0)
    })
    .await
}

pub async fn get_state(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<FullQuery>,
) -> Result<Json<StateResponse>, ApiError> {
    let guard = lock(&state, &id).await?;
    let (width, height) = guard.session.image().dims();
    Ok(Json(StateResponse {
        session_id: id,
        width,
        height,
        cfr: guard.cfr,
        click_list: guard.session.clicks().as_slice().to_vec(),
        mask: mask_response(&guard, 0, q.wanted())?,
    }))
}

pub async fn delete_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    if state.store.remove(&id) {
        tracing::info!(session_id = %id, "session deleted");
        Ok(StatusCode::NO_CONTENT)
    } else {
        Err(ApiError::not_found(&id))
    }
}
