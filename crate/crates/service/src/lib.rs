//! HTTP service: parameter tuning previews for single frames and sample
//! classification with a loaded checkpoint.
//!
//! | method | path        | body                          |
//! |--------|-------------|-------------------------------|
//! | POST   | `/tune`     | JSON [`TuneRequest`]          |
//! | POST   | `/classify` | wire-format sample bytes      |
//! | GET    | `/health`   | none                          |
//!
//! `/tune` reports its compute time in the `x-compute-time-ms` header so the
//! JSON body depends only on the request.

use std::io::Cursor;
use std::net::SocketAddr;
use std::sync::{Arc, RwLock};
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{HeaderName, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use image::codecs::png::PngEncoder;
use image::{ImageEncoder, ImageReader};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use tower_http::cors::{Any, CorsLayer};

use livetex_core::checkpoint::Checkpoint;
use livetex_core::eval::classify_sample;
use livetex_core::features::{color_histogram, deserialize_sample, lbp_histogram, HistogramSpec};
use livetex_core::lbp::{apply_riu2, LbpCodeMap, LbpParams};
use livetex_core::pixel::{build_color_stack, decode_frame, ChannelPlane, SpaceSet};
use livetex_core::Error as CoreError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MAX_IMAGE_SIDE: u32 = 4096;
/// Base64 of a 4096x4096 PNG can be large; the body limit only guards memory.
pub const MAX_BODY_BYTES: usize = 256 * 1024 * 1024;
pub const TIMING_HEADER: &str = "x-compute-time-ms";

/// Shared state. The checkpoint is swapped atomically; requests clone the
/// `Arc` and finish on whichever model they started with.
#[derive(Default)]
pub struct AppState {
    model: RwLock<Option<Arc<Checkpoint>>>,
}

impl AppState {
    pub fn new(model: Option<Checkpoint>) -> Self {
        Self {
            model: RwLock::new(model.map(Arc::new)),
        }
    }

    pub fn model(&self) -> Option<Arc<Checkpoint>> {
        self.model.read().expect("model lock poisoned").clone()
    }

    /// Replaces the model, returning the previous one.
    pub fn swap_model(&self, model: Option<Checkpoint>) -> Option<Arc<Checkpoint>> {
        std::mem::replace(&mut *self.model.write().expect("model lock poisoned"), model.map(Arc::new))
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl From<CoreError> for ApiError {
    fn from(e: CoreError) -> Self {
        let status = match &e {
            CoreError::Decode { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            CoreError::DimensionMismatch { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            CoreError::InvalidParam(_) | CoreError::InvalidFrame(_) | CoreError::Wire(_) | CoreError::Empty(_) => {
                StatusCode::BAD_REQUEST
            }
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            warn!("{}", self.message);
        }
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

fn default_points() -> usize {
    32
}

fn default_radius() -> f64 {
    8.0
}

fn default_spaces() -> String {
    SpaceSet::BOTH.to_string()
}

fn default_color_buckets() -> usize {
    50
}

fn default_lbp_buckets() -> usize {
    34
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneRequest {
    /// Base64-encoded PNG or JPEG.
    pub image: String,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_radius")]
    pub radius: f64,
    /// Comma-separated, e.g. `hsv,ycbcr`.
    #[serde(default = "default_spaces")]
    pub spaces: String,
    #[serde(default = "default_color_buckets")]
    pub color_buckets: usize,
    #[serde(default = "default_lbp_buckets")]
    pub lbp_buckets: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelPreview {
    pub name: String,
    /// Base64 grayscale PNG of the channel plane.
    pub image: String,
    /// Base64 grayscale PNG of the riu2 code map; code `k` is drawn at gray
    /// `floor(255 k / (P + 1))`.
    pub lbp_image: String,
    pub color_histogram: Vec<f64>,
    pub lbp_histogram: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResponse {
    pub width: usize,
    pub height: usize,
    pub lbp_width: usize,
    pub lbp_height: usize,
    pub points: usize,
    pub radius: f64,
    pub spaces: String,
    pub color_buckets: usize,
    pub lbp_buckets: usize,
    pub channels: Vec<ChannelPreview>,
}

/// Rounds to 9 significant digits, the precision histograms are published
/// with.
pub fn round_sig9(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.8e}").parse().expect("formatted float parses")
}

/// Gray level of riu2 code `code` in previews.
pub fn code_gray(code: u8, points: usize) -> u8 {
    (255 * code as usize / (points + 1)) as u8
}

fn png_gray(width: usize, height: usize, data: &[u8]) -> String {
    let mut out = Vec::new();
    PngEncoder::new(&mut out)
        .write_image(data, width as u32, height as u32, image::ExtendedColorType::L8)
        .expect("in-memory PNG encoding");
    BASE64.encode(out)
}

fn lbp_preview(codes: &LbpCodeMap) -> String {
    let gray: Vec<u8> = codes.codes().iter().map(|&c| code_gray(c, codes.points())).collect();
    png_gray(codes.width(), codes.height(), &gray)
}

fn channel_preview(plane: &ChannelPlane, spec: &HistogramSpec) -> Result<(ChannelPreview, usize, usize), ApiError> {
    let codes = apply_riu2(plane, &spec.lbp)?;
    let color = color_histogram(plane, spec.color_buckets)?;
    let lbp = lbp_histogram(&codes, spec.lbp_buckets, spec.lbp.points)?;
    Ok((
        ChannelPreview {
            name: plane.label().name().to_string(),
            image: png_gray(plane.width(), plane.height(), plane.values()),
            lbp_image: lbp_preview(&codes),
            color_histogram: color.into_iter().map(round_sig9).collect(),
            lbp_histogram: lbp.into_iter().map(round_sig9).collect(),
        },
        codes.width(),
        codes.height(),
    ))
}

/// The pure part of `/tune`: the same request always yields the same
/// response.
pub fn tune(req: &TuneRequest) -> Result<TuneResponse, ApiError> {
    let spaces: SpaceSet = req
        .spaces
        .parse()
        .map_err(|e: CoreError| ApiError::bad_request(e.to_string()))?;
    let spec = HistogramSpec {
        color_buckets: req.color_buckets,
        lbp_buckets: req.lbp_buckets,
        lbp: LbpParams {
            points: req.points,
            radius: req.radius,
        },
        spaces,
    };
    spec.validate()?;
    let bytes = BASE64
        .decode(req.image.trim())
        .map_err(|e| ApiError::bad_request(format!("image is not valid base64: {e}")))?;

    let reader = ImageReader::new(Cursor::new(&bytes))
        .with_guessed_format()
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, e.to_string()))?;
    let (w, h) = reader
        .into_dimensions()
        .map_err(|e| ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("cannot decode image: {e}")))?;
    if w > MAX_IMAGE_SIDE || h > MAX_IMAGE_SIDE {
        return Err(ApiError::new(
            StatusCode::PAYLOAD_TOO_LARGE,
            format!("image {w}x{h} exceeds {MAX_IMAGE_SIDE}x{MAX_IMAGE_SIDE}"),
        ));
    }
    let frame = decode_frame(&bytes)?;
    let stack = build_color_stack(&frame, spaces)?;
    let mut channels = Vec::with_capacity(stack.len());
    let (mut lbp_width, mut lbp_height) = (0, 0);
    for plane in stack.planes() {
        let (preview, lw, lh) = channel_preview(plane, &spec)?;
        (lbp_width, lbp_height) = (lw, lh);
        channels.push(preview);
    }
    Ok(TuneResponse {
        width: frame.width(),
        height: frame.height(),
        lbp_width,
        lbp_height,
        points: spec.lbp.points,
        radius: spec.lbp.radius,
        spaces: spaces.to_string(),
        color_buckets: spec.color_buckets,
        lbp_buckets: spec.lbp_buckets,
        channels,
    })
}

async fn tune_handler(payload: Result<Json<TuneRequest>, JsonRejection>) -> Result<Response, ApiError> {
    let Json(req) = payload.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let start = Instant::now();
    let result = tokio::task::spawn_blocking(move || tune(&req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    let ms = start.elapsed().as_secs_f64() * 1000.0;
    let mut resp = Json(result).into_response();
    resp.headers_mut().insert(
        HeaderName::from_static(TIMING_HEADER),
        HeaderValue::from_str(&format!("{ms:.3}")).expect("ascii"),
    );
    Ok(resp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    /// `bonafide` or `attack`.
    pub decision: String,
    pub is_bonafide: bool,
    /// Probability of the bona fide class.
    pub score: f64,
}

async fn classify_handler(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<ClassifyResponse>, ApiError> {
    let model = state
        .model()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "no model loaded"))?;
    let sample = deserialize_sample(&body)?;
    let (is_bonafide, score) = tokio::task::spawn_blocking(move || classify_sample(&model, &sample))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| match e {
            CoreError::InvalidParam(m) => ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, m),
            other => other.into(),
        })?;
    Ok(Json(ClassifyResponse {
        decision: if is_bonafide { "bonafide" } else { "attack" }.into(),
        is_bonafide,
        score,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_loaded: bool,
    pub version: String,
}

async fn health_handler(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        model_loaded: state.model().is_some(),
        version: VERSION.into(),
    })
}

pub fn router(state: Arc<AppState>) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods(Any)
        .allow_headers(Any)
        .expose_headers([HeaderName::from_static(TIMING_HEADER)]);
    Router::new()
        .route("/tune", post(tune_handler))
        .route("/classify", post(classify_handler))
        .route("/health", get(health_handler))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(cors)
        .with_state(state)
}

/// Serves until the process is stopped.
pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
