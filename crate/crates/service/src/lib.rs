//! JSON over HTTP for a frozen [`ModelBundle`].
//!
//! | route | body | answer |
//! |---|---|---|
//! | `POST /encode` | `{svg, label}` | `{z, sigma2_mean}` |
//! | `POST /propagate` | `{z` or `glyphs, targets, n?, seed?}` | `{svgs, confidence, z, seed, viewbox}` |
//! | `POST /analogy` | `{z, concept, alphas, label, n?, seed?}` | `{svgs, seed, viewbox}` |
//! | `POST /interpolate` | `{z_a, z_b, steps, label, n?, seed?}` | `{svgs, seed, viewbox}` |
//! | `GET /concepts` | | `{concepts}` |
//! | `GET /health` | | `{status: "ok"}` |
//!
//! Errors are `{error, message}` with `error` a machine-readable kind.
//! Glyphs go in as SVG path data in font units and come out as absolute
//! path data in model coordinates; `viewbox` frames them.
//!
//! Every sampled glyph uses its own ChaCha stream keyed by `(seed, label)`,
//! so the same seed decodes a character identically whichever endpoint or
//! target list produced it. Without a `seed` the server picks one and
//! returns it.

pub mod bundle;

use std::sync::Arc;
use std::time::Duration;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};

use svgfont::labels::label_of_str;
use svgfont::latent::{self, confidence, LatentError, DEFAULT_SAMPLES};
use svgfont::raster::{orient_for_nonzero, render};
use svgfont::svg_path::{serialize_path, Glyph};

pub use bundle::{BundleError, ModelBundle};

/// Upper bound on samples per glyph a client may ask for.
pub const MAX_SAMPLES: usize = 100;
/// Upper bound on interpolation steps and analogy alphas.
pub const MAX_SWEEP: usize = 64;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Requests running longer than this get a 503.
    pub timeout: Duration,
    /// Allowed browser origin; `None` allows any.
    pub cors_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            timeout: Duration::from_secs(30),
            cors_origin: None,
        }
    }
}

#[derive(Clone)]
struct AppState {
    bundle: Arc<ModelBundle>,
    timeout: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: StatusCode,
    pub error: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, error: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError {
            status,
            error: error.into(),
            message: message.into(),
        }
    }

    fn bad(error: impl Into<String>, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, error, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(&self)).into_response()
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::bad("BadJson", r.body_text())
    }
}

impl From<LatentError> for ApiError {
    fn from(e: LatentError) -> Self {
        match e {
            LatentError::DimMismatch(..) | LatentError::NonFinite | LatentError::BadSteps(_) => {
                ApiError::bad(variant_name(&e), e.to_string())
            }
            e => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "GenerationFailed", e.to_string()),
        }
    }
}

/// `UnsupportedCommand('A')` → `UnsupportedCommand`.
fn variant_name(e: &impl std::fmt::Debug) -> String {
    format!("{e:?}").chars().take_while(|c| c.is_alphanumeric()).collect()
}

type ApiResult<T> = Result<Json<T>, ApiError>;

/// Runs model work off the async runtime, bounded by the timeout. A timed
/// out computation is abandoned, not interrupted.
async fn compute<T, F>(state: &AppState, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&ModelBundle) -> Result<T, ApiError> + Send + 'static,
{
    let bundle = state.bundle.clone();
    let task = tokio::task::spawn_blocking(move || f(&bundle));
    match tokio::time::timeout(state.timeout, task).await {
        Err(_) => Err(ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "Timeout",
            format!("no answer within {:?}", state.timeout),
        )),
        Ok(Err(join)) => Err(ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "Internal",
            join.to_string(),
        )),
        Ok(Ok(r)) => r.map(Json),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlyphIn {
    pub svg: String,
    pub label: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodeResponse {
    pub z: Vec<f64>,
    pub sigma2_mean: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PropagateRequest {
    pub z: Option<Vec<f64>>,
    pub glyphs: Option<Vec<GlyphIn>>,
    pub targets: Vec<String>,
    pub n: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PropagateResponse {
    pub svgs: Vec<String>,
    /// Mean posterior variance of each generated glyph re-encoded.
    pub confidence: Vec<f64>,
    /// The style code that was decoded.
    pub z: Vec<f64>,
    pub seed: u64,
    /// `[min_x, min_y, size]` of the model coordinate frame.
    pub viewbox: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalogyRequest {
    pub z: Vec<f64>,
    pub concept: String,
    pub alphas: Vec<f64>,
    pub label: String,
    pub n: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterpolateRequest {
    pub z_a: Vec<f64>,
    pub z_b: Vec<f64>,
    pub steps: usize,
    pub label: String,
    pub n: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResponse {
    pub svgs: Vec<String>,
    pub seed: u64,
    pub viewbox: [f64; 3],
}

fn label(s: &str) -> Result<usize, ApiError> {
    label_of_str(s).ok_or_else(|| {
        ApiError::new(
            StatusCode::UNPROCESSABLE_ENTITY,
            "UnknownLabel",
            format!("label {s:?} not in 62-class set"),
        )
    })
}

/// Parses and normalizes a client glyph into model coordinates.
fn intake(bundle: &ModelBundle, g: &GlyphIn) -> Result<Glyph, ApiError> {
    let label = label(&g.label)?;
    let glyph = Glyph::from_path(label, &g.svg).map_err(|e| ApiError::bad(variant_name(&e.kind), e.to_string()))?;
    bundle
        .meta
        .prepare(&glyph)
        .map_err(|e| ApiError::bad(variant_name(&e), e.to_string()))
}

fn check_z(bundle: &ModelBundle, z: &[f64]) -> Result<(), ApiError> {
    if z.len() != bundle.z_dim() {
        return Err(ApiError::bad(
            "DimMismatch",
            format!("z has {} entries, the model uses {}", z.len(), bundle.z_dim()),
        ));
    }
    if !z.iter().all(|v| v.is_finite()) {
        return Err(ApiError::bad("NonFinite", "z contains non-finite values"));
    }
    Ok(())
}

fn samples(n: Option<usize>) -> Result<usize, ApiError> {
    let n = n.unwrap_or(DEFAULT_SAMPLES);
    if n == 0 || n > MAX_SAMPLES {
        return Err(ApiError::bad(
            "BadSampleCount",
            format!("n must be in 1..={MAX_SAMPLES}, got {n}"),
        ));
    }
    Ok(n)
}

fn seed_or_random(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

/// Best-of-`n` decode of one character on its own `(seed, label)` stream.
pub fn decode_one(bundle: &ModelBundle, z: &[f64], label: usize, n: usize, seed: u64) -> Result<Glyph, LatentError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label as u64);
    Ok(latent::propagate(&bundle.models, z, &[label], n, &mut rng)?.remove(0))
}

/// Absolute path data in model coordinates, every contour starting with a
/// moveto and wound so a browser's nonzero fill matches the rasterizer.
pub fn to_svg(glyph: &Glyph) -> String {
    serialize_path(&orient_for_nonzero(glyph))
}

fn viewbox(bundle: &ModelBundle) -> [f64; 3] {
    let v = bundle.meta.viewbox;
    [v.min_x, v.min_y, v.size]
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn concepts(State(state): State<AppState>) -> Json<serde_json::Value> {
    let names: Vec<&String> = state.bundle.concepts.keys().collect();
    Json(serde_json::json!({ "concepts": names }))
}

async fn encode(
    State(state): State<AppState>,
    body: Result<Json<GlyphIn>, JsonRejection>,
) -> ApiResult<EncodeResponse> {
    let Json(req) = body?;
    compute(&state, move |b| {
        let glyph = intake(b, &req)?;
        let raster = render(&glyph, &b.meta.viewbox).map_err(|e| ApiError::bad("NonFinite", e.to_string()))?;
        let latent = b
            .models
            .vae
            .encode(raster.as_slice(), glyph.label)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", e.to_string()))?;
        Ok(EncodeResponse {
            sigma2_mean: confidence(&latent),
            z: latent.mu,
        })
    })
    .await
}

async fn propagate(
    State(state): State<AppState>,
    body: Result<Json<PropagateRequest>, JsonRejection>,
) -> ApiResult<PropagateResponse> {
    let Json(req) = body?;
    compute(&state, move |b| {
        let z = match (req.z, req.glyphs) {
            (Some(z), None) => {
                check_z(b, &z)?;
                z
            }
            (None, Some(glyphs)) => {
                let glyphs = glyphs.iter().map(|g| intake(b, g)).collect::<Result<Vec<_>, _>>()?;
                if glyphs.is_empty() {
                    return Err(ApiError::bad("EmptyInput", "glyphs is empty"));
                }
                latent::style_z(&b.models.vae, &b.meta.viewbox, &glyphs)?
            }
            _ => return Err(ApiError::bad("ZXorGlyphs", "give exactly one of z and glyphs")),
        };
        let targets = req.targets.iter().map(|t| label(t)).collect::<Result<Vec<_>, _>>()?;
        let n = samples(req.n)?;
        let seed = seed_or_random(req.seed);
        let mut svgs = Vec::with_capacity(targets.len());
        let mut conf = Vec::with_capacity(targets.len());
        for &t in &targets {
            let g = decode_one(b, &z, t, n, seed)?;
            let raster = render(&g, &b.meta.viewbox).map_err(LatentError::from)?;
            let latent = b.models.vae.encode(raster.as_slice(), t).map_err(LatentError::from)?;
            conf.push(confidence(&latent));
            svgs.push(to_svg(&g));
        }
        Ok(PropagateResponse {
            svgs,
            confidence: conf,
            z,
            seed,
            viewbox: viewbox(b),
        })
    })
    .await
}

fn sweep(b: &ModelBundle, zs: Vec<Vec<f64>>, label: usize, n: usize, seed: u64) -> Result<SweepResponse, ApiError> {
    let svgs = zs
        .iter()
        .map(|z| decode_one(b, z, label, n, seed).map(|g| to_svg(&g)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SweepResponse {
        svgs,
        seed,
        viewbox: viewbox(b),
    })
}

async fn analogy(
    State(state): State<AppState>,
    body: Result<Json<AnalogyRequest>, JsonRejection>,
) -> ApiResult<SweepResponse> {
    let Json(req) = body?;
    compute(&state, move |b| {
        let c = b.concepts.get(&req.concept).ok_or_else(|| {
            ApiError::new(
                StatusCode::NOT_FOUND,
                "UnknownConcept",
                format!("no concept named {:?}", req.concept),
            )
        })?;
        check_z(b, &req.z)?;
        let label = label(&req.label)?;
        if req.alphas.len() > MAX_SWEEP {
            return Err(ApiError::bad("TooManyAlphas", format!("at most {MAX_SWEEP} alphas")));
        }
        let zs = latent::apply_concept(&req.z, c, &req.alphas)?;
        sweep(b, zs, label, samples(req.n)?, seed_or_random(req.seed))
    })
    .await
}

async fn interpolate(
    State(state): State<AppState>,
    body: Result<Json<InterpolateRequest>, JsonRejection>,
) -> ApiResult<SweepResponse> {
    let Json(req) = body?;
    compute(&state, move |b| {
        check_z(b, &req.z_a)?;
        check_z(b, &req.z_b)?;
        let label = label(&req.label)?;
        if req.steps > MAX_SWEEP {
            return Err(ApiError::bad("BadSteps", format!("at most {MAX_SWEEP} steps")));
        }
        let zs = latent::interpolate(&req.z_a, &req.z_b, req.steps)?;
        sweep(b, zs, label, samples(req.n)?, seed_or_random(req.seed))
    })
    .await
}

pub fn router(bundle: Arc<ModelBundle>, config: &ServiceConfig) -> Router {
    let origin = match &config.cors_origin {
        Some(o) => AllowOrigin::exact(HeaderValue::from_str(o).unwrap_or(HeaderValue::from_static("null"))),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/health", get(health))
        .route("/concepts", get(concepts))
        .route("/encode", post(encode))
        .route("/propagate", post(propagate))
        .route("/analogy", post(analogy))
        .route("/interpolate", post(interpolate))
        .layer(cors)
        .with_state(AppState {
            bundle,
            timeout: config.timeout,
        })
}

/// Serves until Ctrl-C.
pub async fn serve(bundle: ModelBundle, config: ServiceConfig, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let app = router(Arc::new(bundle), &config);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
