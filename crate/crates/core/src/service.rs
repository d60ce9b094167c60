//! Stateless JSON-over-HTTP facade over the geometry module, used by the
//! browser calibration tool.
//!
//! | method | path              | body                 |
//! |--------|-------------------|----------------------|
//! | POST   | `/api/solve`      | [`SolveRequest`]     |
//! | POST   | `/api/homography` | [`HomographyRequest`] |
//! | GET    | `/api/health`     |                      |
//!
//! Errors are `{code, message, detail?}` with status 400 for unreadable
//! bodies, 422 for inputs the solver rejects, and 404 for unknown `/api`
//! paths. Anything outside `/api` is served from the UI directory.

use std::net::SocketAddr;
use std::path::PathBuf;

use axum::body::Bytes;
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;

use crate::geometry::io::WorldCoord;
use crate::geometry::{
    estimate_homography, reprojection_report, solve_pnp, CameraIntrinsics, GeoReference, GeometryError,
    LandmarkCorrespondence, SolveOptions,
};

pub const CALIB_SCHEMA: &str = "roadforge-calib/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveRequest {
    #[serde(default)]
    pub schema: Option<String>,
    pub intrinsics: CameraIntrinsics,
    #[serde(default)]
    pub reference: Option<GeoReference>,
    pub correspondences: Vec<RequestCorrespondence>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestCorrespondence {
    #[serde(default)]
    pub name: String,
    pub pixel: [f64; 2],
    pub world: WorldCoord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseBody {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResponse {
    pub schema: String,
    pub pose: PoseBody,
    /// Aligned with the request's correspondences; `null` when a landmark
    /// lands behind the solved camera.
    pub per_landmark_error: Vec<Option<f64>>,
    pub rms_error: f64,
    pub iterations: usize,
    pub planar: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomographyRequest {
    #[serde(default)]
    pub schema: Option<String>,
    pub pairs: Vec<HomographyPair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomographyPair {
    pub pixel: [f64; 2],
    pub ground: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomographyResponse {
    pub schema: String,
    /// Row-major, Frobenius norm 1.
    pub matrix: [[f64; 3]; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

/// A failed request: status plus error body.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, body: ErrorBody { code: code.into(), message: message.into(), detail: None } }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }
}

impl From<GeometryError> for ApiError {
    fn from(e: GeometryError) -> Self {
        let status = StatusCode::UNPROCESSABLE_ENTITY;
        match &e {
            GeometryError::DegenerateConfiguration(_) => Self::new(status, "degenerate", e.to_string()),
            GeometryError::NoConvergence { iterations, rms } => {
                let mut err = Self::new(status, "no_convergence", e.to_string());
                err.body.detail = Some(serde_json::json!({ "iterations": iterations, "rms_error": rms }));
                err
            }
            _ => Self::new(status, "invalid_input", e.to_string()),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn check_schema(schema: &Option<String>) -> Result<(), ApiError> {
    match schema {
        Some(s) if s != CALIB_SCHEMA => Err(ApiError::bad_request(format!("unsupported schema {s:?}"))),
        _ => Ok(()),
    }
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(e.to_string()))
}

/// The solve endpoint as a plain function.
pub fn handle_solve(req: &SolveRequest) -> Result<SolveResponse, ApiError> {
    check_schema(&req.schema)?;
    let k = &req.intrinsics;
    k.validate()?;
    let mut corrs = Vec::with_capacity(req.correspondences.len());
    for (i, c) in req.correspondences.iter().enumerate() {
        let world = c.world.resolve(req.reference.as_ref())?;
        let pixel = Vector2::from(c.pixel);
        if !k.contains(&pixel) {
            let mut err = ApiError::from(GeometryError::InvalidInput(format!("correspondence {i} pixel outside the image")));
            err.body.detail = Some(serde_json::json!({ "index": i }));
            return Err(err);
        }
        let name = if c.name.is_empty() { format!("P{}", i + 1) } else { c.name.clone() };
        corrs.push(LandmarkCorrespondence::new(name, world, pixel));
    }
    let sol = solve_pnp(k, &corrs, &SolveOptions::default())?;
    let report = reprojection_report(k, &sol.pose, &corrs);
    let r = sol.pose.rotation();
    let t = sol.pose.translation();
    Ok(SolveResponse {
        schema: CALIB_SCHEMA.into(),
        pose: PoseBody { rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]), translation: [t.x, t.y, t.z] },
        per_landmark_error: report.errors,
        rms_error: sol.rms_error,
        iterations: sol.iterations,
        planar: sol.planar,
    })
}

pub fn handle_homography(req: &HomographyRequest) -> Result<HomographyResponse, ApiError> {
    check_schema(&req.schema)?;
    let pairs: Vec<(Vector2<f64>, Vector2<f64>)> =
        req.pairs.iter().map(|p| (Vector2::from(p.pixel), Vector2::from(p.ground))).collect();
    let h = estimate_homography(&pairs)?;
    let m = h.matrix();
    Ok(HomographyResponse { schema: CALIB_SCHEMA.into(), matrix: [0, 1, 2].map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]]) })
}

async fn solve(body: Bytes) -> Result<Json<SolveResponse>, ApiError> {
    let req: SolveRequest = parse_body(&body)?;
    handle_solve(&req).map(Json)
}

async fn homography(body: Bytes) -> Result<Json<HomographyResponse>, ApiError> {
    let req: HomographyRequest = parse_body(&body)?;
    handle_homography(&req).map(Json)
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "version": crate::VERSION }))
}

async fn api_not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

fn is_local_origin(origin: &HeaderValue) -> bool {
    let Ok(s) = origin.to_str() else { return false };
    let host = s.strip_prefix("http://").or_else(|| s.strip_prefix("https://")).unwrap_or("");
    let host = host.rsplit_once(':').map_or(host, |(h, port)| if port.parse::<u16>().is_ok() { h } else { host });
    matches!(host, "localhost" | "127.0.0.1" | "[::1]")
}

/// Builds the application. `ui` is served for every path outside `/api`.
pub fn router(ui: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/solve", post(solve))
        .route("/homography", post(homography))
        .route("/health", get(health))
        .fallback(api_not_found);
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::predicate(|o, _| is_local_origin(o)))
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    let app = Router::new().nest("/api", api);
    let app = match ui {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    };
    app.layer(cors)
}

/// Serves on an already bound listener until the process is interrupted.
pub async fn serve(listener: tokio::net::TcpListener, ui: Option<PathBuf>) -> std::io::Result<()> {
    let addr: SocketAddr = listener.local_addr()?;
    log::info!("listening on http://{addr}");
    axum::serve(listener, router(ui))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
