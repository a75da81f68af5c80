//! HTTP surface of the service.
//!
//! Every request carries `Authorization: Bearer <token>`. Viewers may only
//! issue `GET`s. Errors are JSON `{"error": <code>, "message": <text>}`.

use std::future::Future;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequestParts, Path, RawQuery, State};
use axum::http::request::Parts;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDate;
use serde::de::DeserializeOwned;
use serde_json::json;
use tokio::net::TcpListener;

use crate::phenology::ObservationRecord;
use crate::store::{parse_time, Granularity, ReportLayout, SeriesKey, Stat};

use super::{AlertRule, AlertState, ForecastRecord, Role, Service, ServiceError, UserAccount};

const MAX_BODY_BYTES: usize = 64 * 1024 * 1024;

pub struct ApiError(ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            ServiceError::Unauthorized => StatusCode::UNAUTHORIZED,
            ServiceError::Forbidden(_) => StatusCode::FORBIDDEN,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Validation(_) => StatusCode::BAD_REQUEST,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Store(_) | ServiceError::Config(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = json!({ "error": self.0.code(), "message": self.0.to_string() });
        (status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// The authenticated caller.
pub struct User(pub UserAccount);

impl FromRequestParts<Arc<Service>> for User {
    type Rejection = ApiError;

    fn from_request_parts(
        parts: &mut Parts,
        service: &Arc<Service>,
    ) -> impl Future<Output = Result<Self, Self::Rejection>> + Send {
        let token = parts
            .headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .map(str::trim)
            .map(str::to_owned);
        let result = match token {
            Some(t) => service.authenticate(&t).map(User).map_err(ApiError),
            None => Err(ApiError(ServiceError::Unauthorized)),
        };
        std::future::ready(result)
    }
}

/// Decoded query string; keys may repeat.
struct Params(Vec<(String, String)>);

impl Params {
    fn parse(raw: Option<String>) -> ApiResult<Params> {
        let pairs = serde_urlencoded::from_str(raw.as_deref().unwrap_or(""))
            .map_err(|e| ServiceError::Validation(format!("bad query string: {e}")))?;
        Ok(Params(pairs))
    }

    fn get(&self, name: &str) -> Option<&str> {
        self.0.iter().rev().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    fn all(&self, name: &str) -> Vec<&str> {
        self.0.iter().filter(|(k, _)| k == name).map(|(_, v)| v.as_str()).collect()
    }

    fn parsed<T>(&self, name: &str, parse: impl Fn(&str) -> Result<T, String>) -> ApiResult<Option<T>> {
        self.get(name)
            .map(|v| parse(v).map_err(|e| ApiError(ServiceError::Validation(format!("{name}: {e}")))))
            .transpose()
    }

    fn time(&self, name: &str) -> ApiResult<Option<i64>> {
        self.parsed(name, parse_time)
    }

    fn keys(&self) -> ApiResult<Vec<SeriesKey>> {
        self.all("key")
            .into_iter()
            .map(|k| k.parse().map_err(|e: String| ApiError(ServiceError::Validation(e))))
            .collect()
    }
}

fn json_body<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError(ServiceError::Validation(format!("invalid JSON body: {e}"))))
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/v1/ingest", post(ingest))
        .route("/v1/series", get(series))
        .route("/v1/metrics/{station}", get(metrics))
        .route("/v1/stage/{block}", get(stage))
        .route("/v1/risk/{station}", get(risk))
        .route("/v1/irrigation/{block}", get(irrigation))
        .route("/v1/frost/{station}", get(frost))
        .route("/v1/spray-windows/{station}", get(spray_windows))
        .route("/v1/alert-rules", get(list_rules).post(upsert_rule))
        .route("/v1/alerts", get(list_alerts))
        .route("/v1/alerts/{id}/ack", post(ack_alert))
        .route("/v1/observations", post(submit_observation))
        .route("/v1/forecast", get(latest_forecast).post(post_forecast))
        .route("/v1/report", get(report))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(service)
}

async fn ingest(State(svc): State<Arc<Service>>, User(user): User, body: Bytes) -> ApiResult<Response> {
    Service::require(&user, Role::Operator, "ingest")?;
    let text = std::str::from_utf8(&body).map_err(|_| ServiceError::Validation("body is not UTF-8".into()))?;
    let report = svc.ingest(&user, text)?;
    Ok(Json(report).into_response())
}

async fn series(State(svc): State<Arc<Service>>, _: User, RawQuery(q): RawQuery) -> ApiResult<Response> {
    let p = Params::parse(q)?;
    let keys = p.keys()?;
    if keys.is_empty() {
        return Ok(Json(svc.series()).into_response());
    }
    let from = p.time("from")?.unwrap_or(i64::MIN);
    let to = p.time("to")?.unwrap_or(i64::MAX);
    let aggregate = p.parsed("aggregate", str::parse::<Granularity>)?.unwrap_or(Granularity::Raw);
    Ok(Json(svc.series_data(&keys, from, to, aggregate)?).into_response())
}

fn parse_date(s: &str) -> Result<NaiveDate, String> {
    s.parse::<NaiveDate>().map_err(|e| e.to_string())
}

async fn metrics(
    State(svc): State<Arc<Service>>,
    _: User,
    Path(station): Path<String>,
    RawQuery(q): RawQuery,
) -> ApiResult<Response> {
    let p = Params::parse(q)?;
    let site = svc.station(&station)?;
    let latest = svc
        .latest_time(&station)
        .map(|t| site.local_date(t))
        .unwrap_or_else(|| chrono::Utc::now().date_naive());
    let to = p.parsed("to", parse_date)?.unwrap_or(latest);
    let from = p.parsed("from", parse_date)?.unwrap_or(to);
    let rows = svc.metrics(&station, from, to)?;
    if p.get("format") == Some("table") {
        let table = super::metrics_table(&rows);
        return Ok(([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], table).into_response());
    }
    Ok(Json(rows).into_response())
}

async fn stage(State(svc): State<Arc<Service>>, _: User, Path(block): Path<String>, RawQuery(q): RawQuery) -> ApiResult<Response> {
    let p = Params::parse(q)?;
    Ok(Json(svc.stage(&block, p.time("as_of")?)?).into_response())
}

async fn risk(State(svc): State<Arc<Service>>, _: User, Path(station): Path<String>, RawQuery(q): RawQuery) -> ApiResult<Response> {
    let p = Params::parse(q)?;
    Ok(Json(svc.risk(&station, p.time("as_of")?)?).into_response())
}

async fn irrigation(
    State(svc): State<Arc<Service>>,
    _: User,
    Path(block): Path<String>,
    RawQuery(q): RawQuery,
) -> ApiResult<Response> {
    let p = Params::parse(q)?;
    let hypothetical = p.parsed("hypothetical_mm", |s| s.parse::<f64>().map_err(|e| e.to_string()))?;
    Ok(Json(svc.irrigation(&block, p.time("as_of")?, hypothetical)?).into_response())
}

async fn frost(State(svc): State<Arc<Service>>, _: User, Path(station): Path<String>, RawQuery(q): RawQuery) -> ApiResult<Response> {
    let p = Params::parse(q)?;
    Ok(Json(svc.frost(&station, p.time("as_of")?)?).into_response())
}

async fn spray_windows(
    State(svc): State<Arc<Service>>,
    _: User,
    Path(station): Path<String>,
    RawQuery(q): RawQuery,
) -> ApiResult<Response> {
    let p = Params::parse(q)?;
    Ok(Json(svc.spray_windows(&station, p.time("as_of")?)?).into_response())
}

async fn list_rules(State(svc): State<Arc<Service>>, _: User) -> ApiResult<Response> {
    Ok(Json(svc.alert_rules()).into_response())
}

async fn upsert_rule(State(svc): State<Arc<Service>>, User(user): User, body: Bytes) -> ApiResult<Response> {
    Service::require(&user, Role::Admin, "editing alert rules")?;
    let rule: AlertRule = json_body(&body)?;
    Ok(Json(svc.upsert_rule(&user, rule)?).into_response())
}

async fn list_alerts(State(svc): State<Arc<Service>>, _: User, RawQuery(q): RawQuery) -> ApiResult<Response> {
    let p = Params::parse(q)?;
    let state = p.parsed("state", |s| {
        serde_json::from_value::<AlertState>(serde_json::Value::String(s.into())).map_err(|e| e.to_string())
    })?;
    Ok(Json(svc.alerts(state)).into_response())
}

async fn ack_alert(State(svc): State<Arc<Service>>, User(user): User, Path(id): Path<String>) -> ApiResult<Response> {
    Ok(Json(svc.acknowledge(&user, &id)?).into_response())
}

async fn submit_observation(State(svc): State<Arc<Service>>, User(user): User, body: Bytes) -> ApiResult<Response> {
    Service::require(&user, Role::Operator, "recording observations")?;
    let obs: ObservationRecord = json_body(&body)?;
    Ok(Json(svc.submit_observation(&user, obs)?).into_response())
}

async fn latest_forecast(State(svc): State<Arc<Service>>, _: User) -> ApiResult<Response> {
    let f = svc
        .latest_forecast()
        .ok_or_else(|| ServiceError::NotFound("no forecast issued".into()))?;
    Ok(Json(f).into_response())
}

async fn post_forecast(State(svc): State<Arc<Service>>, User(user): User, body: Bytes) -> ApiResult<Response> {
    Service::require(&user, Role::Operator, "posting forecasts")?;
    let record: ForecastRecord = json_body(&body)?;
    let issued_at = record.issued_at;
    let fired = svc.ingest_forecast(&user, record)?;
    Ok(Json(json!({ "acknowledged": true, "issued_at": issued_at, "alerts_fired": fired })).into_response())
}

async fn report(State(svc): State<Arc<Service>>, _: User, RawQuery(q): RawQuery) -> ApiResult<Response> {
    let p = Params::parse(q)?;
    let keys = p.keys()?;
    let layout = ReportLayout {
        granularity: p.parsed("aggregate", str::parse::<Granularity>)?.unwrap_or(Granularity::Raw),
        stat: p.parsed("stat", str::parse::<Stat>)?.unwrap_or(Stat::Mean),
    };
    let from = p.time("from")?.unwrap_or(i64::MIN);
    let to = p.time("to")?.unwrap_or(i64::MAX);
    let csv = svc.report(&keys, from, to, &layout)?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], csv).into_response())
}

/// Serves until the listener fails or `shutdown` resolves.
pub async fn serve(
    service: Arc<Service>,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(service)).with_graceful_shutdown(shutdown).await
}
