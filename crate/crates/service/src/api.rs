//! HTTP routes. Bodies are JSON unless a route says otherwise; every
//! failure is an [`ApiError`] body.

use std::collections::HashSet;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, FromRequest, FromRequestParts, Multipart, Path, Query, Request, State};
use axum::http::header::{ACCEPT, AUTHORIZATION, CONTENT_DISPOSITION, CONTENT_TYPE};
use axum::http::request::Parts;
use axum::http::{HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use phylogrid_core::aligner::{ConservationProfile, ScoringParams};
use phylogrid_core::mcmc::DEFAULT_BURNIN;
use phylogrid_core::seqio::write_nexus;
use phylogrid_core::workflow::{
    Artifact, ConfigureRequest, ConsensusReport, HistoryEntry, Job, JobSummary, ProxyChoice, ProxyCredential,
    ProxyKind, StatusView, Workflow, WorkflowError,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::session::{Session, Sessions};

/// Largest page of the job list.
pub const MAX_PAGE: usize = 100;

pub struct Shared {
    pub wf: Arc<Workflow>,
    pub sessions: Sessions,
    pub admins: HashSet<String>,
    pub proxy_lifetime_s: i64,
    pub upload_limit: usize,
}

#[derive(Clone)]
pub struct AppState(pub Arc<Shared>);

pub fn router(state: AppState) -> Router {
    let limit = state.0.upload_limit;
    Router::new()
        .route("/api/health", get(health))
        .route("/api/login", post(login))
        .route("/api/proxy", get(proxy_get))
        .route("/api/proxy/init", post(proxy_init))
        .route("/api/proxy/renew", post(proxy_renew))
        .route("/api/jobs", get(jobs_list).post(jobs_create))
        .route("/api/jobs/{id}", get(job_get))
        .route("/api/jobs/{id}/sequences", post(sequences))
        .route("/api/jobs/{id}/align", post(align))
        .route("/api/jobs/{id}/alignment", get(alignment_get).put(alignment_put))
        .route("/api/jobs/{id}/alignment/accept", post(alignment_accept))
        .route("/api/jobs/{id}/config", post(configure))
        .route("/api/jobs/{id}/master-block", get(master_block))
        .route("/api/jobs/{id}/submit", post(submit))
        .route("/api/jobs/{id}/status", get(status))
        .route("/api/jobs/{id}/outputs", get(outputs))
        .route("/api/jobs/{id}/outputs/{name}", get(output))
        .route("/api/jobs/{id}/consensus", get(consensus))
        .route("/api/jobs/{id}/cancel", post(cancel))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "no_route", "no such endpoint") })
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// The caller, from `Authorization: Bearer <token>`.
pub struct Caller(pub Session);

impl FromRequestParts<AppState> for Caller {
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, st: &AppState) -> Result<Self, ApiError> {
        let token = parts
            .headers
            .get(AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .ok_or_else(|| ApiError::unauthenticated("missing bearer token"))?;
        st.0.sessions.check(token.trim()).map(Caller)
    }
}

/// Raw request body under the upload limit.
pub struct Body(pub Bytes);

impl FromRequest<AppState> for Body {
    type Rejection = ApiError;

    async fn from_request(req: Request, st: &AppState) -> Result<Self, ApiError> {
        Bytes::from_request(req, st).await.map(Body).map_err(|r| {
            if r.status() == StatusCode::PAYLOAD_TOO_LARGE {
                ApiError::too_large(st.0.upload_limit)
            } else {
                ApiError::bad_request(r.body_text())
            }
        })
    }
}

fn json<T: DeserializeOwned>(b: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(b).map_err(|e| ApiError::bad_request(format!("malformed JSON body: {e}")))
}

/// Like [`json`], but an empty body means `None`.
fn json_opt<T: DeserializeOwned>(b: &[u8]) -> Result<Option<T>, ApiError> {
    if b.iter().all(u8::is_ascii_whitespace) {
        Ok(None)
    } else {
        json(b).map(Some)
    }
}

fn text(b: &[u8]) -> Result<String, ApiError> {
    String::from_utf8(b.to_vec()).map_err(|_| ApiError::bad_request("upload is not UTF-8 text"))
}

/// Picks the first of `offered` that the `Accept` header admits, honouring
/// q-values. No header means the first offer.
pub fn negotiate(headers: &HeaderMap, offered: &[&'static str]) -> Result<&'static str, ApiError> {
    let Some(accept) = headers.get(ACCEPT).and_then(|v| v.to_str().ok()) else {
        return Ok(offered[0]);
    };
    let mut ranges: Vec<(&str, f32)> = accept
        .split(',')
        .filter_map(|item| {
            let mut parts = item.split(';').map(str::trim);
            let range = parts.next().filter(|r| !r.is_empty())?;
            let q = parts
                .find_map(|p| p.strip_prefix("q="))
                .and_then(|q| q.parse().ok())
                .unwrap_or(1.0);
            Some((range, q))
        })
        .filter(|&(_, q)| q > 0.0)
        .collect();
    if ranges.is_empty() {
        return Ok(offered[0]);
    }
    ranges.sort_by(|a, b| b.1.total_cmp(&a.1));
    for (range, _) in ranges {
        let hit = offered.iter().find(|o| {
            range == "*/*"
                || range.eq_ignore_ascii_case(o)
                || range
                    .strip_suffix("/*")
                    .is_some_and(|t| o.split('/').next().is_some_and(|ot| ot.eq_ignore_ascii_case(t)))
        });
        if let Some(o) = hit {
            return Ok(o);
        }
    }
    Err(ApiError::not_acceptable(offered))
}

fn plain(status: StatusCode, content_type: &'static str, body: impl Into<axum::body::Body>) -> Response {
    let mut r = Response::new(body.into());
    *r.status_mut() = status;
    r.headers_mut().insert(CONTENT_TYPE, HeaderValue::from_static(content_type));
    r
}

async fn blocking<T, F>(st: &AppState, f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&Workflow) -> Result<T, WorkflowError> + Send + 'static,
{
    let wf = Arc::clone(&st.0.wf);
    tokio::task::spawn_blocking(move || f(&wf))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
        .map_err(ApiError::from)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

async fn health() -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        version: env!("CARGO_PKG_VERSION").into(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoginRequest {
    pub user: String,
    #[serde(default)]
    pub password: Option<String>,
}

async fn login(State(st): State<AppState>, Body(b): Body) -> Result<Json<Session>, ApiError> {
    let req: LoginRequest = json(&b)?;
    st.0.sessions.login(&req.user, req.password.as_deref()).map(Json)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxyView {
    pub owner: String,
    pub kind: ProxyKind,
    pub issued_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
    pub lifetime_s: i64,
    pub valid: bool,
}

impl ProxyView {
    fn new(p: &ProxyCredential, now: DateTime<Utc>) -> Self {
        Self {
            owner: p.owner.clone(),
            kind: p.kind,
            issued_at: p.issued_at,
            expires_at: p.expires_at(),
            lifetime_s: p.lifetime_s,
            valid: p.is_valid(now),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proxies {
    pub user: Option<ProxyView>,
    pub admin: Option<ProxyView>,
}

async fn proxy_get(State(st): State<AppState>, Caller(s): Caller) -> Json<Proxies> {
    let wf = &st.0.wf;
    let now = wf.now();
    Json(Proxies {
        user: wf.proxy(&s.user).map(|p| ProxyView::new(&p, now)),
        admin: wf.admin_proxy().map(|p| ProxyView::new(&p, now)),
    })
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProxyInitRequest {
    #[serde(default)]
    pub lifetime_s: Option<i64>,
    #[serde(default)]
    pub kind: Option<ProxyKind>,
}

async fn proxy_init(State(st): State<AppState>, Caller(s): Caller, Body(b): Body) -> Result<Json<ProxyView>, ApiError> {
    let req: ProxyInitRequest = json_opt(&b)?.unwrap_or_default();
    let lifetime = req.lifetime_s.unwrap_or(st.0.proxy_lifetime_s);
    let wf = &st.0.wf;
    let p = match req.kind.unwrap_or(ProxyKind::User) {
        ProxyKind::User => wf.init_proxy(&s.user, lifetime)?,
        ProxyKind::Admin => {
            if !st.0.admins.contains(&s.user) {
                return Err(ApiError::forbidden("only administrators can create the administrator proxy"));
            }
            wf.init_admin_proxy(&s.user, lifetime)?
        }
    };
    Ok(Json(ProxyView::new(&p, wf.now())))
}

/// Administrators renew the administrator proxy; anyone else is told that
/// user proxies cannot be renewed.
async fn proxy_renew(State(st): State<AppState>, Caller(s): Caller) -> Result<Json<ProxyView>, ApiError> {
    let wf = &st.0.wf;
    let p = if st.0.admins.contains(&s.user) {
        wf.renew_admin_proxy()?
    } else {
        wf.renew_proxy(&s.user)?
    };
    Ok(Json(ProxyView::new(&p, wf.now())))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunConfigView {
    pub ngen: u64,
    pub samplefreq: u64,
    pub runs: usize,
    pub nchains: usize,
    pub seed: u64,
}

/// Public form of a job record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub id: String,
    pub owner: String,
    pub name: String,
    pub description: String,
    pub created_at: DateTime<Utc>,
    pub status: StatusView,
    pub alignment_accepted: bool,
    pub scoring: Option<ScoringParams>,
    pub lset: Option<String>,
    pub filebase: Option<String>,
    pub datafile: Option<String>,
    pub config: Option<RunConfigView>,
    pub outputs: Vec<String>,
    pub proxy: Option<ProxyKind>,
    pub history: Vec<HistoryEntry>,
}

impl From<Job> for JobView {
    fn from(j: Job) -> Self {
        let status = j.status();
        Self {
            config: j.mcmc.as_ref().map(|c| RunConfigView {
                ngen: c.ngen,
                samplefreq: c.samplefreq,
                runs: c.nruns,
                nchains: c.nchains,
                seed: c.seed,
            }),
            filebase: j.mcmc.map(|c| c.filebase),
            id: j.id,
            owner: j.owner,
            name: j.name,
            description: j.description,
            created_at: j.created_at,
            status,
            alignment_accepted: j.alignment_accepted,
            scoring: j.scoring,
            lset: j.lset,
            datafile: j.datafile,
            outputs: j.outputs,
            proxy: j.proxy,
            history: j.history,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
pub struct PageQuery {
    pub page: Option<usize>,
    pub per_page: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobPage {
    pub jobs: Vec<JobSummary>,
    pub page: usize,
    pub per_page: usize,
    pub total: usize,
    pub next_page: Option<usize>,
}

/// Cuts the 1-based `page` out of `all`.
pub fn paginate(all: Vec<JobSummary>, q: PageQuery) -> Result<JobPage, ApiError> {
    let page = q.page.unwrap_or(1);
    let per_page = q.per_page.unwrap_or(MAX_PAGE);
    if page == 0 {
        return Err(ApiError::bad_request("page starts at 1").with_field("page"));
    }
    if per_page == 0 || per_page > MAX_PAGE {
        return Err(ApiError::bad_request(format!("per_page must be between 1 and {MAX_PAGE}")).with_field("per_page"));
    }
    let total = all.len();
    let start = (page - 1).saturating_mul(per_page).min(total);
    let end = start.saturating_add(per_page).min(total);
    let jobs = all.into_iter().skip(start).take(end - start).collect();
    Ok(JobPage {
        jobs,
        page,
        per_page,
        total,
        next_page: (end < total).then_some(page + 1),
    })
}

async fn jobs_list(
    State(st): State<AppState>,
    Caller(s): Caller,
    q: Result<Query<PageQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<Json<JobPage>, ApiError> {
    let Query(q) = q.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let all = blocking(&st, move |wf| Ok(wf.list_jobs(&s.user))).await?;
    paginate(all, q).map(Json)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateJob {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

async fn jobs_create(
    State(st): State<AppState>,
    Caller(s): Caller,
    Body(b): Body,
) -> Result<(StatusCode, Json<JobView>), ApiError> {
    let req: CreateJob = json(&b)?;
    let job = blocking(&st, move |wf| wf.create_job(&s.user, &req.name, &req.description)).await?;
    Ok((StatusCode::CREATED, Json(job.into())))
}

async fn job_get(State(st): State<AppState>, Caller(s): Caller, Path(id): Path<String>) -> Result<Json<JobView>, ApiError> {
    let job = blocking(&st, move |wf| wf.job(&s.user, &id)).await?;
    Ok(Json(job.into()))
}

/// Accepts the file either as the raw body or as the first part of a
/// multipart form.
async fn sequences(
    State(st): State<AppState>,
    Caller(s): Caller,
    Path(id): Path<String>,
    req: Request,
) -> Result<Json<JobView>, ApiError> {
    let multipart = req
        .headers()
        .get(CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("multipart/form-data"));
    let limit = st.0.upload_limit;
    let bytes = if multipart {
        let mut form = Multipart::from_request(req, &st)
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        let field = form
            .next_field()
            .await
            .map_err(|e| upload_error(e.status(), e.body_text(), limit))?
            .ok_or_else(|| ApiError::bad_request("the form has no file").with_field("file"))?;
        field.bytes().await.map_err(|e| upload_error(e.status(), e.body_text(), limit))?
    } else {
        Body::from_request(req, &st).await?.0
    };
    let body = text(&bytes)?;
    let job = blocking(&st, move |wf| wf.attach_sequences(&s.user, &id, &body)).await?;
    Ok(Json(job.into()))
}

fn upload_error(status: StatusCode, msg: String, limit: usize) -> ApiError {
    if status == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::too_large(limit)
    } else {
        ApiError::bad_request(msg)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AlignRequest {
    #[serde(default)]
    pub scoring: Option<ScoringParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignStarted {
    pub task: u64,
    pub job: JobView,
}

async fn align(
    State(st): State<AppState>,
    Caller(s): Caller,
    Path(id): Path<String>,
    Body(b): Body,
) -> Result<(StatusCode, Json<AlignStarted>), ApiError> {
    let req: AlignRequest = json_opt(&b)?.unwrap_or_default();
    let (task, job) = blocking(&st, move |wf| {
        let t = wf.request_alignment(&s.user, &id, req.scoring)?;
        Ok((t, wf.job(&s.user, &id)?))
    })
    .await?;
    Ok((
        StatusCode::ACCEPTED,
        Json(AlignStarted {
            task: task.0,
            job: job.into(),
        }),
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Row {
    pub id: String,
    pub residues: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentBody {
    pub accepted: bool,
    pub aligned: bool,
    pub ntax: usize,
    pub nchar: Option<usize>,
    pub rows: Vec<Row>,
    pub profile: Option<ConservationProfile>,
}

const NEXUS_TYPE: &str = "text/x-nexus";

/// JSON with the conservation profile, or the NEXUS text of an aligned
/// matrix for `Accept: text/x-nexus` or `text/plain`.
async fn alignment_get(
    State(st): State<AppState>,
    Caller(s): Caller,
    Path(id): Path<String>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let want = negotiate(&headers, &["application/json", NEXUS_TYPE, "text/plain"])?;
    let view = blocking(&st, move |wf| wf.alignment(&s.user, &id)).await?;
    if want != "application/json" {
        let nexus = write_nexus(&view.alignment).map_err(WorkflowError::from)?;
        let ct = if want == NEXUS_TYPE { NEXUS_TYPE } else { "text/plain; charset=utf-8" };
        return Ok(plain(StatusCode::OK, ct, nexus));
    }
    let a = &view.alignment;
    Ok(Json(AlignmentBody {
        accepted: view.accepted,
        aligned: a.is_aligned(),
        ntax: a.ntax(),
        nchar: a.nchar(),
        rows: a
            .records()
            .iter()
            .map(|r| Row {
                id: r.id.clone(),
                residues: r.residues.clone(),
            })
            .collect(),
        profile: view.profile,
    })
    .into_response())
}

async fn alignment_put(
    State(st): State<AppState>,
    Caller(s): Caller,
    Path(id): Path<String>,
    Body(b): Body,
) -> Result<Json<JobView>, ApiError> {
    let body = text(&b)?;
    let job = blocking(&st, move |wf| wf.submit_replacement_alignment(&s.user, &id, &body)).await?;
    Ok(Json(job.into()))
}

async fn alignment_accept(
    State(st): State<AppState>,
    Caller(s): Caller,
    Path(id): Path<String>,
) -> Result<Json<JobView>, ApiError> {
    let job = blocking(&st, move |wf| wf.accept_alignment(&s.user, &id)).await?;
    Ok(Json(job.into()))
}

async fn configure(
    State(st): State<AppState>,
    Caller(s): Caller,
    Path(id): Path<String>,
    Body(b): Body,
) -> Result<Json<JobView>, ApiError> {
    let req: ConfigureRequest = json(&b)?;
    let job = blocking(&st, move |wf| wf.configure(&s.user, &id, &req)).await?;
    Ok(Json(job.into()))
}

async fn master_block(State(st): State<AppState>, Caller(s): Caller, Path(id): Path<String>) -> Result<Response, ApiError> {
    let text = blocking(&st, move |wf| wf.render_master_block(&s.user, &id)).await?;
    Ok(plain(StatusCode::OK, "text/plain; charset=utf-8", text))
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SubmitRequest {
    #[serde(default)]
    pub proxy: ProxyChoice,
}

async fn submit(
    State(st): State<AppState>,
    Caller(s): Caller,
    Path(id): Path<String>,
    Body(b): Body,
) -> Result<(StatusCode, Json<JobView>), ApiError> {
    let req: SubmitRequest = json_opt(&b)?.unwrap_or_default();
    let job = blocking(&st, move |wf| wf.submit(&s.user, &id, req.proxy)).await?;
    Ok((StatusCode::ACCEPTED, Json(job.into())))
}

async fn status(State(st): State<AppState>, Caller(s): Caller, Path(id): Path<String>) -> Result<Response, ApiError> {
    let r = blocking(&st, move |wf| wf.poll_status(&s.user, &id)).await?;
    Ok(Json(r).into_response())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputList {
    pub outputs: Vec<Artifact>,
}

async fn outputs(State(st): State<AppState>, Caller(s): Caller, Path(id): Path<String>) -> Result<Json<OutputList>, ApiError> {
    let outputs = blocking(&st, move |wf| wf.fetch_outputs(&s.user, &id)).await?;
    Ok(Json(OutputList { outputs }))
}

async fn output(
    State(st): State<AppState>,
    Caller(s): Caller,
    Path((id, name)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let file = name.clone();
    let bytes = blocking(&st, move |wf| wf.read_output(&s.user, &id, &file)).await?;
    let mut r = plain(StatusCode::OK, "application/octet-stream", bytes);
    if let Ok(v) = HeaderValue::from_str(&format!("attachment; filename=\"{name}\"")) {
        r.headers_mut().insert(CONTENT_DISPOSITION, v);
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
pub struct ConsensusQuery {
    pub burnin: Option<f64>,
}

/// JSON report, or the Newick line for `Accept: text/plain`.
async fn consensus(
    State(st): State<AppState>,
    Caller(s): Caller,
    Path(id): Path<String>,
    q: Result<Query<ConsensusQuery>, axum::extract::rejection::QueryRejection>,
    headers: HeaderMap,
) -> Result<Response, ApiError> {
    let Query(q) = q.map_err(|e| ApiError::bad_request(e.body_text()).with_field("burnin"))?;
    let want = negotiate(&headers, &["application/json", "text/plain"])?;
    let burnin = q.burnin.unwrap_or(DEFAULT_BURNIN);
    let r: ConsensusReport = blocking(&st, move |wf| wf.compute_consensus(&s.user, &id, burnin)).await?;
    if want == "text/plain" {
        return Ok(plain(StatusCode::OK, "text/plain; charset=utf-8", format!("{}\n", r.newick)));
    }
    Ok(Json(r).into_response())
}

async fn cancel(State(st): State<AppState>, Caller(s): Caller, Path(id): Path<String>) -> Result<Json<JobView>, ApiError> {
    let job = blocking(&st, move |wf| wf.cancel(&s.user, &id)).await?;
    Ok(Json(job.into()))
}
