//! Thin client for the `jobs` subcommands.

use phylogrid_core::workflow::{JobSummary, StatusReport};
use reqwest::{Method, StatusCode};
use serde::de::DeserializeOwned;
use thiserror::Error;

use crate::api::{JobPage, JobView, LoginRequest};
use crate::error::ApiError;
use crate::session::Session;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach {url}: {msg}")]
    Connect { url: String, msg: String },
    #[error("{0}")]
    Api(ApiError),
    #[error("unexpected response from {url}: {msg}")]
    Decode { url: String, msg: String },
}

impl ClientError {
    /// True for refusals caused by the request rather than the server.
    pub fn is_client_side(&self) -> bool {
        matches!(self, ClientError::Api(e) if (400..500).contains(&e.status))
    }
}

pub struct Client {
    http: reqwest::Client,
    base: String,
    token: String,
}

impl Client {
    pub async fn login(base: &str, user: &str) -> Result<Self, ClientError> {
        let http = reqwest::Client::new();
        let base = base.trim_end_matches('/').to_string();
        let mut c = Self {
            http,
            base,
            token: String::new(),
        };
        let s: Session = c
            .call(
                Method::POST,
                "/api/login",
                Some(serde_json::to_vec(&LoginRequest {
                    user: user.into(),
                    password: None,
                })
                .expect("login request serializes")),
            )
            .await?;
        c.token = s.token;
        Ok(c)
    }

    async fn call<T: DeserializeOwned>(&self, method: Method, path: &str, body: Option<Vec<u8>>) -> Result<T, ClientError> {
        let url = format!("{}{path}", self.base);
        let mut req = self.http.request(method, &url);
        if !self.token.is_empty() {
            req = req.bearer_auth(&self.token);
        }
        if let Some(b) = body {
            req = req.header(reqwest::header::CONTENT_TYPE, "application/json").body(b);
        }
        let resp = req.send().await.map_err(|e| ClientError::Connect {
            url: url.clone(),
            msg: e.to_string(),
        })?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| ClientError::Connect {
            url: url.clone(),
            msg: e.to_string(),
        })?;
        if !status.is_success() {
            let mut err: ApiError = serde_json::from_slice(&bytes).unwrap_or_else(|_| {
                ApiError::new(
                    StatusCode::from_u16(status.as_u16()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR),
                    "http",
                    String::from_utf8_lossy(&bytes).into_owned(),
                )
            });
            err.status = status.as_u16();
            return Err(ClientError::Api(err));
        }
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode {
            url,
            msg: e.to_string(),
        })
    }

    /// Every job of the user, following pagination.
    pub async fn list(&self) -> Result<Vec<JobSummary>, ClientError> {
        let mut out = Vec::new();
        let mut page = Some(1);
        while let Some(p) = page {
            let r: JobPage = self.call(Method::GET, &format!("/api/jobs?page={p}"), None).await?;
            out.extend(r.jobs);
            page = r.next_page;
        }
        Ok(out)
    }

    pub async fn status(&self, id: &str) -> Result<StatusReport, ClientError> {
        self.call(Method::GET, &format!("/api/jobs/{id}/status"), None).await
    }

    pub async fn cancel(&self, id: &str) -> Result<JobView, ClientError> {
        self.call(Method::POST, &format!("/api/jobs/{id}/cancel"), None).await
    }
}
