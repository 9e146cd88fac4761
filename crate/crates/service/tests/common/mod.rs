#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use phylogrid_core::workflow::{Clock, ManualClock, SystemClock};
use phylogrid_service::{bind, RunningServer, ServeConfig};
use reqwest::{Method, StatusCode};
use serde_json::Value;

pub const PRIMATES: &str = "\
>human
AAGCTTCACCGGCGCAGTCATTCTCATAATCGCCCACGGACTTACATCCTCATTACTATT
>chimp
AAGCTTCACCGGCGCAATTATCCTCATAATCGCCCACGGACTTACATCCTCATTATTATT
>gorilla
AAGCTTCACCGGCGCAGTTGTTCTTATAATTGCCCACGGACTTACATCATCATTATTATT
>orang
AAGCTTCACCGGCGCAACCACCCTCATGATTGCCCATGGACTCACATCCTCCCTACTGTT
>gibbon
AAGCTTTACAGGTGCAACCGTCCTCATAATCGCCCACGGACTAACCTCTTCCCTGCTATT
";

/// The same residues with a few deletions, so the upload needs aligning.
pub const PRIMATES_UNALIGNED: &str = "\
>human
AAGCTTCACCGGCGCAGTCATTCTCATAATCGCCCACGGACTTACATCCTCATTACTATT
>chimp
AAGCTTCACCGGCGCAATTATCCTCATAATCGCCCACGGACTTACATCCTCATTATT
>gorilla
AAGCTTCACCGGCGCAGTTGTTCTTATAATTGCCCACGGACTTACATCATCATTATTATT
>orang
AAGCTTCACCGGCGCAACCACCCTCATGATTGCCCATGGACTCACATCCTCCCTACTGTT
>gibbon
AAGCTTTACAGGTGCAACCGTCCTCATAATCGCCCACGGACTAACCTCTTCCCTG
";

pub fn config(dir: &Path) -> ServeConfig {
    let mut c = ServeConfig::new(0, dir);
    c.workers = 2;
    c.durable = false;
    c
}

pub async fn start_with(cfg: ServeConfig, clock: Arc<dyn Clock>) -> RunningServer {
    bind(&cfg, clock).await.expect("server binds").spawn()
}

pub async fn start(dir: &Path) -> RunningServer {
    start_with(config(dir), Arc::new(SystemClock)).await
}

pub async fn start_manual(dir: &Path, clock: &ManualClock) -> RunningServer {
    start_with(config(dir), Arc::new(clock.clone())).await
}

pub struct Resp {
    pub status: StatusCode,
    pub content_type: String,
    pub bytes: Vec<u8>,
}

impl Resp {
    pub fn json(&self) -> Value {
        serde_json::from_slice(&self.bytes).unwrap_or_else(|e| panic!("not JSON ({e}): {}", self.text()))
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.bytes).into_owned()
    }

    pub fn code(&self) -> String {
        self.json()["code"].as_str().unwrap_or_default().to_string()
    }
}

/// A logged-in user of one server.
pub struct Api {
    http: reqwest::Client,
    pub base: String,
    pub token: Option<String>,
}

impl Api {
    pub fn anonymous(server: &RunningServer) -> Self {
        Self {
            http: reqwest::Client::new(),
            base: server.url(),
            token: None,
        }
    }

    pub async fn login(server: &RunningServer, user: &str) -> Self {
        let mut a = Self::anonymous(server);
        let r = a.post("/api/login", &serde_json::json!({ "user": user })).await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.text());
        a.token = Some(r.json()["token"].as_str().unwrap().to_string());
        a
    }

    pub async fn send(&self, method: Method, path: &str, headers: &[(&str, &str)], body: Option<Vec<u8>>) -> Resp {
        let mut req = self.http.request(method, format!("{}{path}", self.base));
        if let Some(t) = &self.token {
            req = req.bearer_auth(t);
        }
        for (k, v) in headers {
            req = req.header(*k, *v);
        }
        if let Some(b) = body {
            req = req.body(b);
        }
        let r = req.send().await.expect("request reaches the server");
        let status = r.status();
        let content_type = r
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .unwrap_or_default()
            .to_string();
        Resp {
            status,
            content_type,
            bytes: r.bytes().await.unwrap().to_vec(),
        }
    }

    pub async fn get(&self, path: &str) -> Resp {
        self.send(Method::GET, path, &[], None).await
    }

    pub async fn get_as(&self, path: &str, accept: &str) -> Resp {
        self.send(Method::GET, path, &[("accept", accept)], None).await
    }

    pub async fn post(&self, path: &str, body: &Value) -> Resp {
        self.send(
            Method::POST,
            path,
            &[("content-type", "application/json")],
            Some(serde_json::to_vec(body).unwrap()),
        )
        .await
    }

    pub async fn post_empty(&self, path: &str) -> Resp {
        self.send(Method::POST, path, &[], None).await
    }

    pub async fn post_text(&self, path: &str, text: &str) -> Resp {
        self.send(Method::POST, path, &[("content-type", "text/plain")], Some(text.as_bytes().to_vec()))
            .await
    }

    pub async fn put_text(&self, path: &str, text: &str) -> Resp {
        self.send(Method::PUT, path, &[("content-type", "text/plain")], Some(text.as_bytes().to_vec()))
            .await
    }

    pub async fn create(&self, name: &str) -> String {
        let r = self.post("/api/jobs", &serde_json::json!({ "name": name, "description": "test" })).await;
        assert_eq!(r.status, StatusCode::CREATED, "{}", r.text());
        r.json()["id"].as_str().unwrap().to_string()
    }

    pub async fn detail(&self, id: &str) -> String {
        let r = self.get(&format!("/api/jobs/{id}/status")).await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.text());
        r.json()["status"]["detail"].as_str().unwrap().to_string()
    }

    /// Polls the job until its state is one of `states`.
    pub async fn wait_for(&self, id: &str, states: &[&str]) -> String {
        let start = Instant::now();
        loop {
            let d = self.detail(id).await;
            if states.contains(&d.as_str()) {
                return d;
            }
            assert!(start.elapsed() < Duration::from_secs(120), "job {id} stuck in {d}");
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
    }

    /// Creates a job holding `fasta`, accepted as already aligned.
    pub async fn accepted_job(&self, name: &str, fasta: &str) -> String {
        let id = self.create(name).await;
        let r = self.post_text(&format!("/api/jobs/{id}/sequences"), fasta).await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.text());
        let r = self.post_empty(&format!("/api/jobs/{id}/alignment/accept")).await;
        assert_eq!(r.status, StatusCode::OK, "{}", r.text());
        id
    }
}

pub fn multipart(boundary: &str, filename: &str, content: &[u8]) -> Vec<u8> {
    let mut b = format!(
        "--{boundary}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"{filename}\"\r\nContent-Type: text/plain\r\n\r\n"
    )
    .into_bytes();
    b.extend_from_slice(content);
    b.extend_from_slice(format!("\r\n--{boundary}--\r\n").as_bytes());
    b
}
