use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, Utc};
use phylogrid_core::workflow::Clock;
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub token: String,
    pub user: String,
    pub created_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
}

/// Decides whether a login is allowed. The default accepts any well-formed
/// user name without a password.
pub trait Authenticator: Send + Sync {
    fn authenticate(&self, user: &str, password: Option<&str>) -> Result<(), String>;
}

pub struct OpenAuthenticator;

impl Authenticator for OpenAuthenticator {
    fn authenticate(&self, user: &str, _password: Option<&str>) -> Result<(), String> {
        valid_user(user)
    }
}

pub fn valid_user(user: &str) -> Result<(), String> {
    let ok = !user.is_empty()
        && user.len() <= 64
        && user
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'.' | b'-'));
    if ok {
        Ok(())
    } else {
        Err("user names are 1 to 64 letters, digits, '.', '_' or '-'".into())
    }
}

pub struct Sessions {
    clock: Arc<dyn Clock>,
    ttl: Duration,
    auth: Box<dyn Authenticator>,
    by_token: Mutex<HashMap<String, Session>>,
}

impl Sessions {
    pub fn new(clock: Arc<dyn Clock>, ttl_s: i64, auth: Box<dyn Authenticator>) -> Self {
        Self {
            clock,
            ttl: Duration::seconds(ttl_s),
            auth,
            by_token: Mutex::new(HashMap::new()),
        }
    }

    pub fn login(&self, user: &str, password: Option<&str>) -> Result<Session, ApiError> {
        self.auth
            .authenticate(user, password)
            .map_err(|m| ApiError::unauthenticated(m).with_field("user"))?;
        let now = self.clock.now();
        let s = Session {
            token: uuid::Uuid::new_v4().simple().to_string(),
            user: user.to_string(),
            created_at: now,
            expires_at: now + self.ttl,
        };
        let mut map = self.by_token.lock().unwrap_or_else(|p| p.into_inner());
        map.retain(|_, v| v.expires_at > now);
        map.insert(s.token.clone(), s.clone());
        Ok(s)
    }

    /// The session behind `token`, if it exists and has not expired.
    pub fn check(&self, token: &str) -> Result<Session, ApiError> {
        let now = self.clock.now();
        let mut map = self.by_token.lock().unwrap_or_else(|p| p.into_inner());
        match map.get(token) {
            Some(s) if s.expires_at > now => Ok(s.clone()),
            Some(_) => {
                map.remove(token);
                Err(ApiError::unauthenticated("session expired, log in again"))
            }
            None => Err(ApiError::unauthenticated("unknown session token")),
        }
    }
}
