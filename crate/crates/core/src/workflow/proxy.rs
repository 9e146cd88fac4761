use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use super::{Result, WorkflowError};

/// Source of the current time; tests use [`ManualClock`].
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that only moves when told to.
#[derive(Debug, Clone)]
pub struct ManualClock(Arc<Mutex<DateTime<Utc>>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(Arc::new(Mutex::new(start)))
    }

    pub fn advance(&self, by: Duration) {
        let mut t = self.0.lock().unwrap_or_else(|p| p.into_inner());
        *t += by;
    }

    pub fn set(&self, to: DateTime<Utc>) {
        *self.0.lock().unwrap_or_else(|p| p.into_inner()) = to;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProxyKind {
    User,
    Admin,
}

/// Time-limited permission to run compute tasks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxyCredential {
    pub owner: String,
    pub issued_at: DateTime<Utc>,
    pub lifetime_s: i64,
    pub kind: ProxyKind,
}

impl ProxyCredential {
    pub fn init(owner: &str, lifetime_s: i64, kind: ProxyKind, now: DateTime<Utc>) -> Result<Self> {
        if lifetime_s <= 0 {
            return Err(WorkflowError::Validation("proxy lifetime must be positive".into()));
        }
        if owner.is_empty() {
            return Err(WorkflowError::Validation("proxy owner must be set".into()));
        }
        Ok(Self {
            owner: owner.to_string(),
            issued_at: now,
            lifetime_s,
            kind,
        })
    }

    pub fn expires_at(&self) -> DateTime<Utc> {
        self.issued_at + Duration::seconds(self.lifetime_s)
    }

    pub fn is_valid(&self, now: DateTime<Utc>) -> bool {
        now < self.expires_at()
    }

    /// Resets `issued_at`; only administrator proxies may be renewed.
    pub fn renew(&self, now: DateTime<Utc>) -> Result<Self> {
        if self.kind != ProxyKind::Admin {
            return Err(WorkflowError::RenewOnUserProxy);
        }
        Ok(Self {
            issued_at: now,
            ..self.clone()
        })
    }
}
