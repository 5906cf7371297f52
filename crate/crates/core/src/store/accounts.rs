//! Accounts, password hashing and login sessions.

use std::collections::HashMap;

use argon2::password_hash::{rand_core::OsRng, PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::Argon2;
use chrono::{DateTime, Duration, Utc};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::StoreError;
use crate::geometry::AccountId;

pub const DEFAULT_SESSION_IDLE_HOURS: i64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccountRole {
    Labeler,
    Admin,
}

/// Stored account. The username doubles as the account id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserAccount {
    pub account_id: AccountId,
    pub username: String,
    pub password_hash: String,
    pub role: AccountRole,
}

/// What may leave the server about an account.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccountInfo {
    pub account_id: AccountId,
    pub username: String,
    pub role: AccountRole,
}

impl From<&UserAccount> for AccountInfo {
    fn from(a: &UserAccount) -> Self {
        AccountInfo {
            account_id: a.account_id.clone(),
            username: a.username.clone(),
            role: a.role,
        }
    }
}

/// Caller identity for store operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Actor {
    pub account_id: AccountId,
    pub role: AccountRole,
}

impl Actor {
    /// The operator CLI, which acts with admin rights.
    pub fn operator() -> Self {
        Actor {
            account_id: AccountId::new("operator"),
            role: AccountRole::Admin,
        }
    }

    pub fn is_admin(&self) -> bool {
        self.role == AccountRole::Admin
    }
}

pub fn hash_password(password: &str) -> Result<String, StoreError> {
    let salt = SaltString::generate(&mut OsRng);
    Argon2::default()
        .hash_password(password.as_bytes(), &salt)
        .map(|h| h.to_string())
        .map_err(|e| StoreError::Internal(format!("password hashing failed: {e}")))
}

/// Constant-time check of `password` against a PHC hash string.
pub fn verify_password(password: &str, hash: &str) -> bool {
    match PasswordHash::new(hash) {
        Ok(parsed) => Argon2::default()
            .verify_password(password.as_bytes(), &parsed)
            .is_ok(),
        Err(_) => false,
    }
}

#[derive(Debug, Clone)]
struct Session {
    actor: Actor,
    last_seen: DateTime<Utc>,
}

/// In-memory session table with an idle timeout.
#[derive(Debug)]
pub struct SessionManager {
    idle_timeout: Duration,
    sessions: HashMap<String, Session>,
}

impl SessionManager {
    pub fn new(idle_timeout: Duration) -> Self {
        SessionManager {
            idle_timeout,
            sessions: HashMap::new(),
        }
    }

    pub fn open(&mut self, actor: Actor, now: DateTime<Utc>) -> String {
        let mut bytes = [0u8; 32];
        rand::rngs::OsRng.fill_bytes(&mut bytes);
        let token = hex::encode(bytes);
        self.sessions.insert(
            token.clone(),
            Session {
                actor,
                last_seen: now,
            },
        );
        token
    }

    /// Resolves a token and refreshes its idle timer.
    pub fn validate(&mut self, token: &str, now: DateTime<Utc>) -> Result<Actor, StoreError> {
        let Some(session) = self.sessions.get_mut(token) else {
            return Err(StoreError::Unauthorized("unknown session".into()));
        };
        if now - session.last_seen > self.idle_timeout {
            self.sessions.remove(token);
            return Err(StoreError::Unauthorized("session expired".into()));
        }
        session.last_seen = now;
        Ok(session.actor.clone())
    }

    pub fn revoke_account(&mut self, account: &AccountId) {
        self.sessions.retain(|_, s| &s.actor.account_id != account);
    }
}
