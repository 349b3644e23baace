use std::collections::BTreeMap;
use std::sync::Mutex;

use crate::message::Role;

pub type SessionId = u64;

#[derive(Debug, Default)]
struct Inner {
    next_id: SessionId,
    operator: Option<SessionId>,
    sessions: BTreeMap<SessionId, Option<Role>>,
}

/// Connected sessions and their roles. Role changes happen under one lock,
/// so at most one session can hold the operator role at any instant.
#[derive(Debug, Default)]
pub struct SessionRegistry {
    inner: Mutex<Inner>,
}

/// Outcome of a role claim.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Claim {
    Granted(Role),
    /// Operator requested but held by another session; the claimant is
    /// registered as an observer instead.
    Conflict { holder: SessionId },
}

impl SessionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn open(&self) -> SessionId {
        let mut g = self.inner.lock().expect("registry lock");
        g.next_id += 1;
        let id = g.next_id;
        g.sessions.insert(id, None);
        id
    }

    pub fn claim(&self, id: SessionId, role: Role) -> Claim {
        let mut g = self.inner.lock().expect("registry lock");
        let current = g.sessions.get(&id).copied().flatten();
        if current == Some(Role::Operator) {
            if role == Role::Observer {
                g.operator = None;
                g.sessions.insert(id, Some(Role::Observer));
            }
            return Claim::Granted(role);
        }
        match role {
            Role::Observer => {
                g.sessions.insert(id, Some(Role::Observer));
                Claim::Granted(Role::Observer)
            }
            Role::Operator => match g.operator {
                Some(holder) => {
                    g.sessions.insert(id, Some(Role::Observer));
                    Claim::Conflict { holder }
                }
                None => {
                    g.operator = Some(id);
                    g.sessions.insert(id, Some(Role::Operator));
                    Claim::Granted(Role::Operator)
                }
            },
        }
    }

    /// Removes the session. Returns true when it held the operator role.
    pub fn close(&self, id: SessionId) -> bool {
        let mut g = self.inner.lock().expect("registry lock");
        g.sessions.remove(&id);
        if g.operator == Some(id) {
            g.operator = None;
            true
        } else {
            false
        }
    }

    pub fn role(&self, id: SessionId) -> Option<Role> {
        self.inner.lock().expect("registry lock").sessions.get(&id).copied().flatten()
    }

    pub fn operator(&self) -> Option<SessionId> {
        self.inner.lock().expect("registry lock").operator
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("registry lock").sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
