//! Connections between instance ports and the adapters running on them.
//!
//! A connection binds a required port of one instance to a provided port
//! of another. All of its mutable routing lives in one [`Link`] behind a
//! single pointer, so a rebind or adapter reload is one atomic switch:
//! a concurrent invoker sees either the old link or the new one.

use std::sync::Arc;

use eight_core::{InterfaceKind, Method, Value};
use parking_lot::RwLock;
use serde::Serialize;

use crate::component::Wiring;
use crate::config::{AdapterSource, AdapterSpec, ConnectionConfig, PortAddr};
use crate::container::instance::Instance;
use crate::error::{Result, RuntimeError};
use crate::script::AdapterScript;

pub enum AdapterBody {
    Script(AdapterScript),
    /// Private instance of a packaged adapter component; calls enter its
    /// first provided port and its `next` requirement is the downstream.
    Component(Arc<Instance>),
}

pub struct Adapter {
    pub spec: AdapterSpec,
    pub(crate) body: AdapterBody,
}

impl Adapter {
    pub fn kind_name(&self) -> &'static str {
        match self.spec.source {
            AdapterSource::Component(_) => "component",
            _ => "script",
        }
    }
}

/// Routing state of a connection at one point in time.
pub struct Link {
    pub from_kind: InterfaceKind,
    pub to: PortAddr,
    pub to_kind: InterfaceKind,
    pub target: Arc<Instance>,
    pub adapter: Option<Arc<Adapter>>,
}

/// Direct routes require equal kinds; an adapter may bridge any pair.
pub fn check_kinds(connection: &str, from: InterfaceKind, to: InterfaceKind, adapted: bool) -> Result<()> {
    if adapted || from == to {
        Ok(())
    } else {
        Err(RuntimeError::KindMismatch { connection: connection.into(), from: from.to_string(), to: to.to_string() })
    }
}

pub struct Connection {
    pub id: String,
    pub from: PortAddr,
    link: RwLock<Arc<Link>>,
}

impl Connection {
    pub(crate) fn new(id: String, from: PortAddr, link: Link) -> Self {
        Connection { id, from, link: RwLock::new(Arc::new(link)) }
    }

    /// The current link. Invokers take one snapshot per hop.
    pub fn link(&self) -> Arc<Link> {
        self.link.read().clone()
    }

    /// Swaps in `link`, returning the previous one.
    pub(crate) fn switch(&self, link: Link) -> Arc<Link> {
        std::mem::replace(&mut *self.link.write(), Arc::new(link))
    }

    pub fn config(&self) -> ConnectionConfig {
        let l = self.link();
        ConnectionConfig::new(&self.id, self.from.clone(), l.to.clone(), l.adapter.as_ref().map(|a| a.spec.clone()))
    }

    pub fn info(&self) -> ConnectionInfo {
        let l = self.link();
        ConnectionInfo {
            id: self.id.clone(),
            from: self.from.to_string(),
            to: l.to.to_string(),
            from_kind: l.from_kind,
            to_kind: l.to_kind,
            target_generation: l.target.generation,
            adapter: l.adapter.as_ref().map(|a| AdapterInfo {
                kind: a.kind_name(),
                spec: serde_json::to_value(&a.spec).unwrap_or_default(),
            }),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AdapterInfo {
    pub kind: &'static str,
    pub spec: serde_json::Value,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConnectionInfo {
    pub id: String,
    pub from: String,
    pub to: String,
    pub from_kind: InterfaceKind,
    pub to_kind: InterfaceKind,
    pub target_generation: u64,
    pub adapter: Option<AdapterInfo>,
}

/// `next` as seen by an adapter: always the connection's current target,
/// read afresh on every call.
pub(crate) struct NextWiring<F> {
    pub(crate) forward: F,
}

impl<F> Wiring for NextWiring<F>
where
    F: Fn(Method, Vec<Value>) -> Result<Value> + Send + Sync,
{
    fn call(&self, port: &str, method: Method, args: Vec<Value>) -> Result<Value> {
        if port != "next" {
            return Err(RuntimeError::UnknownEndpoint(format!("adapter endpoint `{port}`")));
        }
        (self.forward)(method, args)
    }
}
