use std::sync::atomic::{AtomicU64, AtomicU8, AtomicUsize, Ordering::SeqCst};
use std::sync::Arc;
use std::time::{Duration, Instant};

use eight_core::{InterfaceKind, Method, Value};
use parking_lot::{Condvar, Mutex};
use serde::Serialize;

use crate::component::{Behavior, Component, Env};
use crate::config::InstanceConfig;
use crate::error::{Result, RuntimeError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InstanceState {
    Loaded,
    Active,
    Draining,
    Released,
}

impl InstanceState {
    fn from_u8(v: u8) -> Self {
        match v {
            0 => InstanceState::Loaded,
            1 => InstanceState::Active,
            2 => InstanceState::Draining,
            _ => InstanceState::Released,
        }
    }
}

/// One generation of a live instance.
///
/// A swap replaces the instance registered under an id by a new
/// generation; the old one drains and is released.
pub struct Instance {
    pub id: String,
    pub generation: u64,
    pub component: Arc<Component>,
    pub config: InstanceConfig,
    pub(crate) behavior: Arc<dyn Behavior>,
    pub(crate) env: Env,
    state: AtomicU8,
    in_flight: AtomicUsize,
    served: AtomicU64,
    drained: (Mutex<()>, Condvar),
}

/// Holds one unit of `in_flight` for the duration of a call.
pub(crate) struct Admission<'a>(&'a Instance);

impl Drop for Admission<'_> {
    fn drop(&mut self) {
        if self.0.in_flight.fetch_sub(1, SeqCst) == 1 && self.0.state() == InstanceState::Draining {
            let _g = self.0.drained.0.lock();
            self.0.drained.1.notify_all();
        }
    }
}

impl Instance {
    pub(crate) fn new(
        config: InstanceConfig,
        generation: u64,
        component: Arc<Component>,
        behavior: Arc<dyn Behavior>,
        env: Env,
    ) -> Self {
        Instance {
            id: config.id.clone(),
            generation,
            component,
            config,
            behavior,
            env,
            state: AtomicU8::new(InstanceState::Loaded as u8),
            in_flight: AtomicUsize::new(0),
            served: AtomicU64::new(0),
            drained: (Mutex::new(()), Condvar::new()),
        }
    }

    pub fn state(&self) -> InstanceState {
        InstanceState::from_u8(self.state.load(SeqCst))
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.load(SeqCst)
    }

    /// Completed calls.
    pub fn served(&self) -> u64 {
        self.served.load(SeqCst)
    }

    pub fn subject(&self) -> String {
        format!("{}#{}", self.id, self.generation)
    }

    fn transition(&self, from: InstanceState, to: InstanceState) -> Result<()> {
        self.state.compare_exchange(from as u8, to as u8, SeqCst, SeqCst).map(drop).map_err(|cur| {
            RuntimeError::IllegalState {
                subject: self.subject(),
                reason: format!("cannot go from {:?} to {to:?}", InstanceState::from_u8(cur)),
            }
        })
    }

    pub(crate) fn activate(&self) -> Result<()> {
        self.transition(InstanceState::Loaded, InstanceState::Active)
    }

    pub(crate) fn start_draining(&self) -> Result<()> {
        self.transition(InstanceState::Active, InstanceState::Draining)
    }

    pub(crate) fn release(&self) -> Result<()> {
        self.transition(InstanceState::Draining, InstanceState::Released)
    }

    /// Counts the caller in, or refuses when the instance is not Active.
    ///
    /// The count is raised before the state is read. A drainer sets the
    /// state before it reads the count, so either it sees this call or
    /// this call sees Draining.
    pub(crate) fn admit(&self) -> Option<Admission<'_>> {
        self.in_flight.fetch_add(1, SeqCst);
        let guard = Admission(self);
        (self.state() == InstanceState::Active).then_some(guard)
    }

    /// Waits for `in_flight` to reach zero. False on timeout.
    pub(crate) fn wait_drained(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut g = self.drained.0.lock();
        while self.in_flight() > 0 {
            if self.drained.1.wait_until(&mut g, deadline).timed_out() {
                return self.in_flight() == 0;
            }
        }
        true
    }

    pub fn provided_kind(&self, port: &str) -> Option<InterfaceKind> {
        self.component.descriptor.provided(port)
    }

    pub fn required_kind(&self, port: &str) -> Option<InterfaceKind> {
        self.component.descriptor.required(port)
    }

    /// Whether `port` answers `method`; `about` always is.
    pub fn answers(&self, port: &str, method: Method) -> bool {
        method == Method::About || (self.provided_kind(port).is_some() && self.behavior.answers(port, method))
    }

    /// Runs a call already admitted with [`Instance::admit`].
    pub(crate) fn execute(&self, _admitted: &Admission<'_>, port: &str, method: Method, mut args: Vec<Value>) -> Result<Value> {
        let kind = self.provided_kind(port).ok_or_else(|| RuntimeError::UnknownPort(format!("{}:{port}", self.id)))?;
        let sig = method.signature();
        if !(kind.methods().contains(method) || method == Method::About) || !sig.accepts_arity(args.len()) {
            return Err(RuntimeError::NoSuchMethod {
                port: format!("{}:{port} ({kind})", self.id),
                method: format!("{}/{}", method.name(), args.len()),
            });
        }
        args.resize(sig.params.len(), Value::Null);
        let out = if method == Method::About {
            Ok(self.about(port, kind))
        } else {
            self.behavior.call(port, method, args, &self.env)
        };
        self.served.fetch_add(1, SeqCst);
        out
    }

    fn about(&self, port: &str, kind: InterfaceKind) -> Value {
        let d = &self.component.descriptor;
        let mut fields = std::collections::BTreeMap::from([
            ("instance".to_string(), Value::from(self.id.as_str())),
            ("generation".to_string(), Value::Int(self.generation as i64)),
            ("component".to_string(), Value::from(d.component_id.as_str())),
            ("version".to_string(), Value::from(d.version.as_str())),
            ("port".to_string(), Value::from(port)),
            ("kind".to_string(), Value::from(kind.name())),
            ("state".to_string(), Value::from(format!("{:?}", self.state()))),
        ]);
        let extra = if self.behavior.answers(port, Method::About) {
            self.behavior.call(port, Method::About, vec![], &self.env).ok()
        } else {
            self.behavior.about(port, &self.env)
        };
        if let Some(Value::Rec(extra)) = extra {
            fields.extend(extra);
        }
        Value::Rec(fields)
    }
}
