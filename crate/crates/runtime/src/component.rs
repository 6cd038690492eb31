//! What runs inside an instance.
//!
//! A loaded component is a descriptor plus a payload. Instantiating it
//! yields a [`Behavior`], which answers method calls on the component's
//! provided ports. Everything an instance may touch outside itself is
//! reached through its [`Env`]: parameters, a log channel, and required
//! ports (which the linker resolves to connections).

use std::sync::Arc;

use eight_core::{Method, Value};

use crate::builtins;
use crate::error::{Result, RuntimeError};
use crate::manifest::{Artifact, ComponentDescriptor, Package};
use crate::script::{ScriptHost, ScriptModule};

/// Resolves a required port name to whatever is currently bound to it.
pub trait Wiring: Send + Sync {
    fn call(&self, port: &str, method: Method, args: Vec<Value>) -> Result<Value>;
}

/// In-module environment of one instance.
#[derive(Clone)]
pub struct Env {
    pub instance: String,
    pub params: Value,
    pub log_level: log::LevelFilter,
    pub max_operations: Option<u64>,
    pub wiring: Arc<dyn Wiring>,
}

impl Env {
    pub fn param(&self, name: &str) -> Option<&Value> {
        self.params.get(name)
    }

    pub fn call(&self, port: &str, method: Method, args: Vec<Value>) -> Result<Value> {
        self.wiring.call(port, method, args)
    }

    pub fn log(&self, level: log::Level, message: &str) {
        if level <= self.log_level {
            log::log!(target: "eight::instance", level, "[{}] {}", self.instance, message);
        }
    }

    /// An application-level failure attributed to this instance.
    pub fn fault(&self, code: &str, message: impl Into<String>) -> RuntimeError {
        RuntimeError::InstanceFault { instance: self.instance.clone(), code: code.into(), message: message.into() }
    }
}

pub trait Behavior: Send + Sync {
    /// Whether `port` has an implementation of `method`. Must not change
    /// over the instance's lifetime.
    fn answers(&self, port: &str, method: Method) -> bool;

    /// Runs `method` on `port`. Optional trailing arguments arrive as
    /// `Null`, so `args` always has the method's full parameter count.
    fn call(&self, port: &str, method: Method, args: Vec<Value>, env: &Env) -> Result<Value>;

    /// Fields merged into the host's `about()` answer.
    fn about(&self, _port: &str, _env: &Env) -> Option<Value> {
        None
    }
}

pub type Factory = fn(&ComponentDescriptor, &Env) -> Result<Arc<dyn Behavior>>;

pub(crate) enum Payload {
    Script(Arc<ScriptModule>),
    Builtin(Factory),
}

/// A component in the repository.
pub struct Component {
    pub descriptor: ComponentDescriptor,
    pub digest: String,
    pub(crate) payload: Payload,
}

impl Component {
    /// Compiles or looks up the payload. Script components must implement
    /// every method of every provided port.
    pub fn load(pkg: Package, host: &ScriptHost) -> Result<Component> {
        let name = pkg.descriptor.reference().to_string();
        let fail = |reason: String| RuntimeError::PayloadLoadFailure { component: name.clone(), reason };
        let payload = match &pkg.descriptor.artifact {
            Artifact::Script { entry } => {
                let src = pkg.payload.as_deref().ok_or_else(|| fail(format!("payload `{entry}` missing")))?;
                let module = host.compile_module(src).map_err(fail)?;
                for port in &pkg.descriptor.provides {
                    let missing: Vec<_> =
                        port.kind.methods().iter().filter(|m| *m != Method::About && !module.implements(&port.name, *m)).collect();
                    if !missing.is_empty() {
                        let names: Vec<_> = missing.iter().map(|m| m.signature().to_string()).collect();
                        return Err(fail(format!("port `{}` ({}) lacks {}", port.name, port.kind, names.join(", "))));
                    }
                }
                Payload::Script(Arc::new(module))
            }
            Artifact::Builtin { factory } => {
                Payload::Builtin(builtins::factory(factory).ok_or_else(|| fail(format!("no builtin factory `{factory}`")))?)
            }
        };
        Ok(Component { descriptor: pkg.descriptor, digest: pkg.digest, payload })
    }

    pub fn kind_name(&self) -> &'static str {
        match self.payload {
            Payload::Script(_) => "script",
            Payload::Builtin(_) => "builtin",
        }
    }

    pub(crate) fn behavior(&self, env: &Env, host: &Arc<ScriptHost>) -> Result<Arc<dyn Behavior>> {
        let behavior: Arc<dyn Behavior> = match &self.payload {
            Payload::Script(module) => Arc::new(ScriptBehavior { module: module.clone(), host: host.clone() }),
            Payload::Builtin(factory) => factory(&self.descriptor, env)?,
        };
        for port in &self.descriptor.provides {
            if let Some(m) = port.kind.methods().iter().find(|m| *m != Method::About && !behavior.answers(&port.name, *m)) {
                return Err(RuntimeError::PayloadLoadFailure {
                    component: self.descriptor.reference().to_string(),
                    reason: format!("port `{}` does not answer {m}", port.name),
                });
            }
        }
        Ok(behavior)
    }
}

struct ScriptBehavior {
    module: Arc<ScriptModule>,
    host: Arc<ScriptHost>,
}

impl Behavior for ScriptBehavior {
    fn answers(&self, port: &str, method: Method) -> bool {
        self.module.implements(port, method)
    }

    fn call(&self, port: &str, method: Method, args: Vec<Value>, env: &Env) -> Result<Value> {
        let name = self.module.function_for(port, method).ok_or_else(|| RuntimeError::NoSuchMethod {
            port: format!("{}:{port}", env.instance),
            method: method.name().into(),
        })?;
        self.host.call_component(&self.module, name, args, env)
    }
}
