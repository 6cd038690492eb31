use std::path::PathBuf;

use eight_core::ism::IsmError;

/// Every failure the container, linker and control plane can report.
///
/// [`RuntimeError::code`] is the stable machine-readable name used on the
/// wire; each variant has exactly one.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RuntimeError {
    #[error("cannot read directory {path}: {reason}")]
    UnreadableDirectory { path: PathBuf, reason: String },
    #[error("malformed manifest {file}: {reason}")]
    MalformedManifest { file: String, reason: String },
    #[error("payload of {component} failed to load: {reason}")]
    PayloadLoadFailure { component: String, reason: String },
    #[error("unknown component {0}")]
    UnknownComponent(String),
    #[error("invalid configuration field `{field}`: {reason}")]
    ConfigValidation { field: String, reason: String },
    #[error("instance {0} already exists")]
    DuplicateInstanceId(String),
    #[error("connection {0} already exists")]
    DuplicateConnectionId(String),
    #[error("unknown id {0}")]
    UnknownId(String),
    #[error("unknown endpoint {0}")]
    UnknownEndpoint(String),
    #[error("unknown port {0}")]
    UnknownPort(String),
    #[error("port {port} has no method {method}")]
    NoSuchMethod { port: String, method: String },
    #[error("{target} is not accepting requests")]
    TargetUnavailable { target: String },
    #[error("instance {instance} faulted: {message}")]
    InstanceFault { instance: String, code: String, message: String },
    #[error("rebind plan misses connections: {}", missing.join(", "))]
    RebindIncomplete { missing: Vec<String> },
    #[error("kind mismatch on {connection}: {from} cannot reach {to} without an adapter")]
    KindMismatch { connection: String, from: String, to: String },
    #[error("adapter on {connection} failed: {message}")]
    AdapterFault { connection: String, message: String },
    #[error("adapter does not compile: {0}")]
    AdapterCompileError(String),
    #[error("{subject}: {reason}")]
    IllegalState { subject: String, reason: String },
    #[error("cursor {cursor} is older than the oldest retained event {oldest}")]
    CursorTooOld { cursor: u64, oldest: u64 },
    #[error(transparent)]
    Ism(#[from] IsmError),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("cannot bind {addr}: {reason}")]
    BindFailure { addr: String, reason: String },
}

impl RuntimeError {
    pub fn code(&self) -> &'static str {
        use RuntimeError::*;
        match self {
            UnreadableDirectory { .. } => "UnreadableDirectory",
            MalformedManifest { .. } => "MalformedManifest",
            PayloadLoadFailure { .. } => "PayloadLoadFailure",
            UnknownComponent(_) => "UnknownComponent",
            ConfigValidation { .. } => "ConfigValidation",
            DuplicateInstanceId(_) => "DuplicateInstanceId",
            DuplicateConnectionId(_) => "DuplicateConnectionId",
            UnknownId(_) => "UnknownId",
            UnknownEndpoint(_) => "UnknownEndpoint",
            UnknownPort(_) => "UnknownPort",
            NoSuchMethod { .. } => "NoSuchMethod",
            TargetUnavailable { .. } => "TargetUnavailable",
            InstanceFault { .. } => "InstanceFault",
            RebindIncomplete { .. } => "RebindIncomplete",
            KindMismatch { .. } => "KindMismatch",
            AdapterFault { .. } => "AdapterFault",
            AdapterCompileError(_) => "AdapterCompileError",
            IllegalState { .. } => "IllegalState",
            CursorTooOld { .. } => "CursorTooOld",
            Ism(e) => match e {
                IsmError::DuplicateId(_) => "DuplicateId",
                IsmError::DanglingRuleReference(_) => "DanglingRuleReference",
                IsmError::UnknownId(_) => "UnknownId",
                IsmError::InvalidId(_) => "InvalidId",
                IsmError::UnknownContext(_) => "UnknownContext",
                IsmError::EmptyRule { .. } => "EmptyRule",
                IsmError::NotInModule { .. } => "NotInModule",
                IsmError::SameModule(_) => "SameModule",
                IsmError::WrongIdLevel(..) => "WrongIdLevel",
            },
            BadRequest(_) => "BadRequest",
            Io(_) => "Io",
            BindFailure { .. } => "BindFailure",
        }
    }

    /// HTTP status the control plane answers with.
    pub fn status(&self) -> u16 {
        use RuntimeError::*;
        match self {
            UnknownComponent(_) | UnknownId(_) | UnknownEndpoint(_) | UnknownPort(_) => 404,
            Ism(IsmError::UnknownId(_)) => 404,
            DuplicateInstanceId(_) | DuplicateConnectionId(_) | IllegalState { .. } => 409,
            CursorTooOld { .. } => 410,
            InstanceFault { .. } | AdapterFault { .. } => 502,
            TargetUnavailable { .. } => 503,
            UnreadableDirectory { .. } | Io(_) | BindFailure { .. } => 500,
            _ => 400,
        }
    }

    /// The id the error is about, when there is one.
    pub fn subject(&self) -> Option<String> {
        use RuntimeError::*;
        match self {
            MalformedManifest { file, .. } => Some(file.clone()),
            PayloadLoadFailure { component, .. } => Some(component.clone()),
            UnknownComponent(s) | DuplicateInstanceId(s) | DuplicateConnectionId(s) | UnknownId(s) => Some(s.clone()),
            UnknownEndpoint(s) | UnknownPort(s) => Some(s.clone()),
            ConfigValidation { field, .. } => Some(field.clone()),
            NoSuchMethod { port, .. } => Some(port.clone()),
            TargetUnavailable { target } => Some(target.clone()),
            InstanceFault { instance, .. } => Some(instance.clone()),
            KindMismatch { connection, .. } | AdapterFault { connection, .. } => Some(connection.clone()),
            IllegalState { subject, .. } => Some(subject.clone()),
            _ => None,
        }
    }

    /// True for errors raised by the platform itself rather than by
    /// application code or the caller's input.
    pub fn is_lifecycle(&self) -> bool {
        matches!(self, RuntimeError::TargetUnavailable { .. } | RuntimeError::UnknownEndpoint(_))
    }
}

impl From<std::io::Error> for RuntimeError {
    fn from(e: std::io::Error) -> Self {
        RuntimeError::Io(e.to_string())
    }
}

pub type Result<T, E = RuntimeError> = std::result::Result<T, E>;
