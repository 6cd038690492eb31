//! Impact-scope analysis.
//!
//! An application is a set of modules and a module is a set of services.
//! Rules registered per change context say which service changes cause
//! which others. From a set of changed services the [`impact_closure`]
//! gives everything that ends up changed; projecting that onto modules gives
//! the impact scope, and from the scope follow the independence
//! certifications in [`certify`].

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

mod certify;
mod closure;
mod model;

pub use certify::{
    certify, is_absolutely_independent, is_completely_independent, is_ideal_system, is_independent,
    Certification, ModuleVerdict, PairVerdict, Witness,
};
pub use closure::{direct_impact, impact_closure, impact_closure_traced, scope, Closure};
pub use model::{AppSpec, ModelSpec, ModuleSpec, Projection, RuleSpec, SystemModel};

/// The reserved service name every module carries.
pub const SELF_SERVICE: &str = "self";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IsmError {
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("rule references unknown service `{0}`")]
    DanglingRuleReference(String),
    #[error("unknown id `{0}`")]
    UnknownId(String),
    #[error("malformed id `{0}`")]
    InvalidId(String),
    #[error("unknown change context `{0}` (expected s, r or o)")]
    UnknownContext(String),
    #[error("rule {index} in context `{context}` has an empty premise or consequence")]
    EmptyRule { context: char, index: usize },
    #[error("service `{service}` does not belong to module `{module}`")]
    NotInModule { service: String, module: String },
    #[error("a module cannot be compared with itself (`{0}`)")]
    SameModule(String),
    #[error("projection {0} expects {1} ids")]
    WrongIdLevel(&'static str, &'static str),
}

pub(crate) fn valid_name(s: &str) -> bool {
    !s.is_empty() && !s.contains('.') && !s.chars().any(char::is_whitespace)
}

/// Application identifier.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AppId(pub String);

impl AppId {
    pub fn new(name: impl Into<String>) -> Self {
        AppId(name.into())
    }
}

impl fmt::Display for AppId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// `app.module`
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ModuleId {
    pub app: String,
    pub module: String,
}

impl ModuleId {
    pub fn new(app: impl Into<String>, module: impl Into<String>) -> Self {
        ModuleId { app: app.into(), module: module.into() }
    }

    pub fn app_id(&self) -> AppId {
        AppId(self.app.clone())
    }

    pub fn service(&self, name: impl Into<String>) -> ServiceId {
        ServiceId { app: self.app.clone(), module: self.module.clone(), service: name.into() }
    }

    /// The reserved `self` service of this module.
    pub fn self_service(&self) -> ServiceId {
        self.service(SELF_SERVICE)
    }
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.app, self.module)
    }
}

impl FromStr for ModuleId {
    type Err = IsmError;

    fn from_str(s: &str) -> Result<Self, IsmError> {
        match s.split('.').collect::<Vec<_>>()[..] {
            [a, m] if valid_name(a) && valid_name(m) => Ok(ModuleId::new(a, m)),
            _ => Err(IsmError::InvalidId(s.to_string())),
        }
    }
}

/// `app.module.service`
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ServiceId {
    pub app: String,
    pub module: String,
    pub service: String,
}

impl ServiceId {
    pub fn new(app: impl Into<String>, module: impl Into<String>, service: impl Into<String>) -> Self {
        ServiceId { app: app.into(), module: module.into(), service: service.into() }
    }

    pub fn module_id(&self) -> ModuleId {
        ModuleId::new(self.app.clone(), self.module.clone())
    }

    pub fn is_self(&self) -> bool {
        self.service == SELF_SERVICE
    }
}

impl fmt::Display for ServiceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}.{}", self.app, self.module, self.service)
    }
}

impl FromStr for ServiceId {
    type Err = IsmError;

    fn from_str(s: &str) -> Result<Self, IsmError> {
        match s.split('.').collect::<Vec<_>>()[..] {
            [a, m, n] if valid_name(a) && valid_name(m) && valid_name(n) => Ok(ServiceId::new(a, m, n)),
            _ => Err(IsmError::InvalidId(s.to_string())),
        }
    }
}

/// Any of the three id levels, for the generic [`SystemModel::project`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityId {
    App(AppId),
    Module(ModuleId),
    Service(ServiceId),
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EntityId::App(a) => a.fmt(f),
            EntityId::Module(m) => m.fmt(f),
            EntityId::Service(s) => s.fmt(f),
        }
    }
}

/// Category of a change event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ChangeContext {
    /// Code, interface and structural changes (`s`).
    Static,
    /// Failures, restarts and state loss while running (`r`).
    Runtime,
    /// Rebuilds, redeployments and process/organisational effects (`o`).
    NonRuntime,
}

impl ChangeContext {
    pub const ALL: [ChangeContext; 3] =
        [ChangeContext::Static, ChangeContext::Runtime, ChangeContext::NonRuntime];

    pub fn code(self) -> char {
        match self {
            ChangeContext::Static => 's',
            ChangeContext::Runtime => 'r',
            ChangeContext::NonRuntime => 'o',
        }
    }

    fn bit(self) -> u8 {
        match self {
            ChangeContext::Static => 1,
            ChangeContext::Runtime => 2,
            ChangeContext::NonRuntime => 4,
        }
    }
}

impl fmt::Display for ChangeContext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

impl FromStr for ChangeContext {
    type Err = IsmError;

    fn from_str(s: &str) -> Result<Self, IsmError> {
        match s {
            "s" => Ok(ChangeContext::Static),
            "r" => Ok(ChangeContext::Runtime),
            "o" => Ok(ChangeContext::NonRuntime),
            other => Err(IsmError::UnknownContext(other.to_string())),
        }
    }
}

/// A subset of `{s, r, o}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ContextSet(u8);

impl ContextSet {
    pub const EMPTY: ContextSet = ContextSet(0);

    pub fn of(contexts: &[ChangeContext]) -> Self {
        contexts.iter().fold(Self::EMPTY, |s, c| s.with(*c))
    }

    pub fn with(self, c: ChangeContext) -> Self {
        ContextSet(self.0 | c.bit())
    }

    pub fn contains(self, c: ChangeContext) -> bool {
        self.0 & c.bit() != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = ChangeContext> {
        ChangeContext::ALL.into_iter().filter(move |c| self.contains(*c))
    }

    /// Every non-empty subset, smallest first.
    pub fn non_empty_subsets(self) -> impl Iterator<Item = ContextSet> {
        let bits = self.0;
        let mut subsets: Vec<ContextSet> =
            (1u8..8).filter(|s| s & !bits == 0).map(ContextSet).collect();
        subsets.sort_by_key(|s| (s.0.count_ones(), s.0));
        subsets.into_iter()
    }
}

impl fmt::Display for ContextSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, c) in self.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{c}")?;
        }
        f.write_str("}")
    }
}

impl FromStr for ContextSet {
    type Err = IsmError;

    /// Parses a comma-separated list such as `s,o`.
    fn from_str(s: &str) -> Result<Self, IsmError> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .try_fold(ContextSet::EMPTY, |acc, p| Ok(acc.with(p.parse()?)))
    }
}

/// `c(premise) -> c(consequence)`: when every premise service has changed,
/// every consequence service changes too.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Rule {
    pub premise: BTreeSet<ServiceId>,
    pub consequence: BTreeSet<ServiceId>,
}

impl Rule {
    pub fn new(
        premise: impl IntoIterator<Item = ServiceId>,
        consequence: impl IntoIterator<Item = ServiceId>,
    ) -> Self {
        Rule { premise: premise.into_iter().collect(), consequence: consequence.into_iter().collect() }
    }

    /// `from -> to` with single-service premise and consequence.
    pub fn single(from: ServiceId, to: ServiceId) -> Self {
        Rule::new([from], [to])
    }

    pub fn services(&self) -> impl Iterator<Item = &ServiceId> {
        self.premise.iter().chain(self.consequence.iter())
    }
}

/// Set of changed services.
pub type ChangeSet = BTreeSet<ServiceId>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn id_parsing() {
        let s: ServiceId = "search.Document.allFiles".parse().unwrap();
        assert_eq!(s.module_id(), ModuleId::new("search", "Document"));
        assert_eq!(s.to_string(), "search.Document.allFiles");
        assert!("search.Document".parse::<ServiceId>().is_err());
        assert!("a..b".parse::<ServiceId>().is_err());
        assert!("a.b.c.d".parse::<ServiceId>().is_err());
        assert!("search.Document".parse::<ModuleId>().is_ok());
    }

    #[test]
    fn context_sets() {
        let x: ContextSet = "s, o".parse().unwrap();
        assert!(x.contains(ChangeContext::Static));
        assert!(!x.contains(ChangeContext::Runtime));
        assert_eq!(x.to_string(), "{s,o}");
        let subsets: Vec<_> = x.non_empty_subsets().map(|s| s.to_string()).collect();
        assert_eq!(subsets, ["{s}", "{o}", "{s,o}"]);
        assert_eq!(ContextSet::EMPTY.non_empty_subsets().count(), 0);
        assert!("s,x".parse::<ContextSet>().is_err());
    }
}
