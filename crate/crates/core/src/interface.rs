//! The fixed universal interface set.
//!
//! Fifteen interface kinds are composed from fourteen methods. Components
//! may only provide or require ports typed by one of these kinds; there is
//! deliberately no way to declare a new one.

use core::fmt;
use core::str::FromStr;

/// One of the fourteen universal methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Method {
    Process,
    Perform,
    Operate,
    Find,
    Store,
    Discard,
    Empty,
    All,
    Keys,
    Begin,
    Commit,
    Rollback,
    Extend,
    About,
}

/// Name, parameters and result shape of a [`Method`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MethodSignature {
    pub method: Method,
    pub name: &'static str,
    pub params: &'static [&'static str],
    /// Trailing parameters that may be omitted (`all(prefix?)`).
    pub optional: usize,
    pub returns: &'static str,
}

impl MethodSignature {
    pub fn accepts_arity(&self, n: usize) -> bool {
        n <= self.params.len() && n + self.optional >= self.params.len()
    }
}

impl fmt::Display for MethodSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        let required = self.params.len() - self.optional;
        for (i, p) in self.params.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            f.write_str(p)?;
            if i >= required {
                f.write_str("?")?;
            }
        }
        write!(f, ") -> {}", self.returns)
    }
}

impl Method {
    pub const ALL: [Method; 14] = [
        Method::Process,
        Method::Perform,
        Method::Operate,
        Method::Find,
        Method::Store,
        Method::Discard,
        Method::Empty,
        Method::All,
        Method::Keys,
        Method::Begin,
        Method::Commit,
        Method::Rollback,
        Method::Extend,
        Method::About,
    ];

    pub fn signature(self) -> MethodSignature {
        let (name, params, optional, returns): (_, &'static [&'static str], _, _) = match self {
            Method::Process => ("process", &["in"], 0, "Value"),
            Method::Perform => ("perform", &["a", "b"], 0, "Value"),
            Method::Operate => ("operate", &["a", "b", "c"], 0, "Value"),
            Method::Find => ("find", &["key"], 0, "Value"),
            Method::Store => ("store", &["key", "value"], 0, "Null"),
            Method::Discard => ("discard", &["key"], 0, "Null"),
            Method::Empty => ("empty", &[], 0, "Null"),
            Method::All => ("all", &["prefix"], 1, "Table"),
            Method::Keys => ("keys", &["prefix"], 1, "Seq"),
            Method::Begin => ("begin", &[], 0, "Text"),
            Method::Commit => ("commit", &["token"], 0, "Null"),
            Method::Rollback => ("rollback", &["token"], 0, "Null"),
            Method::Extend => ("extend", &["name"], 0, "Port"),
            Method::About => ("about", &[], 0, "Rec"),
        };
        MethodSignature { method: self, name, params, optional, returns }
    }

    pub fn name(self) -> &'static str {
        self.signature().name
    }

    pub fn accepts_arity(self, n: usize) -> bool {
        self.signature().accepts_arity(n)
    }

    fn bit(self) -> u16 {
        1 << self as u8
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown name `{0}`")]
pub struct UnknownName(pub alloc::string::String);

impl FromStr for Method {
    type Err = UnknownName;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| UnknownName(s.into()))
    }
}

/// Compact set of [`Method`]s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct MethodSet(u16);

impl MethodSet {
    pub const EMPTY: MethodSet = MethodSet(0);

    pub fn of(methods: &[Method]) -> Self {
        methods.iter().fold(Self::EMPTY, |s, m| s.with(*m))
    }

    pub fn with(self, m: Method) -> Self {
        MethodSet(self.0 | m.bit())
    }

    pub fn union(self, other: MethodSet) -> Self {
        MethodSet(self.0 | other.0)
    }

    pub fn contains(self, m: Method) -> bool {
        self.0 & m.bit() != 0
    }

    pub fn is_superset(self, other: MethodSet) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = Method> {
        Method::ALL.into_iter().filter(move |m| self.contains(*m))
    }

    pub fn signatures(self) -> impl Iterator<Item = MethodSignature> {
        self.iter().map(Method::signature)
    }
}

impl core::ops::BitOr for MethodSet {
    type Output = MethodSet;

    fn bitor(self, rhs: MethodSet) -> MethodSet {
        self.union(rhs)
    }
}

/// One of the fifteen universal interface kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InterfaceKind {
    Processor,
    BiProcessor,
    TriProcessor,
    InputResource,
    OutputResource,
    Listable,
    Resource,
    ReadonlyListable,
    ListableResource,
    Transaction,
    TransactionResource,
    ListableTransaction,
    Extendable,
    Thing,
    Universal,
}

impl InterfaceKind {
    pub const ALL: [InterfaceKind; 15] = [
        InterfaceKind::Processor,
        InterfaceKind::BiProcessor,
        InterfaceKind::TriProcessor,
        InterfaceKind::InputResource,
        InterfaceKind::OutputResource,
        InterfaceKind::Listable,
        InterfaceKind::Resource,
        InterfaceKind::ReadonlyListable,
        InterfaceKind::ListableResource,
        InterfaceKind::Transaction,
        InterfaceKind::TransactionResource,
        InterfaceKind::ListableTransaction,
        InterfaceKind::Extendable,
        InterfaceKind::Thing,
        InterfaceKind::Universal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InterfaceKind::Processor => "Processor",
            InterfaceKind::BiProcessor => "BiProcessor",
            InterfaceKind::TriProcessor => "TriProcessor",
            InterfaceKind::InputResource => "InputResource",
            InterfaceKind::OutputResource => "OutputResource",
            InterfaceKind::Listable => "Listable",
            InterfaceKind::Resource => "Resource",
            InterfaceKind::ReadonlyListable => "ReadonlyListable",
            InterfaceKind::ListableResource => "ListableResource",
            InterfaceKind::Transaction => "Transaction",
            InterfaceKind::TransactionResource => "TransactionResource",
            InterfaceKind::ListableTransaction => "ListableTransaction",
            InterfaceKind::Extendable => "Extendable",
            InterfaceKind::Thing => "Thing",
            InterfaceKind::Universal => "Universal",
        }
    }

    /// Kinds this one is the union of; empty for the primitive kinds.
    pub fn parts(self) -> &'static [InterfaceKind] {
        use InterfaceKind::*;
        match self {
            Resource => &[InputResource, OutputResource],
            ReadonlyListable => &[InputResource, Listable],
            ListableResource => &[Resource, Listable],
            TransactionResource => &[Resource, Transaction],
            ListableTransaction => &[ListableResource, Transaction],
            Universal => &[
                Processor,
                BiProcessor,
                TriProcessor,
                InputResource,
                OutputResource,
                Listable,
                Transaction,
                Extendable,
                Thing,
            ],
            _ => &[],
        }
    }

    pub fn methods(self) -> MethodSet {
        use Method::*;
        match self {
            InterfaceKind::Processor => MethodSet::of(&[Process]),
            InterfaceKind::BiProcessor => MethodSet::of(&[Perform]),
            InterfaceKind::TriProcessor => MethodSet::of(&[Operate]),
            InterfaceKind::InputResource => MethodSet::of(&[Find]),
            InterfaceKind::OutputResource => MethodSet::of(&[Store, Discard, Empty]),
            InterfaceKind::Listable => MethodSet::of(&[All, Keys]),
            InterfaceKind::Transaction => MethodSet::of(&[Begin, Commit, Rollback]),
            InterfaceKind::Extendable => MethodSet::of(&[Extend]),
            InterfaceKind::Thing => MethodSet::of(&[About]),
            composed => composed
                .parts()
                .iter()
                .fold(MethodSet::EMPTY, |acc, p| acc | p.methods()),
        }
    }
}

impl fmt::Display for InterfaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InterfaceKind {
    type Err = UnknownName;

    /// Accepts the bare name (`Processor`) or the `I`-prefixed form
    /// (`IProcessor`).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bare = |n: &str| InterfaceKind::ALL.into_iter().find(|k| k.name() == n);
        bare(s)
            .or_else(|| s.strip_prefix('I').and_then(bare))
            .ok_or_else(|| UnknownName(s.into()))
    }
}

#[cfg(feature = "serde")]
impl serde::Serialize for InterfaceKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

#[cfg(feature = "serde")]
impl<'de> serde::Deserialize<'de> for InterfaceKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = <alloc::string::String as serde::Deserialize>::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Canonical method set of `kind`.
pub fn methods_of(kind: InterfaceKind) -> MethodSet {
    kind.methods()
}

/// Anything that can be asked whether it answers a method.
pub trait Endpoint {
    fn answers(&self, method: Method) -> bool;
}

/// True iff `endpoint` answers every method of `kind`.
pub fn conforms<E: Endpoint + ?Sized>(endpoint: &E, kind: InterfaceKind) -> bool {
    kind.methods().iter().all(|m| endpoint.answers(m))
}
