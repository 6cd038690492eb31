//! Component manifests and `.pkg` packages.
//!
//! A package is a tar archive holding `component.json` and, for script
//! components, the payload file it names. See `docs/manifest.md`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use eight_core::{InterfaceKind, Value};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Result, RuntimeError};
use crate::json;

pub const MANIFEST_NAME: &str = "component.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentDescriptor {
    pub component_id: String,
    pub version: String,
    pub artifact: Artifact,
    pub provides: Vec<PortDecl>,
    #[serde(default)]
    pub requires: Vec<PortDecl>,
    #[serde(default)]
    pub config_schema: BTreeMap<String, FieldSchema>,
    /// Instances this component calls without going through a connection.
    /// Only ever set on deliberately non-conforming test components.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub backdoors: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Artifact {
    /// Sandboxed script loaded from the package.
    Script { entry: String },
    /// Host-native factory compiled into the runtime.
    Builtin { factory: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortDecl {
    pub name: String,
    pub kind: InterfaceKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSchema {
    #[serde(rename = "type", default)]
    pub ty: FieldType,
    #[serde(default)]
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldType {
    #[default]
    Any,
    Bool,
    Int,
    Float,
    Text,
    Bytes,
    Seq,
    Rec,
    Table,
}

impl FieldType {
    fn admits(self, v: &Value) -> bool {
        match self {
            FieldType::Any => true,
            FieldType::Float => matches!(v, Value::Float(_) | Value::Int(_)),
            _ => format!("{self:?}").eq_ignore_ascii_case(v.type_name()),
        }
    }
}

/// `id@version`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ComponentRef {
    pub id: String,
    pub version: String,
}

impl ComponentRef {
    pub fn new(id: impl Into<String>, version: impl Into<String>) -> Self {
        ComponentRef { id: id.into(), version: version.into() }
    }
}

impl fmt::Display for ComponentRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.id, self.version)
    }
}

impl FromStr for ComponentRef {
    type Err = RuntimeError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || RuntimeError::BadRequest(format!("`{s}` is not of the form id@version"));
        let (id, version) = s.split_once('@').ok_or_else(bad)?;
        if !valid_id(id) || !valid_version(version) {
            return Err(bad());
        }
        Ok(ComponentRef::new(id, version))
    }
}

impl Serialize for ComponentRef {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ComponentRef {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Lowercase ascii, digits, `-` and `_`; no dots.
pub fn valid_id(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 64
        && s.starts_with(|c: char| c.is_ascii_lowercase() || c.is_ascii_digit())
        && s.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-' || c == '_')
}

/// `major.minor.patch` with an optional `-prerelease` of id characters.
pub fn valid_version(s: &str) -> bool {
    let (core, pre) = match s.split_once('-') {
        Some((c, p)) => (c, Some(p)),
        None => (s, None),
    };
    let nums: Vec<&str> = core.split('.').collect();
    nums.len() == 3
        && nums.iter().all(|n| !n.is_empty() && n.chars().all(|c| c.is_ascii_digit()))
        && pre.is_none_or(valid_id)
}

pub fn valid_port_name(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') && s != "self"
}

impl ComponentDescriptor {
    pub fn reference(&self) -> ComponentRef {
        ComponentRef::new(&self.component_id, &self.version)
    }

    pub fn provided(&self, port: &str) -> Option<InterfaceKind> {
        self.provides.iter().find(|p| p.name == port).map(|p| p.kind)
    }

    pub fn required(&self, port: &str) -> Option<InterfaceKind> {
        self.requires.iter().find(|p| p.name == port).map(|p| p.kind)
    }

    pub fn validate(&self, file: &str) -> Result<()> {
        let bad = |reason: String| RuntimeError::MalformedManifest { file: file.to_string(), reason };
        if !valid_id(&self.component_id) {
            return Err(bad(format!("component_id `{}` must be lowercase without dots", self.component_id)));
        }
        if !valid_version(&self.version) {
            return Err(bad(format!("version `{}` is not major.minor.patch", self.version)));
        }
        if self.provides.is_empty() {
            return Err(bad("provides must name at least one port".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in self.provides.iter().chain(&self.requires) {
            if !valid_port_name(&p.name) {
                return Err(bad(format!("invalid port name `{}`", p.name)));
            }
            if !seen.insert(&p.name) {
                return Err(bad(format!("port `{}` declared twice", p.name)));
            }
        }
        for (field, schema) in &self.config_schema {
            if let Some(d) = &schema.default {
                let v = json::from_json(d).map_err(|e| bad(e.to_string()))?;
                if !schema.ty.admits(&v) {
                    return Err(bad(format!("default of `{field}` is not {:?}", schema.ty)));
                }
            }
        }
        Ok(())
    }

    /// Checks `params` (a `Rec`) against `config_schema` and fills defaults.
    pub fn validate_params(&self, params: &Value) -> Result<Value> {
        let invalid = |field: &str, reason: String| RuntimeError::ConfigValidation { field: field.to_string(), reason };
        let mut fields = match params {
            Value::Null => BTreeMap::new(),
            Value::Rec(r) => r.clone(),
            other => return Err(invalid("params", format!("expected a record, found {}", other.type_name()))),
        };
        if !self.config_schema.is_empty() {
            if let Some(extra) = fields.keys().find(|k| !self.config_schema.contains_key(*k)) {
                return Err(invalid(extra, "not declared in config_schema".into()));
            }
        }
        for (name, schema) in &self.config_schema {
            match fields.get(name) {
                Some(v) if !schema.ty.admits(v) => {
                    return Err(invalid(name, format!("expected {:?}, found {}", schema.ty, v.type_name())));
                }
                Some(_) => {}
                None => match &schema.default {
                    Some(d) => {
                        fields.insert(name.clone(), json::from_json(d).map_err(|e| invalid(name, e.to_string()))?);
                    }
                    None if schema.required => return Err(invalid(name, "required".into())),
                    None => {}
                },
            }
        }
        Ok(Value::Rec(fields))
    }
}

/// A parsed package.
#[derive(Debug, Clone, PartialEq)]
pub struct Package {
    pub descriptor: ComponentDescriptor,
    /// Script source when the artifact is a script.
    pub payload: Option<String>,
    /// Hex SHA-256 over the manifest and payload bytes.
    pub digest: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses a descriptor from manifest bytes; `file` names the source in
/// errors.
pub fn parse_descriptor(raw: &[u8], file: &str) -> Result<ComponentDescriptor> {
    let d: ComponentDescriptor = serde_json::from_slice(raw)
        .map_err(|e| RuntimeError::MalformedManifest { file: file.to_string(), reason: e.to_string() })?;
    d.validate(file)?;
    Ok(d)
}

/// Reads a package archive. `file` names the source in errors.
pub fn read_package(bytes: &[u8], file: &str) -> Result<Package> {
    let malformed = |reason: String| RuntimeError::MalformedManifest { file: file.to_string(), reason };
    let mut entries: BTreeMap<String, Vec<u8>> = BTreeMap::new();
    let mut archive = tar::Archive::new(bytes);
    for entry in archive.entries().map_err(|e| malformed(format!("not a package: {e}")))? {
        let mut entry = entry.map_err(|e| malformed(format!("not a package: {e}")))?;
        if !entry.header().entry_type().is_file() {
            continue;
        }
        let path = entry.path().map_err(|e| malformed(e.to_string()))?.to_string_lossy().into_owned();
        let mut buf = Vec::new();
        entry.read_to_end(&mut buf).map_err(|e| malformed(e.to_string()))?;
        entries.insert(path.trim_start_matches("./").to_string(), buf);
    }
    let raw = entries.get(MANIFEST_NAME).ok_or_else(|| malformed(format!("no {MANIFEST_NAME}")))?;
    let descriptor = parse_descriptor(raw, file)?;

    let mut hasher = Sha256::new();
    hasher.update(raw);
    let payload = match &descriptor.artifact {
        Artifact::Script { entry } => {
            let src = entries.get(entry).ok_or_else(|| malformed(format!("payload `{entry}` missing")))?;
            hasher.update(src);
            Some(String::from_utf8(src.clone()).map_err(|_| malformed(format!("payload `{entry}` is not utf-8")))?)
        }
        Artifact::Builtin { .. } => None,
    };
    Ok(Package { descriptor, payload, digest: hex(&hasher.finalize()) })
}

/// Builds a package from files in memory. Entries are written in name
/// order with zeroed metadata, so equal inputs give equal bytes.
pub fn pack_files(files: &BTreeMap<String, Vec<u8>>) -> Result<Vec<u8>> {
    let mut builder = tar::Builder::new(Vec::new());
    for (name, data) in files {
        let mut header = tar::Header::new_ustar();
        header.set_size(data.len() as u64);
        header.set_mode(0o644);
        header.set_mtime(0);
        header.set_entry_type(tar::EntryType::Regular);
        builder.append_data(&mut header, name, data.as_slice())?;
    }
    Ok(builder.into_inner()?)
}

/// Packs every regular file directly inside `dir`. The result is checked
/// with [`read_package`] before it is returned.
pub fn pack_dir(dir: &Path) -> Result<Vec<u8>> {
    let unreadable = |e: std::io::Error| RuntimeError::UnreadableDirectory { path: dir.to_path_buf(), reason: e.to_string() };
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(unreadable)? {
        let entry = entry.map_err(unreadable)?;
        if entry.file_type().map_err(unreadable)?.is_file() {
            let name = entry.file_name().to_string_lossy().into_owned();
            files.insert(name, std::fs::read(entry.path()).map_err(unreadable)?);
        }
    }
    let bytes = pack_files(&files)?;
    read_package(&bytes, &dir.display().to_string())?;
    Ok(bytes)
}

/// Conventional package file name, `<id>-<version>.pkg`.
pub fn package_file_name(r: &ComponentRef) -> String {
    format!("{}-{}.pkg", r.id, r.version)
}
