//! Instance and connection configuration files.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use eight_core::Value;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Result, RuntimeError};
use crate::json::serde_value;
use crate::manifest::{valid_id, valid_port_name, ComponentRef};

/// `config/instances/<id>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    /// Taken from the file name when read from disk.
    #[serde(default, alias = "instance_id")]
    pub id: String,
    pub component: ComponentRef,
    #[serde(default, with = "serde_value")]
    pub params: Value,
    #[serde(default)]
    pub environment: Environment,
}

/// In-module environment settings injected into every instance.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Environment {
    /// `error`, `warn`, `info`, `debug` or `trace`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_level: Option<String>,
    /// Script operation budget per call.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_operations: Option<u64>,
}

impl InstanceConfig {
    pub fn new(id: impl Into<String>, component: ComponentRef, params: Value) -> Self {
        InstanceConfig { id: id.into(), component, params, environment: Environment::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !valid_id(&self.id) {
            return Err(RuntimeError::ConfigValidation {
                field: "id".into(),
                reason: format!("`{}` must be lowercase without dots", self.id),
            });
        }
        if let Some(level) = &self.environment.log_level {
            if level.parse::<log::LevelFilter>().is_err() {
                return Err(RuntimeError::ConfigValidation {
                    field: "environment.log_level".into(),
                    reason: format!("unknown level `{level}`"),
                });
            }
        }
        Ok(())
    }
}

/// `instance:port`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PortAddr {
    pub instance: String,
    pub port: String,
}

impl PortAddr {
    pub fn new(instance: impl Into<String>, port: impl Into<String>) -> Self {
        PortAddr { instance: instance.into(), port: port.into() }
    }
}

impl fmt::Display for PortAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.instance, self.port)
    }
}

impl FromStr for PortAddr {
    type Err = RuntimeError;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some((i, p)) if valid_id(i) && valid_port_name(p) => Ok(PortAddr::new(i, p)),
            _ => Err(RuntimeError::BadRequest(format!("`{s}` is not of the form instance:port"))),
        }
    }
}

impl Serialize for PortAddr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PortAddr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AdapterSource {
    /// Inline script text.
    Script(String),
    /// Path of a script file, relative to the config file naming it. Only
    /// valid until the file is read; see [`AdapterSpec::resolve_files`].
    ScriptFile(String),
    /// A packaged adapter component; its `main` port runs the adapter.
    Component(ComponentRef),
}

/// Reconciliation function attached to a connection.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterSpec {
    pub source: AdapterSource,
    pub parameters: Value,
}

impl AdapterSpec {
    pub fn script(text: impl Into<String>) -> Self {
        AdapterSpec { source: AdapterSource::Script(text.into()), parameters: Value::Rec(Default::default()) }
    }

    pub fn with_parameters(mut self, parameters: Value) -> Self {
        self.parameters = parameters;
        self
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAdapter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    script: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    script_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    component: Option<ComponentRef>,
    #[serde(default, with = "serde_value")]
    parameters: Value,
}

impl Serialize for AdapterSpec {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut raw = RawAdapter { script: None, script_file: None, component: None, parameters: self.parameters.clone() };
        match &self.source {
            AdapterSource::Script(t) => raw.script = Some(t.clone()),
            AdapterSource::ScriptFile(f) => raw.script_file = Some(f.clone()),
            AdapterSource::Component(c) => raw.component = Some(c.clone()),
        }
        raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for AdapterSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error;
        let raw = RawAdapter::deserialize(d)?;
        let parameters = match raw.parameters {
            Value::Null => Value::Rec(Default::default()),
            p @ Value::Rec(_) => p,
            other => return Err(D::Error::custom(format!("adapter parameters must be a record, found {}", other.type_name()))),
        };
        let source = match (raw.script, raw.script_file, raw.component) {
            (Some(t), None, None) => AdapterSource::Script(t),
            (None, Some(f), None) => AdapterSource::ScriptFile(f),
            (None, None, Some(c)) => AdapterSource::Component(c),
            _ => return Err(D::Error::custom("adapter needs exactly one of script, script_file, component")),
        };
        Ok(AdapterSpec { source, parameters })
    }
}

impl AdapterSpec {
    /// Replaces a `script_file` reference by the file's contents.
    pub fn resolve_files(&mut self, base: &Path) -> Result<()> {
        if let AdapterSource::ScriptFile(rel) = &self.source {
            let path = base.join(rel);
            let text = std::fs::read_to_string(&path).map_err(|e| RuntimeError::ConfigValidation {
                field: "adapter.script_file".into(),
                reason: format!("{}: {e}", path.display()),
            })?;
            self.source = AdapterSource::Script(text);
        }
        Ok(())
    }

    pub fn has_unresolved_file(&self) -> bool {
        matches!(self.source, AdapterSource::ScriptFile(_))
    }
}

/// `config/connections/<id>.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectionConfig {
    #[serde(default, alias = "connection_id")]
    pub id: String,
    pub from: PortAddr,
    pub to: PortAddr,
    #[serde(default)]
    pub adapter: Option<AdapterSpec>,
}

impl ConnectionConfig {
    pub fn new(id: impl Into<String>, from: PortAddr, to: PortAddr, adapter: Option<AdapterSpec>) -> Self {
        ConnectionConfig { id: id.into(), from, to, adapter }
    }

    pub fn validate(&self) -> Result<()> {
        if !valid_id(&self.id) {
            return Err(RuntimeError::ConfigValidation {
                field: "id".into(),
                reason: format!("`{}` must be lowercase without dots", self.id),
            });
        }
        if self.adapter.as_ref().is_some_and(AdapterSpec::has_unresolved_file) {
            return Err(RuntimeError::ConfigValidation {
                field: "adapter.script_file".into(),
                reason: "script_file is only allowed in files on disk".into(),
            });
        }
        Ok(())
    }
}

/// One entry of a swap's rebind plan.
///
/// `port` renames the target port on the replacement (to-side
/// connections only). `adapter` absent keeps the current adapter, `null`
/// removes it, an object replaces it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RebindEntry {
    pub connection: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub port: Option<String>,
    #[serde(default, deserialize_with = "present", skip_serializing_if = "Option::is_none")]
    pub adapter: Option<Option<AdapterSpec>>,
}

impl RebindEntry {
    pub fn keep(connection: impl Into<String>) -> Self {
        RebindEntry { connection: connection.into(), port: None, adapter: None }
    }

    pub fn with_adapter(connection: impl Into<String>, adapter: Option<AdapterSpec>) -> Self {
        RebindEntry { connection: connection.into(), port: None, adapter: Some(adapter) }
    }
}

pub(crate) fn present<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Option<Option<AdapterSpec>>, D::Error> {
    Option::<AdapterSpec>::deserialize(d).map(Some)
}

/// Reads a JSON config file, filling `id` from the file stem when absent.
pub fn read_instance_file(path: &Path) -> Result<InstanceConfig> {
    let mut cfg: InstanceConfig = read_json(path)?;
    if cfg.id.is_empty() {
        cfg.id = stem(path);
    }
    cfg.validate().map_err(|e| malformed(path, e.to_string()))?;
    Ok(cfg)
}

pub fn read_connection_file(path: &Path) -> Result<ConnectionConfig> {
    let mut cfg: ConnectionConfig = read_json(path)?;
    if cfg.id.is_empty() {
        cfg.id = stem(path);
    }
    if let Some(a) = &mut cfg.adapter {
        a.resolve_files(path.parent().unwrap_or(Path::new(".")))?;
    }
    cfg.validate().map_err(|e| malformed(path, e.to_string()))?;
    Ok(cfg)
}

/// Reads a rebind plan, resolving `script_file` adapters next to it.
pub fn read_rebind_file(path: &Path) -> Result<Vec<RebindEntry>> {
    let mut plan: Vec<RebindEntry> = read_json(path)?;
    for entry in &mut plan {
        if let Some(Some(a)) = &mut entry.adapter {
            a.resolve_files(path.parent().unwrap_or(Path::new(".")))?;
        }
    }
    Ok(plan)
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn malformed(path: &Path, reason: String) -> RuntimeError {
    RuntimeError::MalformedManifest { file: path.display().to_string(), reason }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = std::fs::read(path).map_err(|e| malformed(path, e.to_string()))?;
    serde_json::from_slice(&raw).map_err(|e| malformed(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn connection_config_forms() {
        let c: ConnectionConfig = serde_json::from_value(json!({
            "from": "ui:finder", "to": "search:main",
            "adapter": {"script": "input", "parameters": {"dir": "searchPath"}}
        }))
        .unwrap();
        assert_eq!(c.from, PortAddr::new("ui", "finder"));
        let a = c.adapter.unwrap();
        assert_eq!(a.source, AdapterSource::Script("input".into()));
        assert_eq!(a.parameters.get("dir"), Some(&Value::from("searchPath")));

        let c: ConnectionConfig =
            serde_json::from_value(json!({"from": "a:x", "to": "b:y", "adapter": null})).unwrap();
        assert!(c.adapter.is_none());
        let c: ConnectionConfig =
            serde_json::from_value(json!({"from": "a:x", "to": "b:y", "adapter": {"component": "relay@1.0.0"}}))
                .unwrap();
        assert!(matches!(c.adapter.unwrap().source, AdapterSource::Component(_)));
        assert!(serde_json::from_value::<ConnectionConfig>(json!({"from": "a", "to": "b:y"})).is_err());
    }

    #[test]
    fn rebind_entry_distinguishes_absent_and_null() {
        let plan: Vec<RebindEntry> = serde_json::from_value(json!([
            {"connection": "a"},
            {"connection": "b", "adapter": null},
            {"connection": "c", "adapter": {"script": "1"}}
        ]))
        .unwrap();
        assert_eq!(plan[0].adapter, None);
        assert_eq!(plan[1].adapter, Some(None));
        assert!(matches!(plan[2].adapter, Some(Some(_))));
    }

    #[test]
    fn script_file_resolves_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("a.rhai"), "input").unwrap();
        std::fs::write(
            dir.path().join("ui-finder.json"),
            r#"{"from":"ui:finder","to":"search:main","adapter":{"script_file":"a.rhai"}}"#,
        )
        .unwrap();
        let c = read_connection_file(&dir.path().join("ui-finder.json")).unwrap();
        assert_eq!(c.id, "ui-finder");
        assert_eq!(c.adapter.unwrap().source, AdapterSource::Script("input".into()));
    }

    #[test]
    fn instance_round_trip() {
        let c: InstanceConfig = serde_json::from_value(json!({
            "component": "documents@1.0.0",
            "params": {"seed": {"searchPath/a.txt": "cat dog"}},
            "environment": {"log_level": "debug"}
        }))
        .unwrap();
        let back: InstanceConfig = serde_json::from_value(serde_json::to_value(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
