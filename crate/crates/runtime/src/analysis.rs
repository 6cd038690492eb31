//! JSON-facing impact-scope queries, shared by the HTTP API and the
//! offline CLI commands.

use std::collections::BTreeSet;
use std::path::Path;

use eight_core::ism::{
    certify, impact_closure, is_independent, scope, AppId, Certification, ContextSet, ModelSpec, ModuleId, ServiceId,
    SystemModel, Witness,
};
use serde::{Deserialize, Serialize};

use crate::error::{Result, RuntimeError};

/// `"s,o"` or `["s", "o"]`.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ContextArg {
    Joined(String),
    List(Vec<String>),
}

impl ContextArg {
    pub fn parse(&self) -> Result<ContextSet> {
        let joined = match self {
            ContextArg::Joined(s) => s.clone(),
            ContextArg::List(v) => v.join(","),
        };
        let set: ContextSet = joined.parse()?;
        if set.is_empty() {
            return Err(RuntimeError::BadRequest("at least one context is required".into()));
        }
        Ok(set)
    }
}

pub fn read_model(path: &Path) -> Result<SystemModel> {
    let raw = std::fs::read(path).map_err(|e| RuntimeError::Io(format!("{}: {e}", path.display())))?;
    let spec: ModelSpec = serde_json::from_slice(&raw)
        .map_err(|e| RuntimeError::MalformedManifest { file: path.display().to_string(), reason: e.to_string() })?;
    Ok(SystemModel::build(&spec)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeReport {
    pub contexts: String,
    pub changed: Vec<String>,
    /// Every service in the closure of the change.
    pub services: Vec<String>,
    pub modules: Vec<String>,
    pub applications: Vec<String>,
}

/// Impact scope of changing `change` under the rules of `x`.
pub fn scope_report(model: &SystemModel, x: ContextSet, change: &[String]) -> Result<ScopeReport> {
    let mut changed = BTreeSet::new();
    for s in change {
        let sid: ServiceId = s.parse()?;
        if !model.contains_service(&sid) {
            return Err(eight_core::ism::IsmError::UnknownId(sid.to_string()).into());
        }
        changed.insert(sid);
    }
    let services = scope(&impact_closure(&changed, &model.rules(x)));
    let modules = model.modules_of_services(&services)?;
    let applications = model.apps_of_services(&services)?;
    Ok(ScopeReport {
        contexts: x.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","),
        changed: changed.iter().map(ToString::to_string).collect(),
        services: services.iter().map(ToString::to_string).collect(),
        modules: modules.iter().map(ToString::to_string).collect(),
        applications: applications.iter().map(ToString::to_string).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    pub contexts: String,
    pub reached: String,
}

impl From<&Witness> for WitnessReport {
    fn from(w: &Witness) -> Self {
        WitnessReport { contexts: contexts(w.contexts), reached: w.reached.to_string() }
    }
}

fn contexts(x: ContextSet) -> String {
    x.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleReport {
    pub module: String,
    pub absolutely_independent: bool,
    pub witness: Option<WitnessReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub from: String,
    pub to: String,
    /// Under all registered contexts at once.
    pub independent: bool,
    /// Under every non-empty combination of registered contexts.
    pub completely_independent: bool,
    pub witness: Option<WitnessReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyReport {
    pub application: String,
    pub contexts: String,
    pub ideal: bool,
    pub modules: Vec<ModuleReport>,
    pub pairs: Vec<PairReport>,
}

fn report(model: &SystemModel, c: &Certification) -> Result<CertifyReport> {
    let all = model.registered_contexts();
    let pairs = c
        .pairs
        .iter()
        .map(|p| {
            let independent = all.is_empty() || is_independent(model, &p.from, &p.to, all)?;
            Ok(PairReport {
                from: p.from.to_string(),
                to: p.to.to_string(),
                independent,
                completely_independent: p.completely_independent,
                witness: p.witness.as_ref().map(Into::into),
            })
        })
        .collect::<Result<_>>()?;
    Ok(CertifyReport {
        application: c.app.to_string(),
        contexts: contexts(c.contexts),
        ideal: c.ideal,
        modules: c
            .modules
            .iter()
            .map(|m| ModuleReport {
                module: m.module.to_string(),
                absolutely_independent: m.absolutely_independent,
                witness: m.witness.as_ref().map(Into::into),
            })
            .collect(),
        pairs,
    })
}

/// Certifies `app` (every application when `None`), optionally narrowed
/// to one module. With `module` alone its application is implied.
pub fn certify_report(model: &SystemModel, app: Option<&str>, module: Option<&str>) -> Result<Vec<CertifyReport>> {
    let module: Option<ModuleId> = module.map(str::parse).transpose()?;
    let apps: Vec<AppId> = match (app, &module) {
        (Some(a), _) => vec![AppId::new(a)],
        (None, Some(m)) => vec![m.app_id()],
        (None, None) => model.apps().collect(),
    };
    apps.iter().map(|a| report(model, &certify(model, a, module.as_ref())?)).collect()
}

/// True when every reported application is ideal.
pub fn all_ideal(reports: &[CertifyReport]) -> bool {
    reports.iter().all(|r| r.ideal)
}
