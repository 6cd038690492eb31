use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::{
    valid_name, AppId, ChangeContext, ChangeSet, ContextSet, EntityId, IsmError, ModuleId, Rule,
    ServiceId, SELF_SERVICE,
};

/// Declarative description of a [`SystemModel`], mirroring the JSON model
/// file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelSpec {
    #[cfg_attr(feature = "serde", serde(default))]
    pub applications: Vec<AppSpec>,
    /// Keyed by context code: `"s"`, `"r"` or `"o"`.
    #[cfg_attr(feature = "serde", serde(default))]
    pub rules: BTreeMap<String, Vec<RuleSpec>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AppSpec {
    pub name: String,
    #[cfg_attr(feature = "serde", serde(default))]
    pub modules: Vec<ModuleSpec>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModuleSpec {
    pub name: String,
    #[cfg_attr(feature = "serde", serde(default))]
    pub services: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RuleSpec {
    pub premise: Vec<String>,
    pub consequence: Vec<String>,
}

/// The six decomposition/merge functions between id levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    /// applications -> modules (`a_m`)
    AppsToModules,
    /// modules -> services (`m_s`)
    ModulesToServices,
    /// applications -> services (`a_s`)
    AppsToServices,
    /// modules -> applications (`m_a`)
    ModulesToApps,
    /// services -> modules (`s_m`)
    ServicesToModules,
    /// services -> applications (`s_a`)
    ServicesToApps,
}

impl Projection {
    pub const ALL: [Projection; 6] = [
        Projection::AppsToModules,
        Projection::ModulesToServices,
        Projection::AppsToServices,
        Projection::ModulesToApps,
        Projection::ServicesToModules,
        Projection::ServicesToApps,
    ];

    pub fn short_name(self) -> &'static str {
        match self {
            Projection::AppsToModules => "a_m",
            Projection::ModulesToServices => "m_s",
            Projection::AppsToServices => "a_s",
            Projection::ModulesToApps => "m_a",
            Projection::ServicesToModules => "s_m",
            Projection::ServicesToApps => "s_a",
        }
    }
}

/// Applications, their modules and services, and the per-context rules.
///
/// Every module holds the reserved `self` service. Immutable once built
/// apart from the explicit `add_*` builders, which keep all invariants.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SystemModel {
    apps: BTreeMap<String, BTreeMap<String, BTreeSet<String>>>,
    rules: BTreeMap<ChangeContext, Vec<Rule>>,
}

impl SystemModel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Materializes `spec`, adding the implicit `self` service everywhere.
    pub fn build(spec: &ModelSpec) -> Result<Self, IsmError> {
        let mut model = SystemModel::new();
        for app in &spec.applications {
            model.add_app(&app.name)?;
            for m in &app.modules {
                model.add_module(&app.name, &m.name, m.services.iter().map(String::as_str))?;
            }
        }
        for (code, rules) in &spec.rules {
            let context: ChangeContext = code.parse()?;
            model.register_context(context);
            for (index, r) in rules.iter().enumerate() {
                if r.premise.is_empty() || r.consequence.is_empty() {
                    return Err(IsmError::EmptyRule { context: context.code(), index });
                }
                let parse = |ids: &[String]| -> Result<BTreeSet<ServiceId>, IsmError> {
                    ids.iter().map(|s| s.parse::<ServiceId>()).collect()
                };
                model.add_rule(context, Rule { premise: parse(&r.premise)?, consequence: parse(&r.consequence)? })?;
            }
        }
        Ok(model)
    }

    pub fn add_app(&mut self, name: &str) -> Result<(), IsmError> {
        if !valid_name(name) {
            return Err(IsmError::InvalidId(name.to_string()));
        }
        if self.apps.contains_key(name) {
            return Err(IsmError::DuplicateId(name.to_string()));
        }
        self.apps.insert(name.to_string(), BTreeMap::new());
        Ok(())
    }

    /// Adds a module (creating its application on demand) with the given
    /// services plus `self`. Listing `self` explicitly is allowed.
    pub fn add_module<'a>(
        &mut self,
        app: &str,
        module: &str,
        services: impl IntoIterator<Item = &'a str>,
    ) -> Result<ModuleId, IsmError> {
        if !valid_name(app) {
            return Err(IsmError::InvalidId(app.to_string()));
        }
        if !valid_name(module) {
            return Err(IsmError::InvalidId(module.to_string()));
        }
        let modules = self.apps.entry(app.to_string()).or_default();
        let id = ModuleId::new(app, module);
        if modules.contains_key(module) {
            return Err(IsmError::DuplicateId(id.to_string()));
        }
        let mut set = BTreeSet::new();
        for s in services {
            if !valid_name(s) {
                return Err(IsmError::InvalidId(alloc::format!("{id}.{s}")));
            }
            if !set.insert(s.to_string()) && s != SELF_SERVICE {
                return Err(IsmError::DuplicateId(alloc::format!("{id}.{s}")));
            }
        }
        set.insert(SELF_SERVICE.to_string());
        modules.insert(module.to_string(), set);
        Ok(id)
    }

    /// Marks `context` as having a rule set, even if it stays empty.
    pub fn register_context(&mut self, context: ChangeContext) {
        self.rules.entry(context).or_default();
    }

    pub fn add_rule(&mut self, context: ChangeContext, rule: Rule) -> Result<(), IsmError> {
        if rule.premise.is_empty() || rule.consequence.is_empty() {
            let index = self.rules.get(&context).map_or(0, Vec::len);
            return Err(IsmError::EmptyRule { context: context.code(), index });
        }
        if let Some(s) = rule.services().find(|s| !self.contains_service(s)) {
            return Err(IsmError::DanglingRuleReference(s.to_string()));
        }
        self.rules.entry(context).or_default().push(rule);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.apps.is_empty()
    }

    pub fn apps(&self) -> impl Iterator<Item = AppId> + '_ {
        self.apps.keys().map(|a| AppId(a.clone()))
    }

    pub fn modules(&self) -> impl Iterator<Item = ModuleId> + '_ {
        self.apps
            .iter()
            .flat_map(|(a, ms)| ms.keys().map(move |m| ModuleId::new(a.clone(), m.clone())))
    }

    pub fn services(&self) -> impl Iterator<Item = ServiceId> + '_ {
        self.apps.iter().flat_map(|(a, ms)| {
            ms.iter().flat_map(move |(m, ss)| ss.iter().map(move |s| ServiceId::new(a.clone(), m.clone(), s.clone())))
        })
    }

    pub fn service_count(&self) -> usize {
        self.apps.values().flat_map(BTreeMap::values).map(BTreeSet::len).sum()
    }

    pub fn contains_app(&self, a: &AppId) -> bool {
        self.apps.contains_key(&a.0)
    }

    pub fn contains_module(&self, m: &ModuleId) -> bool {
        self.apps.get(&m.app).is_some_and(|ms| ms.contains_key(&m.module))
    }

    pub fn contains_service(&self, s: &ServiceId) -> bool {
        self.apps
            .get(&s.app)
            .and_then(|ms| ms.get(&s.module))
            .is_some_and(|ss| ss.contains(&s.service))
    }

    /// Contexts that have a registered rule set.
    pub fn registered_contexts(&self) -> ContextSet {
        self.rules.keys().fold(ContextSet::EMPTY, |acc, c| acc.with(*c))
    }

    pub fn rules_in(&self, context: ChangeContext) -> &[Rule] {
        self.rules.get(&context).map_or(&[], Vec::as_slice)
    }

    /// `R(x)`: the union of the rule sets of every context in `x`.
    pub fn rules(&self, x: ContextSet) -> Vec<Rule> {
        let mut out: Vec<Rule> = Vec::new();
        for c in x.iter() {
            for r in self.rules_in(c) {
                if !out.contains(r) {
                    out.push(r.clone());
                }
            }
        }
        out
    }

    fn check_app(&self, a: &AppId) -> Result<(), IsmError> {
        if self.contains_app(a) { Ok(()) } else { Err(IsmError::UnknownId(a.to_string())) }
    }

    fn check_module(&self, m: &ModuleId) -> Result<(), IsmError> {
        if self.contains_module(m) { Ok(()) } else { Err(IsmError::UnknownId(m.to_string())) }
    }

    fn check_service(&self, s: &ServiceId) -> Result<(), IsmError> {
        if self.contains_service(s) { Ok(()) } else { Err(IsmError::UnknownId(s.to_string())) }
    }

    /// `a_m`
    pub fn modules_of_apps<'a>(&self, apps: impl IntoIterator<Item = &'a AppId>) -> Result<BTreeSet<ModuleId>, IsmError> {
        let mut out = BTreeSet::new();
        for a in apps {
            self.check_app(a)?;
            out.extend(self.apps[&a.0].keys().map(|m| ModuleId::new(a.0.clone(), m.clone())));
        }
        Ok(out)
    }

    /// `m_s`
    pub fn services_of_modules<'a>(
        &self,
        modules: impl IntoIterator<Item = &'a ModuleId>,
    ) -> Result<BTreeSet<ServiceId>, IsmError> {
        let mut out = BTreeSet::new();
        for m in modules {
            self.check_module(m)?;
            out.extend(self.apps[&m.app][&m.module].iter().map(|s| m.service(s.clone())));
        }
        Ok(out)
    }

    /// `a_s`
    pub fn services_of_apps<'a>(&self, apps: impl IntoIterator<Item = &'a AppId>) -> Result<BTreeSet<ServiceId>, IsmError> {
        let modules = self.modules_of_apps(apps)?;
        self.services_of_modules(&modules)
    }

    /// `m_a`
    pub fn apps_of_modules<'a>(&self, modules: impl IntoIterator<Item = &'a ModuleId>) -> Result<BTreeSet<AppId>, IsmError> {
        modules
            .into_iter()
            .map(|m| self.check_module(m).map(|_| m.app_id()))
            .collect()
    }

    /// `s_m`
    pub fn modules_of_services<'a>(
        &self,
        services: impl IntoIterator<Item = &'a ServiceId>,
    ) -> Result<BTreeSet<ModuleId>, IsmError> {
        services
            .into_iter()
            .map(|s| self.check_service(s).map(|_| s.module_id()))
            .collect()
    }

    /// `s_a`
    pub fn apps_of_services<'a>(&self, services: impl IntoIterator<Item = &'a ServiceId>) -> Result<BTreeSet<AppId>, IsmError> {
        services
            .into_iter()
            .map(|s| self.check_service(s).map(|_| AppId(s.app.clone())))
            .collect()
    }

    /// Applies `f` to a set of ids of the matching level.
    pub fn project(&self, f: Projection, input: &BTreeSet<EntityId>) -> Result<BTreeSet<EntityId>, IsmError> {
        fn apps(input: &BTreeSet<EntityId>, f: Projection) -> Result<Vec<AppId>, IsmError> {
            input
                .iter()
                .map(|e| match e {
                    EntityId::App(a) => Ok(a.clone()),
                    _ => Err(IsmError::WrongIdLevel(f.short_name(), "application")),
                })
                .collect()
        }
        fn modules(input: &BTreeSet<EntityId>, f: Projection) -> Result<Vec<ModuleId>, IsmError> {
            input
                .iter()
                .map(|e| match e {
                    EntityId::Module(m) => Ok(m.clone()),
                    _ => Err(IsmError::WrongIdLevel(f.short_name(), "module")),
                })
                .collect()
        }
        fn services(input: &BTreeSet<EntityId>, f: Projection) -> Result<Vec<ServiceId>, IsmError> {
            input
                .iter()
                .map(|e| match e {
                    EntityId::Service(s) => Ok(s.clone()),
                    _ => Err(IsmError::WrongIdLevel(f.short_name(), "service")),
                })
                .collect()
        }
        Ok(match f {
            Projection::AppsToModules => {
                self.modules_of_apps(&apps(input, f)?)?.into_iter().map(EntityId::Module).collect()
            }
            Projection::ModulesToServices => {
                self.services_of_modules(&modules(input, f)?)?.into_iter().map(EntityId::Service).collect()
            }
            Projection::AppsToServices => {
                self.services_of_apps(&apps(input, f)?)?.into_iter().map(EntityId::Service).collect()
            }
            Projection::ModulesToApps => {
                self.apps_of_modules(&modules(input, f)?)?.into_iter().map(EntityId::App).collect()
            }
            Projection::ServicesToModules => {
                self.modules_of_services(&services(input, f)?)?.into_iter().map(EntityId::Module).collect()
            }
            Projection::ServicesToApps => {
                self.apps_of_services(&services(input, f)?)?.into_iter().map(EntityId::App).collect()
            }
        })
    }

    /// Change set for a change to module `m`.
    ///
    /// With `services`, the result is those services plus `m.self`. Without,
    /// the whole module changes: every service of `m`, `self` included.
    pub fn expand_module_change(
        &self,
        m: &ModuleId,
        services: Option<&BTreeSet<ServiceId>>,
    ) -> Result<ChangeSet, IsmError> {
        self.check_module(m)?;
        match services {
            None => self.services_of_modules([m]),
            Some(given) => {
                let mut out = ChangeSet::new();
                for s in given {
                    self.check_service(s)?;
                    if s.module_id() != *m {
                        return Err(IsmError::NotInModule { service: s.to_string(), module: m.to_string() });
                    }
                    out.insert(s.clone());
                }
                out.insert(m.self_service());
                Ok(out)
            }
        }
    }

    /// Spec that rebuilds an identical model.
    pub fn to_spec(&self) -> ModelSpec {
        ModelSpec {
            applications: self
                .apps
                .iter()
                .map(|(a, ms)| AppSpec {
                    name: a.clone(),
                    modules: ms
                        .iter()
                        .map(|(m, ss)| ModuleSpec { name: m.clone(), services: ss.iter().cloned().collect() })
                        .collect(),
                })
                .collect(),
            rules: self
                .rules
                .iter()
                .map(|(c, rs)| {
                    let specs = rs
                        .iter()
                        .map(|r| RuleSpec {
                            premise: r.premise.iter().map(ToString::to_string).collect(),
                            consequence: r.consequence.iter().map(ToString::to_string).collect(),
                        })
                        .collect();
                    (c.code().to_string(), specs)
                })
                .collect(),
        }
    }
}
