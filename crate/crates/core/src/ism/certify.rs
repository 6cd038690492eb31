//! Independence certifications.
//!
//! The universally quantified forms (complete and absolute independence)
//! range over every non-empty subset of the contexts the model registers
//! rule sets for. Contexts without a registered rule set are not examined;
//! [`Certification::contexts`] records exactly which were.

use alloc::collections::BTreeSet;
use alloc::string::ToString;
use alloc::vec::Vec;

use super::{impact_closure, scope, AppId, ContextSet, IsmError, ModuleId, SystemModel};

/// Evidence that an independence property fails: under `contexts`, a change
/// to the source module reaches `reached`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    pub contexts: ContextSet,
    pub reached: ModuleId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleVerdict {
    pub module: ModuleId,
    pub absolutely_independent: bool,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairVerdict {
    pub from: ModuleId,
    pub to: ModuleId,
    pub completely_independent: bool,
    pub witness: Option<Witness>,
}

/// Full report for one application.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certification {
    pub app: AppId,
    /// Registered contexts; quantification covers their non-empty subsets.
    pub contexts: ContextSet,
    pub modules: Vec<ModuleVerdict>,
    pub pairs: Vec<PairVerdict>,
    pub ideal: bool,
}

/// Modules reached by a whole-module change to `m` under `R(x)`.
pub(crate) fn impacted_modules(
    model: &SystemModel,
    m: &ModuleId,
    x: ContextSet,
) -> Result<BTreeSet<ModuleId>, IsmError> {
    let changes = model.expand_module_change(m, None)?;
    let closed = impact_closure(&changes, &model.rules(x));
    model.modules_of_services(&scope(&closed))
}

fn check_pair(model: &SystemModel, mi: &ModuleId, mj: &ModuleId) -> Result<(), IsmError> {
    if mi == mj {
        return Err(IsmError::SameModule(mi.to_string()));
    }
    for m in [mi, mj] {
        if !model.contains_module(m) {
            return Err(IsmError::UnknownId(m.to_string()));
        }
    }
    Ok(())
}

/// `mi` is independent of `mj` in contexts `x` when a change to `mi` never
/// reaches `mj`.
pub fn is_independent(model: &SystemModel, mi: &ModuleId, mj: &ModuleId, x: ContextSet) -> Result<bool, IsmError> {
    check_pair(model, mi, mj)?;
    Ok(!impacted_modules(model, mi, x)?.contains(mj))
}

fn complete_witness(model: &SystemModel, mi: &ModuleId, mj: &ModuleId) -> Result<Option<Witness>, IsmError> {
    check_pair(model, mi, mj)?;
    for x in model.registered_contexts().non_empty_subsets() {
        if impacted_modules(model, mi, x)?.contains(mj) {
            return Ok(Some(Witness { contexts: x, reached: mj.clone() }));
        }
    }
    Ok(None)
}

/// Independence under every registered context combination.
pub fn is_completely_independent(model: &SystemModel, mi: &ModuleId, mj: &ModuleId) -> Result<bool, IsmError> {
    Ok(complete_witness(model, mi, mj)?.is_none())
}

fn absolute_witness(model: &SystemModel, mi: &ModuleId) -> Result<Option<Witness>, IsmError> {
    if !model.contains_module(mi) {
        return Err(IsmError::UnknownId(mi.to_string()));
    }
    for x in model.registered_contexts().non_empty_subsets() {
        let reached = impacted_modules(model, mi, x)?;
        if let Some(other) = reached.iter().find(|m| m.app == mi.app && *m != mi) {
            return Ok(Some(Witness { contexts: x, reached: other.clone() }));
        }
    }
    Ok(None)
}

/// No change to `mi`, in any registered context, reaches another module of
/// its own application.
pub fn is_absolutely_independent(model: &SystemModel, mi: &ModuleId) -> Result<bool, IsmError> {
    Ok(absolute_witness(model, mi)?.is_none())
}

/// Every module of `app` is absolutely independent.
pub fn is_ideal_system(model: &SystemModel, app: &AppId) -> Result<bool, IsmError> {
    for m in model.modules_of_apps([app])? {
        if !is_absolutely_independent(model, &m)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Verdicts for `app`, or for one of its modules when `only` is given.
pub fn certify(model: &SystemModel, app: &AppId, only: Option<&ModuleId>) -> Result<Certification, IsmError> {
    let all = model.modules_of_apps([app])?;
    let subjects: Vec<ModuleId> = match only {
        Some(m) if m.app != app.0 || !all.contains(m) => return Err(IsmError::UnknownId(m.to_string())),
        Some(m) => alloc::vec![m.clone()],
        None => all.iter().cloned().collect(),
    };

    let mut modules = Vec::new();
    let mut pairs = Vec::new();
    for m in &subjects {
        let witness = absolute_witness(model, m)?;
        modules.push(ModuleVerdict { module: m.clone(), absolutely_independent: witness.is_none(), witness });
        for other in all.iter().filter(|o| *o != m) {
            let witness = complete_witness(model, m, other)?;
            pairs.push(PairVerdict {
                from: m.clone(),
                to: other.clone(),
                completely_independent: witness.is_none(),
                witness,
            });
        }
    }
    Ok(Certification {
        app: app.clone(),
        contexts: model.registered_contexts(),
        modules,
        pairs,
        ideal: is_ideal_system(model, app)?,
    })
}
