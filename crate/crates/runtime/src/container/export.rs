use eight_core::ism::{ChangeContext, Rule, SystemModel};

use super::Container;

/// Application holding one module per live instance.
pub const RUNTIME_APP: &str = "runtime";
/// Application holding one pseudo-module per connection.
pub const LINKER_APP: &str = "linker";

impl Container {
    /// Impact-scope model of the running system under context `x`.
    ///
    /// Each live instance is a module of [`RUNTIME_APP`] whose services are
    /// its ports. Instances touch each other only through connections, so
    /// no rule links two instance modules. Each connection is a module of
    /// [`LINKER_APP`] with one rule, `adapter -> self`, under `x`.
    ///
    /// A component that declares `backdoors` calls those instances
    /// directly; each one adds the rule `target.self -> caller.self`.
    pub fn export_ism_model(&self, x: ChangeContext) -> SystemModel {
        let w = self.shared.world.read();
        let mut model = SystemModel::new();
        if w.instances.is_empty() && w.connections.is_empty() {
            return model;
        }
        model.register_context(x);
        for (id, inst) in &w.instances {
            let d = &inst.component.descriptor;
            let ports = d.provides.iter().chain(&d.requires).map(|p| p.name.as_str());
            model.add_module(RUNTIME_APP, id, ports).expect("instance ids and port names are valid module names");
        }
        for id in w.connections.keys() {
            let m = model.add_module(LINKER_APP, id, ["adapter"]).expect("connection ids are valid module names");
            model.add_rule(x, Rule::single(m.service("adapter"), m.self_service())).expect("services exist");
        }
        for (id, inst) in &w.instances {
            for target in &inst.component.descriptor.backdoors {
                if w.instances.contains_key(target) && target != id {
                    let from = eight_core::ism::ModuleId::new(RUNTIME_APP, target.as_str()).self_service();
                    let to = eight_core::ism::ModuleId::new(RUNTIME_APP, id.as_str()).self_service();
                    model.add_rule(x, Rule::single(from, to)).expect("services exist");
                }
            }
        }
        model
    }
}
