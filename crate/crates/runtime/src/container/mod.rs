//! The container: component repository, live instances, connections and
//! the lifecycle that moves them.
//!
//! State transitions (load, instantiate, connect, swap, unload) are
//! serialized by one lifecycle lock. Invocations never take it; they
//! read the routing tables briefly and then run unlocked, so calls keep
//! flowing while the lifecycle works. Every mutation of the routing
//! tables and the event recording it happen under the same write lock,
//! which keeps the event log a faithful history of the tables.

pub mod events;
mod export;
pub mod instance;
mod scan;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Weak};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use eight_core::{Endpoint, InterfaceKind, Method, Value};
use parking_lot::{Mutex, RwLock};
use serde::Serialize;

use crate::component::{Component, Env, Wiring};
use crate::config::{AdapterSource, AdapterSpec, ConnectionConfig, InstanceConfig, PortAddr, RebindEntry};
use crate::error::{Result, RuntimeError};
use crate::json::to_json;
use crate::linker::{check_kinds, Adapter, AdapterBody, Connection, ConnectionInfo, Link, NextWiring};
use crate::manifest::{read_package, ComponentRef, Package, PortDecl};
use crate::script::ScriptHost;

pub use events::{Action, EventLog, LifecycleEvent, DEFAULT_CAPACITY};
pub use instance::{Instance, InstanceState};
pub use scan::{Delta, DeltaReport, ScannedPackage, Scanner};
pub use export::{LINKER_APP, RUNTIME_APP};

/// Re-resolution attempts before a call gives up on a target that keeps
/// refusing admission.
const MAX_HOPS: usize = 64;

/// Events kept in a snapshot.
const RECENT_EVENTS: usize = 50;

#[derive(Debug, Clone)]
pub struct ContainerOptions {
    /// Directory scanned for packages and configuration.
    pub root: Option<PathBuf>,
    pub drain_timeout: Duration,
    pub scan_interval: Duration,
    pub event_capacity: usize,
}

impl Default for ContainerOptions {
    fn default() -> Self {
        ContainerOptions {
            root: None,
            drain_timeout: Duration::from_secs(30),
            scan_interval: Duration::from_secs(2),
            event_capacity: DEFAULT_CAPACITY,
        }
    }
}

#[derive(Default)]
struct World {
    components: BTreeMap<ComponentRef, Arc<Component>>,
    instances: BTreeMap<String, Arc<Instance>>,
    connections: BTreeMap<String, Arc<Connection>>,
    by_from: BTreeMap<PortAddr, String>,
    draining: Vec<Arc<Instance>>,
}

impl World {
    fn touching(&self, id: &str) -> Vec<Arc<Connection>> {
        self.connections.values().filter(|c| c.from.instance == id || c.link().to.instance == id).cloned().collect()
    }
}

struct Shared {
    me: Weak<Shared>,
    world: RwLock<World>,
    events: EventLog,
    lifecycle: Mutex<()>,
    host: Arc<ScriptHost>,
    options: ContainerOptions,
    files: Mutex<scan::FileState>,
    generations: AtomicU64,
}

/// Handle to a running container. Cheap to clone.
#[derive(Clone)]
pub struct Container {
    shared: Arc<Shared>,
}

impl Default for Container {
    fn default() -> Self {
        Container::new(ContainerOptions::default())
    }
}

/// Calls from an instance's required ports.
struct InstanceWiring {
    shared: Weak<Shared>,
    instance: String,
    required: BTreeMap<String, InterfaceKind>,
}

impl Wiring for InstanceWiring {
    fn call(&self, port: &str, method: Method, args: Vec<Value>) -> Result<Value> {
        if !self.required.contains_key(port) {
            return Err(RuntimeError::UnknownPort(format!("{}:{port} is not a required port", self.instance)));
        }
        let shared = self.shared.upgrade().ok_or_else(|| RuntimeError::TargetUnavailable { target: port.into() })?;
        let addr = PortAddr::new(self.instance.as_str(), port);
        let conn = {
            let w = shared.world.read();
            w.by_from.get(&addr).and_then(|id| w.connections.get(id)).cloned()
        };
        let conn = conn.ok_or_else(|| RuntimeError::UnknownEndpoint(format!("{addr} is not connected")))?;
        shared.invoke_connection(&conn, method, args)
    }
}

fn bad_method(port: &str, kind: InterfaceKind, method: Method, arity: usize) -> RuntimeError {
    RuntimeError::NoSuchMethod { port: format!("{port} ({kind})"), method: format!("{}/{arity}", method.name()) }
}

fn check_call(port: &str, kind: InterfaceKind, method: Method, arity: usize) -> Result<()> {
    if (kind.methods().contains(method) || method == Method::About) && method.signature().accepts_arity(arity) {
        Ok(())
    } else {
        Err(bad_method(port, kind, method, arity))
    }
}

fn adapter_detail(adapter: &Option<Arc<Adapter>>) -> Value {
    adapter.as_ref().map_or(Value::Null, |a| Value::from(a.kind_name()))
}

impl Shared {
    fn push(&self, subject: &str, action: Action, detail: Value) -> LifecycleEvent {
        log::debug!(target: "eight::events", "{action:?} {subject}");
        self.events.push(subject, action, detail)
    }

    fn next_generation(&self) -> u64 {
        self.generations.fetch_add(1, Ordering::SeqCst) + 1
    }

    fn wiring_for(&self, id: &str, component: &Component) -> Arc<dyn Wiring> {
        Arc::new(InstanceWiring {
            shared: self.me.clone(),
            instance: id.to_string(),
            required: component.descriptor.requires.iter().map(|p| (p.name.clone(), p.kind)).collect(),
        })
    }

    fn build_instance(&self, world: &World, cfg: InstanceConfig, wiring: Option<Arc<dyn Wiring>>) -> Result<Instance> {
        let component = world
            .components
            .get(&cfg.component)
            .cloned()
            .ok_or_else(|| RuntimeError::UnknownComponent(cfg.component.to_string()))?;
        let params = component.descriptor.validate_params(&cfg.params)?;
        let env = Env {
            instance: cfg.id.clone(),
            params,
            log_level: cfg.environment.log_level.as_deref().and_then(|l| l.parse().ok()).unwrap_or(log::LevelFilter::Info),
            max_operations: cfg.environment.max_operations,
            wiring: wiring.unwrap_or_else(|| self.wiring_for(&cfg.id, &component)),
        };
        let behavior = component.behavior(&env, &self.host)?;
        Ok(Instance::new(cfg, self.next_generation(), component, behavior, env))
    }

    fn build_adapter(&self, world: &World, connection: &str, spec: AdapterSpec) -> Result<Arc<Adapter>> {
        let body = match &spec.source {
            AdapterSource::Script(text) => AdapterBody::Script(self.host.compile_adapter(text)?),
            AdapterSource::ScriptFile(path) => {
                return Err(RuntimeError::ConfigValidation {
                    field: "adapter.script_file".into(),
                    reason: format!("`{path}` was never read"),
                })
            }
            AdapterSource::Component(r) => {
                let cfg = InstanceConfig::new(format!("{connection}-adapter"), r.clone(), spec.parameters.clone());
                let shared = self.me.clone();
                let conn_id = connection.to_string();
                let next: Arc<dyn Wiring> = Arc::new(NextWiring {
                    forward: move |method, args| {
                        let shared = shared
                            .upgrade()
                            .ok_or_else(|| RuntimeError::TargetUnavailable { target: conn_id.clone() })?;
                        let conn = shared.world.read().connections.get(&conn_id).cloned();
                        let conn = conn.ok_or_else(|| RuntimeError::UnknownId(conn_id.clone()))?;
                        shared.dispatch_link(&conn, method, args)
                    },
                });
                let inst = self.build_instance(world, cfg, Some(next))?;
                if inst.component.descriptor.provides.is_empty() {
                    return Err(RuntimeError::ConfigValidation {
                        field: "adapter.component".into(),
                        reason: format!("{r} provides no port"),
                    });
                }
                inst.activate()?;
                AdapterBody::Component(Arc::new(inst))
            }
        };
        Ok(Arc::new(Adapter { spec, body }))
    }

    /// Sends a call into a connection from its `from` side.
    fn invoke_connection(&self, conn: &Arc<Connection>, method: Method, args: Vec<Value>) -> Result<Value> {
        let link = conn.link();
        check_call(&conn.from.to_string(), link.from_kind, method, args.len())?;
        match &link.adapter {
            None => self.dispatch_link(conn, method, args),
            Some(adapter) => self.run_adapter(conn, adapter, method, args),
        }
    }

    fn run_adapter(&self, conn: &Arc<Connection>, adapter: &Adapter, method: Method, args: Vec<Value>) -> Result<Value> {
        match &adapter.body {
            AdapterBody::Script(script) => {
                let shared = self.me.clone();
                let c = conn.clone();
                let next: Arc<dyn Wiring> = Arc::new(NextWiring {
                    forward: move |m, a| match shared.upgrade() {
                        Some(s) => s.dispatch_link(&c, m, a),
                        None => Err(RuntimeError::TargetUnavailable { target: c.id.clone() }),
                    },
                });
                self.host.run_adapter(script, &conn.id, method, args, &adapter.spec.parameters, next)
            }
            AdapterBody::Component(inst) => {
                let port = &inst.component.descriptor.provides[0].name;
                let admission = inst.admit().ok_or_else(|| RuntimeError::TargetUnavailable { target: conn.id.clone() })?;
                inst.execute(&admission, port, method, args).map_err(|e| match e {
                    RuntimeError::InstanceFault { instance, message, .. } if instance == inst.id => {
                        RuntimeError::AdapterFault { connection: conn.id.clone(), message }
                    }
                    other => other,
                })
            }
        }
    }

    /// Delivers a call to the connection's current target, bypassing the
    /// adapter. The link is re-read on every attempt, so a call that loses
    /// a race with a swap lands on the replacement.
    fn dispatch_link(&self, conn: &Connection, method: Method, args: Vec<Value>) -> Result<Value> {
        for _ in 0..MAX_HOPS {
            let link = conn.link();
            if let Some(admission) = link.target.admit() {
                return link.target.execute(&admission, &link.to.port, method, args);
            }
            std::thread::yield_now();
        }
        Err(RuntimeError::TargetUnavailable { target: conn.link().to.to_string() })
    }

    /// Direct call on a provided port of the instance currently registered
    /// under `id`.
    fn dispatch_instance(&self, id: &str, port: &str, method: Method, args: Vec<Value>) -> Result<Value> {
        for _ in 0..MAX_HOPS {
            let inst = self.world.read().instances.get(id).cloned();
            let inst = inst.ok_or_else(|| RuntimeError::UnknownId(id.to_string()))?;
            let kind = inst.provided_kind(port).ok_or_else(|| RuntimeError::UnknownPort(format!("{id}:{port}")))?;
            check_call(&format!("{id}:{port}"), kind, method, args.len())?;
            if let Some(admission) = inst.admit() {
                return inst.execute(&admission, port, method, args);
            }
            std::thread::yield_now();
        }
        Err(RuntimeError::TargetUnavailable { target: format!("{id}:{port}") })
    }
}

/// Swap in progress. The events up to `DrainStarted` are already in the
/// log; [`SwapHandle::wait`] blocks until the old generation is released.
pub struct SwapHandle {
    pub events: Vec<LifecycleEvent>,
    watcher: JoinHandle<LifecycleEvent>,
}

impl SwapHandle {
    pub fn wait(self) -> Vec<LifecycleEvent> {
        let mut events = self.events;
        if let Ok(released) = self.watcher.join() {
            events.push(released);
        }
        events
    }
}

/// A provided port of a live instance. Calls go to whichever generation
/// is registered when they are made.
#[derive(Clone)]
pub struct PortHandle {
    container: Container,
    pub instance: String,
    pub port: String,
    pub kind: InterfaceKind,
}

impl PortHandle {
    pub fn invoke(&self, method: Method, args: Vec<Value>) -> Result<Value> {
        self.container.invoke(&self.instance, &self.port, method, args)
    }
}

impl Endpoint for PortHandle {
    fn answers(&self, method: Method) -> bool {
        self.container.instance(&self.instance).is_some_and(|i| i.answers(&self.port, method))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComponentInfo {
    pub id: String,
    pub version: String,
    pub reference: String,
    pub digest: String,
    pub payload: &'static str,
    pub provides: Vec<PortDecl>,
    pub requires: Vec<PortDecl>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub backdoors: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct InstanceInfo {
    pub id: String,
    pub generation: u64,
    pub component: String,
    pub state: InstanceState,
    pub in_flight: usize,
    pub served: u64,
    pub params: serde_json::Value,
    pub provides: Vec<PortDecl>,
    pub requires: Vec<PortDecl>,
}

impl InstanceInfo {
    fn of(i: &Instance) -> Self {
        let d = &i.component.descriptor;
        InstanceInfo {
            id: i.id.clone(),
            generation: i.generation,
            component: d.reference().to_string(),
            state: i.state(),
            in_flight: i.in_flight(),
            served: i.served(),
            params: to_json(&i.env.params),
            provides: d.provides.clone(),
            requires: d.requires.clone(),
        }
    }
}

/// Consistent point-in-time view. `seq` is the last event reflected.
#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub seq: u64,
    pub components: Vec<ComponentInfo>,
    pub instances: Vec<InstanceInfo>,
    pub connections: Vec<ConnectionInfo>,
    pub events: Vec<LifecycleEvent>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphNode {
    pub id: String,
    pub generation: u64,
    pub component: String,
    pub state: InstanceState,
}

#[derive(Debug, Clone, Serialize)]
pub struct GraphEdge {
    pub id: String,
    pub from: String,
    pub to: String,
    pub adapter: Option<&'static str>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Graph {
    pub seq: u64,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

impl Container {
    pub fn new(options: ContainerOptions) -> Self {
        let shared = Arc::new_cyclic(|me| Shared {
            me: me.clone(),
            world: RwLock::new(World::default()),
            events: EventLog::new(options.event_capacity),
            lifecycle: Mutex::new(()),
            host: Arc::new(ScriptHost::new()),
            options,
            files: Mutex::new(scan::FileState::default()),
            generations: AtomicU64::new(0),
        });
        Container { shared }
    }

    pub fn events(&self) -> &EventLog {
        &self.shared.events
    }

    pub fn options(&self) -> &ContainerOptions {
        &self.shared.options
    }

    // ---- queries ----

    pub fn component(&self, r: &ComponentRef) -> Option<Arc<Component>> {
        self.shared.world.read().components.get(r).cloned()
    }

    /// The generation currently registered under `id`.
    pub fn instance(&self, id: &str) -> Option<Arc<Instance>> {
        self.shared.world.read().instances.get(id).cloned()
    }

    pub fn connection(&self, id: &str) -> Option<Arc<Connection>> {
        self.shared.world.read().connections.get(id).cloned()
    }

    pub fn port(&self, instance: &str, port: &str) -> Result<PortHandle> {
        let inst = self.instance(instance).ok_or_else(|| RuntimeError::UnknownId(instance.to_string()))?;
        let kind = inst.provided_kind(port).ok_or_else(|| RuntimeError::UnknownPort(format!("{instance}:{port}")))?;
        Ok(PortHandle { container: self.clone(), instance: instance.into(), port: port.into(), kind })
    }

    pub fn components(&self) -> Vec<ComponentInfo> {
        Self::component_infos(&self.shared.world.read())
    }

    fn component_infos(w: &World) -> Vec<ComponentInfo> {
        w.components
            .values()
            .map(|c| {
                let d = &c.descriptor;
                ComponentInfo {
                    id: d.component_id.clone(),
                    version: d.version.clone(),
                    reference: d.reference().to_string(),
                    digest: c.digest.clone(),
                    payload: c.kind_name(),
                    provides: d.provides.clone(),
                    requires: d.requires.clone(),
                    backdoors: d.backdoors.clone(),
                    description: d.description.clone(),
                }
            })
            .collect()
    }

    /// Live instances, including generations still draining.
    pub fn instances(&self) -> Vec<InstanceInfo> {
        Self::instance_infos(&self.shared.world.read())
    }

    fn instance_infos(w: &World) -> Vec<InstanceInfo> {
        let mut out: Vec<_> = w.instances.values().map(|i| InstanceInfo::of(i)).collect();
        out.extend(w.draining.iter().map(|i| InstanceInfo::of(i)));
        out.sort_by(|a, b| (&a.id, a.generation).cmp(&(&b.id, b.generation)));
        out
    }

    pub fn connections(&self) -> Vec<ConnectionInfo> {
        self.shared.world.read().connections.values().map(|c| c.info()).collect()
    }

    pub fn snapshot(&self) -> Snapshot {
        let w = self.shared.world.read();
        let seq = self.shared.events.last_seq();
        let from = seq.saturating_sub(RECENT_EVENTS as u64).max(self.shared.events.oldest_seq().saturating_sub(1));
        Snapshot {
            seq,
            components: Self::component_infos(&w),
            instances: Self::instance_infos(&w),
            connections: w.connections.values().map(|c| c.info()).collect(),
            events: self.shared.events.since(from).unwrap_or_default(),
        }
    }

    pub fn graph(&self) -> Graph {
        let w = self.shared.world.read();
        let nodes = w
            .instances
            .values()
            .chain(w.draining.iter())
            .map(|i| GraphNode {
                id: i.id.clone(),
                generation: i.generation,
                component: i.component.descriptor.reference().to_string(),
                state: i.state(),
            })
            .collect();
        let edges = w
            .connections
            .values()
            .map(|c| {
                let l = c.link();
                GraphEdge {
                    id: c.id.clone(),
                    from: c.from.to_string(),
                    to: l.to.to_string(),
                    adapter: l.adapter.as_ref().map(|a| a.kind_name()),
                }
            })
            .collect();
        Graph { seq: self.shared.events.last_seq(), nodes, edges }
    }

    // ---- invocation ----

    /// Calls a provided port of a live instance.
    pub fn invoke(&self, instance: &str, port: &str, method: Method, args: Vec<Value>) -> Result<Value> {
        self.shared.dispatch_instance(instance, port, method, args)
    }

    /// Like [`Container::invoke`] with the method given by name.
    pub fn invoke_named(&self, instance: &str, port: &str, method: &str, args: Vec<Value>) -> Result<Value> {
        let m: Method = method.parse().map_err(|_| RuntimeError::NoSuchMethod {
            port: format!("{instance}:{port}"),
            method: method.to_string(),
        })?;
        self.invoke(instance, port, m, args)
    }

    /// Sends a call into a connection as its `from` instance would.
    pub fn invoke_through(&self, connection: &str, method: Method, args: Vec<Value>) -> Result<Value> {
        let conn = self.connection(connection).ok_or_else(|| RuntimeError::UnknownId(connection.to_string()))?;
        self.shared.invoke_connection(&conn, method, args)
    }

    // ---- components ----

    /// Adds a package to the repository. A package with the same id and
    /// version but a new digest replaces the old one and swaps every live
    /// instance of it, keeping all connections.
    pub fn load_package(&self, pkg: Package) -> Result<Vec<LifecycleEvent>> {
        let (mut events, swaps) = {
            let _lc = self.shared.lifecycle.lock();
            self.load_locked(pkg)?
        };
        for s in swaps {
            events.extend(s.wait().into_iter().skip_while(|e| e.action != Action::Released));
        }
        Ok(events)
    }

    pub fn load_bytes(&self, bytes: &[u8], name: &str) -> Result<Vec<LifecycleEvent>> {
        self.load_package(read_package(bytes, name)?)
    }

    fn load_locked(&self, pkg: Package) -> Result<(Vec<LifecycleEvent>, Vec<SwapHandle>)> {
        let s = &self.shared;
        let component = Arc::new(Component::load(pkg, &s.host)?);
        let r = component.descriptor.reference();
        let key = r.to_string();
        let detail = |previous: Option<&str>| {
            let mut d = vec![("digest", Value::from(component.digest.as_str())), ("payload", Value::from(component.kind_name()))];
            if let Some(p) = previous {
                d.push(("previous", Value::from(p)));
            }
            Value::rec(d)
        };
        let live: Vec<String> = {
            let mut w = s.world.write();
            match w.components.get(&r) {
                Some(old) if old.digest == component.digest => return Ok((vec![], vec![])),
                Some(old) => {
                    let previous = old.digest.clone();
                    w.components.insert(r.clone(), component.clone());
                    let event = s.push(&key, Action::Updated, detail(Some(&previous)));
                    let live = w.instances.values().filter(|i| i.config.component == r).map(|i| i.id.clone()).collect();
                    drop(w);
                    return self.reswap(event, live, &r);
                }
                None => {
                    w.components.insert(r.clone(), component.clone());
                    vec![]
                }
            }
        };
        debug_assert!(live.is_empty());
        Ok((vec![s.push(&key, Action::Loaded, detail(None))], vec![]))
    }

    fn reswap(
        &self,
        first: LifecycleEvent,
        live: Vec<String>,
        r: &ComponentRef,
    ) -> Result<(Vec<LifecycleEvent>, Vec<SwapHandle>)> {
        let mut events = vec![first];
        let mut swaps = vec![];
        for id in live {
            let Some(old) = self.instance(&id) else { continue };
            let plan = self.keep_all_plan(&id);
            let mut cfg = old.config.clone();
            cfg.component = r.clone();
            let handle = self.swap_locked(&id, cfg, &plan)?;
            events.extend(handle.events.iter().cloned());
            swaps.push(handle);
        }
        Ok((events, swaps))
    }

    /// A rebind plan keeping every connection touching `id` as it is.
    pub fn keep_all_plan(&self, id: &str) -> Vec<RebindEntry> {
        self.shared.world.read().touching(id).iter().map(|c| RebindEntry::keep(c.id.as_str())).collect()
    }

    /// Removes a component nothing instantiates any more.
    pub fn unload_component(&self, r: &ComponentRef) -> Result<LifecycleEvent> {
        let _lc = self.shared.lifecycle.lock();
        self.unload_component_locked(r)
    }

    fn unload_component_locked(&self, r: &ComponentRef) -> Result<LifecycleEvent> {
        let s = &self.shared;
        let mut w = s.world.write();
        if !w.components.contains_key(r) {
            return Err(RuntimeError::UnknownComponent(r.to_string()));
        }
        let users: Vec<_> = w
            .instances
            .values()
            .chain(w.draining.iter())
            .filter(|i| i.config.component == *r)
            .map(|i| i.id.clone())
            .collect();
        if !users.is_empty() {
            return Err(RuntimeError::IllegalState {
                subject: r.to_string(),
                reason: format!("still instantiated by {}", users.join(", ")),
            });
        }
        w.components.remove(r);
        Ok(s.push(&r.to_string(), Action::Unloaded, Value::Null))
    }

    // ---- instances ----

    /// Creates and activates an instance; returns its id.
    pub fn instantiate(&self, cfg: InstanceConfig) -> Result<String> {
        let _lc = self.shared.lifecycle.lock();
        let id = cfg.id.clone();
        self.instantiate_locked(cfg)?;
        Ok(id)
    }

    /// [`Container::instantiate`], returning the events it recorded.
    pub fn instantiate_recorded(&self, cfg: InstanceConfig) -> Result<Vec<LifecycleEvent>> {
        let _lc = self.shared.lifecycle.lock();
        self.instantiate_locked(cfg)
    }

    fn instantiate_locked(&self, cfg: InstanceConfig) -> Result<Vec<LifecycleEvent>> {
        let s = &self.shared;
        cfg.validate()?;
        let inst = {
            let w = s.world.read();
            if w.instances.contains_key(&cfg.id) {
                return Err(RuntimeError::DuplicateInstanceId(cfg.id));
            }
            Arc::new(s.build_instance(&w, cfg, None)?)
        };
        inst.activate()?;
        let mut w = s.world.write();
        w.instances.insert(inst.id.clone(), inst.clone());
        let generation = Value::Int(inst.generation as i64);
        Ok(vec![
            s.push(
                &inst.id,
                Action::Instantiated,
                Value::rec([
                    ("generation", generation.clone()),
                    ("component", Value::from(inst.config.component.to_string())),
                ]),
            ),
            s.push(&inst.id, Action::Activated, Value::rec([("generation", generation)])),
        ])
    }

    /// Replaces the instance registered under `id` with a new generation
    /// of `component`, rebinding its connections according to `plan`.
    /// Returns once the new generation serves and the old one drains.
    pub fn begin_swap(&self, id: &str, component: ComponentRef, plan: &[RebindEntry]) -> Result<SwapHandle> {
        let _lc = self.shared.lifecycle.lock();
        let old = self.instance(id).ok_or_else(|| RuntimeError::UnknownId(id.to_string()))?;
        let mut cfg = old.config.clone();
        cfg.component = component;
        self.swap_locked(id, cfg, plan)
    }

    /// [`Container::begin_swap`], waiting for the old generation's release.
    pub fn swap_instance(&self, id: &str, component: ComponentRef, plan: &[RebindEntry]) -> Result<Vec<LifecycleEvent>> {
        Ok(self.begin_swap(id, component, plan)?.wait())
    }

    fn swap_locked(&self, id: &str, cfg: InstanceConfig, plan: &[RebindEntry]) -> Result<SwapHandle> {
        let s = &self.shared;
        let (old, new, planned) = {
            let w = s.world.read();
            let old = w.instances.get(id).cloned().ok_or_else(|| RuntimeError::UnknownId(id.to_string()))?;
            let touching = w.touching(id);

            let mut entries: BTreeMap<&str, &RebindEntry> = BTreeMap::new();
            for e in plan {
                if entries.insert(e.connection.as_str(), e).is_some() {
                    return Err(RuntimeError::BadRequest(format!("connection {} appears twice in the plan", e.connection)));
                }
                if !touching.iter().any(|c| c.id == e.connection) {
                    return Err(RuntimeError::BadRequest(format!("connection {} does not touch {id}", e.connection)));
                }
            }
            let missing: Vec<String> =
                touching.iter().filter(|c| !entries.contains_key(c.id.as_str())).map(|c| c.id.clone()).collect();
            if !missing.is_empty() {
                return Err(RuntimeError::RebindIncomplete { missing });
            }

            let new = Arc::new(s.build_instance(&w, cfg, None)?);
            let mut planned = Vec::new();
            for conn in touching {
                let entry = entries[conn.id.as_str()];
                let cur = conn.link();
                let adapter = match &entry.adapter {
                    None => cur.adapter.clone(),
                    Some(None) => None,
                    Some(Some(spec)) => Some(s.build_adapter(&w, &conn.id, spec.clone())?),
                };
                let from_kind = if conn.from.instance == id {
                    new.required_kind(&conn.from.port)
                        .ok_or_else(|| RuntimeError::UnknownEndpoint(format!("{} requires no port {}", new.component.descriptor.reference(), conn.from.port)))?
                } else {
                    cur.from_kind
                };
                let (to, to_kind, target) = if cur.to.instance == id {
                    let port = entry.port.clone().unwrap_or_else(|| cur.to.port.clone());
                    let kind = new.provided_kind(&port).ok_or_else(|| {
                        RuntimeError::UnknownEndpoint(format!("{} provides no port {port}", new.component.descriptor.reference()))
                    })?;
                    (PortAddr::new(id, port), kind, new.clone())
                } else if entry.port.is_some() {
                    return Err(RuntimeError::BadRequest(format!("port applies only to connections into {id}")));
                } else {
                    (cur.to.clone(), cur.to_kind, cur.target.clone())
                };
                check_kinds(&conn.id, from_kind, to_kind, adapter.is_some())?;
                let announce = cur.to.instance == id || entry.adapter.is_some() || from_kind != cur.from_kind;
                planned.push((conn, Link { from_kind, to, to_kind, target, adapter }, announce));
            }
            (old, new, planned)
        };

        new.activate()?;
        let mut events = Vec::new();
        {
            let mut w = s.world.write();
            w.instances.insert(id.to_string(), new.clone());
            let generation = Value::Int(new.generation as i64);
            events.push(s.push(
                id,
                Action::Instantiated,
                Value::rec([
                    ("generation", generation.clone()),
                    ("component", Value::from(new.config.component.to_string())),
                    ("replaces", Value::Int(old.generation as i64)),
                ]),
            ));
            events.push(s.push(id, Action::Activated, Value::rec([("generation", generation)])));
            for (conn, link, announce) in planned {
                let detail = Value::rec([
                    ("from", Value::from(conn.from.to_string())),
                    ("to", Value::from(link.to.to_string())),
                    ("adapter", adapter_detail(&link.adapter)),
                    ("generation", Value::Int(link.target.generation as i64)),
                ]);
                conn.switch(link);
                if announce {
                    events.push(s.push(&conn.id, Action::Rebound, detail));
                }
            }
            events.push(self.start_drain(&mut w, old.clone())?);
        }
        Ok(SwapHandle { events, watcher: self.watch_drain(old) })
    }

    /// Moves `inst` to Draining. Caller holds the world write lock and has
    /// already unregistered or replaced it.
    fn start_drain(&self, w: &mut World, inst: Arc<Instance>) -> Result<LifecycleEvent> {
        inst.start_draining()?;
        let event = self.shared.push(
            &inst.id,
            Action::DrainStarted,
            Value::rec([
                ("generation", Value::Int(inst.generation as i64)),
                ("in_flight", Value::Int(inst.in_flight() as i64)),
            ]),
        );
        w.draining.push(inst);
        Ok(event)
    }

    fn watch_drain(&self, inst: Arc<Instance>) -> JoinHandle<LifecycleEvent> {
        let shared = self.shared.clone();
        std::thread::Builder::new()
            .name(format!("drain-{}", inst.subject()))
            .spawn(move || {
                let started = Instant::now();
                let drained = inst.wait_drained(shared.options.drain_timeout);
                let mut w = shared.world.write();
                if let Err(e) = inst.release() {
                    log::warn!("{e}");
                }
                w.draining.retain(|i| !Arc::ptr_eq(i, &inst));
                shared.push(
                    &inst.id,
                    Action::Released,
                    Value::rec([
                        ("generation", Value::Int(inst.generation as i64)),
                        ("forced", Value::Bool(!drained)),
                        ("in_flight", Value::Int(inst.in_flight() as i64)),
                        ("drain_ms", Value::Int(started.elapsed().as_millis() as i64)),
                    ]),
                )
            })
            .expect("spawn drain watcher")
    }

    /// Removes an instance together with every connection touching it,
    /// waiting until it is released.
    pub fn unload_instance(&self, id: &str) -> Result<Vec<LifecycleEvent>> {
        let (events, watcher) = {
            let _lc = self.shared.lifecycle.lock();
            self.unload_locked(id)?
        };
        let mut events = events;
        events.extend(watcher.join().ok());
        Ok(events)
    }

    fn unload_locked(&self, id: &str) -> Result<(Vec<LifecycleEvent>, JoinHandle<LifecycleEvent>)> {
        let s = &self.shared;
        let mut w = s.world.write();
        let inst = w.instances.remove(id).ok_or_else(|| RuntimeError::UnknownId(id.to_string()))?;
        let mut events = Vec::new();
        for conn in w.touching(id) {
            events.push(self.drop_connection(&mut w, &conn, "instance unloaded"));
        }
        events.push(self.start_drain(&mut w, inst.clone())?);
        drop(w);
        Ok((events, self.watch_drain(inst)))
    }

    // ---- connections ----

    pub fn create_connection(&self, cfg: ConnectionConfig) -> Result<String> {
        let _lc = self.shared.lifecycle.lock();
        let id = cfg.id.clone();
        self.connect_locked(cfg)?;
        Ok(id)
    }

    /// [`Container::create_connection`], returning the event it recorded.
    pub fn create_connection_recorded(&self, cfg: ConnectionConfig) -> Result<LifecycleEvent> {
        let _lc = self.shared.lifecycle.lock();
        self.connect_locked(cfg)
    }

    fn connect_locked(&self, cfg: ConnectionConfig) -> Result<LifecycleEvent> {
        let s = &self.shared;
        cfg.validate()?;
        let mut w = s.world.write();
        if w.connections.contains_key(&cfg.id) {
            return Err(RuntimeError::DuplicateConnectionId(cfg.id));
        }
        let from_kind = w
            .instances
            .get(&cfg.from.instance)
            .and_then(|i| i.required_kind(&cfg.from.port))
            .ok_or_else(|| RuntimeError::UnknownEndpoint(cfg.from.to_string()))?;
        if let Some(other) = w.by_from.get(&cfg.from) {
            return Err(RuntimeError::IllegalState {
                subject: cfg.from.to_string(),
                reason: format!("already bound by connection {other}"),
            });
        }
        let target = w.instances.get(&cfg.to.instance).cloned().ok_or_else(|| RuntimeError::UnknownEndpoint(cfg.to.to_string()))?;
        let to_kind = target.provided_kind(&cfg.to.port).ok_or_else(|| RuntimeError::UnknownEndpoint(cfg.to.to_string()))?;
        check_kinds(&cfg.id, from_kind, to_kind, cfg.adapter.is_some())?;
        let adapter = cfg.adapter.map(|spec| s.build_adapter(&w, &cfg.id, spec)).transpose()?;
        let detail = Value::rec([
            ("from", Value::from(cfg.from.to_string())),
            ("to", Value::from(cfg.to.to_string())),
            ("adapter", adapter_detail(&adapter)),
            ("generation", Value::Int(target.generation as i64)),
            ("created", Value::Bool(true)),
        ]);
        let conn = Arc::new(Connection::new(
            cfg.id.clone(),
            cfg.from.clone(),
            Link { from_kind, to: cfg.to, to_kind, target, adapter },
        ));
        w.by_from.insert(cfg.from, cfg.id.clone());
        w.connections.insert(cfg.id.clone(), conn);
        Ok(s.push(&cfg.id, Action::Rebound, detail))
    }

    fn drop_connection(&self, w: &mut World, conn: &Connection, reason: &str) -> LifecycleEvent {
        w.connections.remove(&conn.id);
        w.by_from.remove(&conn.from);
        self.shared.push(
            &conn.id,
            Action::ConfigChanged,
            Value::rec([
                ("removed", Value::Bool(true)),
                ("from", Value::from(conn.from.to_string())),
                ("to", Value::from(conn.link().to.to_string())),
                ("reason", Value::from(reason)),
            ]),
        )
    }

    pub fn remove_connection(&self, id: &str) -> Result<LifecycleEvent> {
        let _lc = self.shared.lifecycle.lock();
        self.disconnect_locked(id)
    }

    fn disconnect_locked(&self, id: &str) -> Result<LifecycleEvent> {
        let mut w = self.shared.world.write();
        let conn = w.connections.get(id).cloned().ok_or_else(|| RuntimeError::UnknownId(id.to_string()))?;
        Ok(self.drop_connection(&mut w, &conn, "removed"))
    }

    /// Replaces (or with `None` removes) the adapter of a connection.
    /// Calls already inside the old adapter finish on it.
    pub fn reload_adapter(&self, id: &str, spec: Option<AdapterSpec>) -> Result<LifecycleEvent> {
        self.relink(id, None, Some(spec))
    }

    /// Re-points a connection at `to` and/or changes its adapter
    /// (`None` keeps the current one).
    pub fn relink(&self, id: &str, to: Option<PortAddr>, adapter: Option<Option<AdapterSpec>>) -> Result<LifecycleEvent> {
        let _lc = self.shared.lifecycle.lock();
        self.relink_locked(id, to, adapter)
    }

    fn relink_locked(&self, id: &str, to: Option<PortAddr>, adapter: Option<Option<AdapterSpec>>) -> Result<LifecycleEvent> {
        let s = &self.shared;
        let w = s.world.write();
        let conn = w.connections.get(id).cloned().ok_or_else(|| RuntimeError::UnknownId(id.to_string()))?;
        let cur = conn.link();
        let (to, to_kind, target) = match to {
            None => (cur.to.clone(), cur.to_kind, cur.target.clone()),
            Some(to) => {
                let target = w.instances.get(&to.instance).cloned().ok_or_else(|| RuntimeError::UnknownEndpoint(to.to_string()))?;
                let kind = target.provided_kind(&to.port).ok_or_else(|| RuntimeError::UnknownEndpoint(to.to_string()))?;
                (to, kind, target)
            }
        };
        let adapter = match adapter {
            None => cur.adapter.clone(),
            Some(None) => None,
            Some(Some(spec)) => Some(s.build_adapter(&w, id, spec)?),
        };
        check_kinds(id, cur.from_kind, to_kind, adapter.is_some())?;
        let detail = Value::rec([
            ("from", Value::from(conn.from.to_string())),
            ("to", Value::from(to.to_string())),
            ("adapter", adapter_detail(&adapter)),
            ("generation", Value::Int(target.generation as i64)),
        ]);
        conn.switch(Link { from_kind: cur.from_kind, to, to_kind, target, adapter });
        let event = s.push(id, Action::Rebound, detail);
        drop(w);
        Ok(event)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{pack_files, MANIFEST_NAME};

    pub(crate) fn builtin_pkg(id: &str, factory: &str, provides: &str, requires: &str) -> Package {
        let manifest = format!(
            r#"{{"component_id":"{id}","version":"1.0.0","artifact":{{"kind":"builtin","factory":"{factory}"}},
                "provides":{provides},"requires":{requires}}}"#
        );
        let files = BTreeMap::from([(MANIFEST_NAME.to_string(), manifest.into_bytes())]);
        read_package(&pack_files(&files).unwrap(), id).unwrap()
    }

    fn echo_world() -> Container {
        let c = Container::default();
        c.load_package(builtin_pkg("echo", "echo", r#"[{"name":"main","kind":"Processor"}]"#, "[]")).unwrap();
        c.load_package(builtin_pkg(
            "monitor",
            "monitor",
            r#"[{"name":"main","kind":"Processor"}]"#,
            r#"[{"name":"next","kind":"Processor"}]"#,
        ))
        .unwrap();
        c.instantiate(InstanceConfig::new("e", "echo@1.0.0".parse().unwrap(), Value::Null)).unwrap();
        c.instantiate(InstanceConfig::new("m", "monitor@1.0.0".parse().unwrap(), Value::Null)).unwrap();
        c
    }

    #[test]
    fn direct_and_connected_calls() {
        let c = echo_world();
        assert_eq!(c.invoke("e", "main", Method::Process, vec![Value::Int(4)]).unwrap(), Value::Int(4));
        let err = c.invoke("m", "main", Method::Process, vec![Value::Int(4)]).unwrap_err();
        assert!(matches!(err, RuntimeError::UnknownEndpoint(_)));
        c.create_connection(ConnectionConfig::new("m-e", "m:next".parse().unwrap(), "e:main".parse().unwrap(), None))
            .unwrap();
        assert_eq!(c.invoke("m", "main", Method::Process, vec![Value::Int(4)]).unwrap(), Value::Int(4));
        let err = c.invoke("e", "main", Method::Find, vec![Value::Int(4)]).unwrap_err();
        assert!(matches!(err, RuntimeError::NoSuchMethod { .. }));
    }

    #[test]
    fn swap_requires_full_plan_and_orders_events() {
        let c = echo_world();
        c.create_connection(ConnectionConfig::new("m-e", "m:next".parse().unwrap(), "e:main".parse().unwrap(), None))
            .unwrap();
        let err = c.swap_instance("e", "echo@1.0.0".parse().unwrap(), &[]).unwrap_err();
        assert_eq!(err, RuntimeError::RebindIncomplete { missing: vec!["m-e".into()] });
        let events = c.swap_instance("e", "echo@1.0.0".parse().unwrap(), &[RebindEntry::keep("m-e")]).unwrap();
        let actions: Vec<_> = events.iter().map(|e| e.action).collect();
        use Action::*;
        assert_eq!(actions, [Instantiated, Activated, Rebound, DrainStarted, Released]);
        assert_eq!(c.connection("m-e").unwrap().link().target.generation, c.instance("e").unwrap().generation);
    }

    #[test]
    fn unload_removes_connections() {
        let c = echo_world();
        c.create_connection(ConnectionConfig::new("m-e", "m:next".parse().unwrap(), "e:main".parse().unwrap(), None))
            .unwrap();
        let events = c.unload_instance("e").unwrap();
        assert_eq!(events.last().unwrap().action, Action::Released);
        assert!(c.connection("m-e").is_none());
        assert!(c.instance("e").is_none());
        assert_eq!(c.instances().len(), 1);
    }
}
