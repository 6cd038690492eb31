//! Directory scanning and reconciliation.
//!
//! Layout under the root:
//!
//! ```text
//! components/<id>-<version>.pkg
//! config/instances/<instance_id>.json
//! config/connections/<connection_id>.json
//! ```
//!
//! [`Container::scan`] compares the directory with what earlier applies
//! took from it; only file-origin state is ever added, updated or removed
//! by a delta. Objects created through the API are left alone.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread::JoinHandle;

use eight_core::Value;
use serde::Serialize;

use super::{Action, Container, LifecycleEvent, SwapHandle};
use crate::config::{read_connection_file, read_instance_file, ConnectionConfig, InstanceConfig};
use crate::error::{Result, RuntimeError};
use crate::manifest::{read_package, ComponentRef, Package};

/// What earlier applies took from the directory.
#[derive(Default)]
pub(super) struct FileState {
    components: BTreeMap<ComponentRef, String>,
    instances: BTreeMap<String, InstanceConfig>,
    connections: BTreeMap<String, ConnectionConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Delta<T> {
    pub added: Vec<T>,
    pub updated: Vec<T>,
    pub removed: Vec<String>,
}

impl<T> Default for Delta<T> {
    fn default() -> Self {
        Delta { added: vec![], updated: vec![], removed: vec![] }
    }
}

impl<T> Delta<T> {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.updated.is_empty() && self.removed.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScannedPackage {
    pub file: String,
    pub component: ComponentRef,
    pub digest: String,
    #[serde(skip)]
    pub package: Package,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DeltaReport {
    pub components: Delta<ScannedPackage>,
    pub instances: Delta<InstanceConfig>,
    pub connections: Delta<ConnectionConfig>,
}

impl DeltaReport {
    pub fn is_empty(&self) -> bool {
        self.components.is_empty() && self.instances.is_empty() && self.connections.is_empty()
    }

    fn counts(&self) -> Value {
        let n = |a: usize, b: usize, c: usize| Value::Int((a + b + c) as i64);
        Value::rec([
            ("added", n(self.components.added.len(), self.instances.added.len(), self.connections.added.len())),
            ("updated", n(self.components.updated.len(), self.instances.updated.len(), self.connections.updated.len())),
            ("removed", n(self.components.removed.len(), self.instances.removed.len(), self.connections.removed.len())),
        ])
    }
}

fn unreadable(path: &Path, e: impl ToString) -> RuntimeError {
    RuntimeError::UnreadableDirectory { path: path.to_path_buf(), reason: e.to_string() }
}

/// Regular files in `dir` with extension `ext`, by name. A missing
/// directory has none.
fn files_in(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(vec![]);
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| unreadable(dir, e))? {
        let path = entry.map_err(|e| unreadable(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn duplicate(path: &Path, what: String) -> RuntimeError {
    RuntimeError::MalformedManifest { file: path.display().to_string(), reason: format!("{what} is declared twice") }
}

fn diff<T: Clone + PartialEq>(
    tracked: &BTreeMap<String, T>,
    found: &BTreeMap<String, T>,
) -> Delta<T> {
    let mut d = Delta::default();
    for (id, cfg) in found {
        match tracked.get(id) {
            None => d.added.push(cfg.clone()),
            Some(old) if old != cfg => d.updated.push(cfg.clone()),
            Some(_) => {}
        }
    }
    d.removed = tracked.keys().filter(|id| !found.contains_key(*id)).cloned().collect();
    d
}

/// Background periodic scan. Stops when dropped.
pub struct Scanner {
    stop: Option<mpsc::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl Drop for Scanner {
    fn drop(&mut self) {
        self.stop.take();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Container {
    /// Compares `dir` with the state taken from it so far. Mutates nothing.
    pub fn scan(&self, dir: &Path) -> Result<DeltaReport> {
        if !dir.is_dir() {
            return Err(unreadable(dir, "not a directory"));
        }
        let mut packages: BTreeMap<ComponentRef, ScannedPackage> = BTreeMap::new();
        for path in files_in(&dir.join("components"), "pkg")? {
            let file = path.display().to_string();
            let bytes = std::fs::read(&path).map_err(|e| unreadable(&path, e))?;
            let package = read_package(&bytes, &file)?;
            let component = package.descriptor.reference();
            if packages.contains_key(&component) {
                return Err(duplicate(&path, component.to_string()));
            }
            let digest = package.digest.clone();
            packages.insert(component.clone(), ScannedPackage { file, component, digest, package });
        }
        let mut instances = BTreeMap::new();
        for path in files_in(&dir.join("config/instances"), "json")? {
            let cfg = read_instance_file(&path)?;
            if instances.contains_key(&cfg.id) {
                return Err(duplicate(&path, format!("instance {}", cfg.id)));
            }
            instances.insert(cfg.id.clone(), cfg);
        }
        let mut connections = BTreeMap::new();
        for path in files_in(&dir.join("config/connections"), "json")? {
            let cfg = read_connection_file(&path)?;
            if connections.contains_key(&cfg.id) {
                return Err(duplicate(&path, format!("connection {}", cfg.id)));
            }
            connections.insert(cfg.id.clone(), cfg);
        }

        let files = self.shared.files.lock();
        let mut components = Delta::default();
        for (r, p) in &packages {
            match files.components.get(r) {
                None => components.added.push(p.clone()),
                Some(digest) if *digest != p.digest => components.updated.push(p.clone()),
                Some(_) => {}
            }
        }
        components.removed =
            files.components.keys().filter(|r| !packages.contains_key(*r)).map(|r| r.to_string()).collect();
        Ok(DeltaReport {
            components,
            instances: diff(&files.instances, &instances),
            connections: diff(&files.connections, &connections),
        })
    }

    /// Brings the container in line with a delta from [`Container::scan`].
    ///
    /// Failures do not stop the apply: each one is recorded as a
    /// `ConfigChanged` event carrying the error, and the file is remembered
    /// so the next scan does not retry it until it changes.
    pub fn apply_delta(&self, delta: &DeltaReport) -> Result<Vec<LifecycleEvent>> {
        let mut events = Vec::new();
        let mut swaps: Vec<SwapHandle> = Vec::new();
        let mut drains = Vec::new();
        {
            let _lc = self.shared.lifecycle.lock();
            let mut files = self.shared.files.lock();
            let failed = |subject: &str, file: &str, e, events: &mut Vec<LifecycleEvent>| {
                self.report_failure(subject, file, e, events)
            };

            for id in &delta.connections.removed {
                files.connections.remove(id);
                if self.connection(id).is_some() {
                    match self.disconnect_locked(id) {
                        Ok(e) => events.push(e),
                        Err(e) => failed(id, "", e, &mut events),
                    }
                }
            }
            for id in &delta.instances.removed {
                files.instances.remove(id);
                if self.instance(id).is_some() {
                    match self.unload_locked(id) {
                        Ok((evs, watcher)) => {
                            events.extend(evs);
                            drains.push(watcher);
                        }
                        Err(e) => failed(id, "", e, &mut events),
                    }
                }
            }
            for p in delta.components.added.iter().chain(&delta.components.updated) {
                files.components.insert(p.component.clone(), p.digest.clone());
                match self.load_locked(p.package.clone()) {
                    Ok((evs, handles)) => {
                        events.extend(evs);
                        swaps.extend(handles);
                    }
                    Err(e) => failed(&p.component.to_string(), &p.file, e, &mut events),
                }
            }
            for cfg in delta.instances.added.iter().chain(&delta.instances.updated) {
                files.instances.insert(cfg.id.clone(), cfg.clone());
                let result = if self.instance(&cfg.id).is_some() {
                    let plan = self.keep_all_plan(&cfg.id);
                    self.swap_locked(&cfg.id, cfg.clone(), &plan).map(|h| {
                        let evs = h.events.clone();
                        swaps.push(h);
                        evs
                    })
                } else {
                    self.instantiate_locked(cfg.clone())
                };
                match result {
                    Ok(evs) => events.extend(evs),
                    Err(e) => failed(&cfg.id, &format!("config/instances/{}.json", cfg.id), e, &mut events),
                }
            }
            for cfg in delta.connections.added.iter().chain(&delta.connections.updated) {
                files.connections.insert(cfg.id.clone(), cfg.clone());
                let result = match self.connection(&cfg.id) {
                    Some(c) if c.from == cfg.from => {
                        self.relink_locked(&cfg.id, Some(cfg.to.clone()), Some(cfg.adapter.clone())).map(|e| vec![e])
                    }
                    Some(_) => self
                        .disconnect_locked(&cfg.id)
                        .and_then(|a| Ok(vec![a, self.connect_locked(cfg.clone())?])),
                    None => self.connect_locked(cfg.clone()).map(|e| vec![e]),
                };
                match result {
                    Ok(evs) => events.extend(evs),
                    Err(e) => failed(&cfg.id, &format!("config/connections/{}.json", cfg.id), e, &mut events),
                }
            }
        }
        for s in swaps {
            events.extend(s.wait().into_iter().filter(|e| e.action == Action::Released));
        }
        events.extend(drains.into_iter().filter_map(|d| d.join().ok()));

        // Components go last: a draining instance still holds its own.
        if !delta.components.removed.is_empty() {
            let _lc = self.shared.lifecycle.lock();
            let mut files = self.shared.files.lock();
            for r in &delta.components.removed {
                let Ok(r) = r.parse::<ComponentRef>() else { continue };
                files.components.remove(&r);
                match self.unload_component_locked(&r) {
                    Ok(e) => events.push(e),
                    Err(e) => self.report_failure(&r.to_string(), "", e, &mut events),
                }
            }
        }
        Ok(events)
    }

    fn report_failure(&self, subject: &str, file: &str, e: RuntimeError, events: &mut Vec<LifecycleEvent>) {
        log::warn!("{subject}: {e}");
        events.push(self.shared.push(
            subject,
            Action::ConfigChanged,
            Value::rec([
                ("file", Value::from(file)),
                ("error", Value::from(e.code())),
                ("message", Value::from(e.to_string())),
            ]),
        ));
    }

    /// Scans the configured root and applies the result. `Scanned` is
    /// always recorded.
    pub fn scan_and_apply(&self) -> Result<(DeltaReport, Vec<LifecycleEvent>)> {
        self.scan_root(true)
    }

    fn scan_root(&self, always_record: bool) -> Result<(DeltaReport, Vec<LifecycleEvent>)> {
        let root = self.options().root.clone().ok_or_else(|| RuntimeError::BadRequest("no root directory configured".into()))?;
        let delta = self.scan(&root)?;
        if delta.is_empty() && !always_record {
            return Ok((delta, vec![]));
        }
        let scanned = self.shared.push(&root.display().to_string(), Action::Scanned, delta.counts());
        let mut events = vec![scanned];
        events.extend(self.apply_delta(&delta)?);
        Ok((delta, events))
    }

    /// Starts scanning the root every `scan_interval`.
    pub fn start_scanner(&self) -> Scanner {
        let (stop, stopped) = mpsc::channel::<()>();
        let c = self.clone();
        let interval = self.options().scan_interval;
        let thread = std::thread::Builder::new()
            .name("scanner".into())
            .spawn(move || {
                let mut last_error = None;
                while let Err(mpsc::RecvTimeoutError::Timeout) = stopped.recv_timeout(interval) {
                    match c.scan_root(false) {
                        Ok(_) => last_error = None,
                        Err(e) => {
                            if last_error.as_ref() != Some(&e) {
                                log::warn!("scan failed: {e}");
                            }
                            last_error = Some(e);
                        }
                    }
                }
            })
            .expect("spawn scanner");
        Scanner { stop: Some(stop), thread: Some(thread) }
    }
}
