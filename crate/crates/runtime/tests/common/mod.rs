#![allow(dead_code)]

use std::path::Path;
use std::time::Duration;

use eight::config::{read_rebind_file, RebindEntry};
use eight::container::LifecycleEvent;
use eight::{Container, ContainerOptions};
use tempfile::TempDir;

/// Occurrences of `keyword` as a whitespace-delimited token in the seeded
/// documents, computed without the container.
pub fn expected_count(keyword: &str) -> i64 {
    ["cat dog", "cat cat"].iter().flat_map(|d| d.split_whitespace()).filter(|t| *t == keyword).count() as i64
}

pub fn options(root: &Path) -> ContainerOptions {
    ContainerOptions {
        root: Some(root.to_path_buf()),
        drain_timeout: Duration::from_secs(10),
        scan_interval: Duration::from_millis(200),
        ..ContainerOptions::default()
    }
}

/// A container booted from a fresh demo root.
pub struct Demo {
    pub root: TempDir,
    pub container: Container,
    pub boot_events: Vec<LifecycleEvent>,
}

impl Demo {
    pub fn boot() -> Demo {
        let root = tempfile::tempdir().unwrap();
        eight::demo::materialize(root.path()).unwrap();
        let container = Container::new(options(root.path()));
        let (_, boot_events) = container.scan_and_apply().unwrap();
        Demo { root, container, boot_events }
    }

    pub fn load_extra(&self, name: &str) {
        let bytes = std::fs::read(self.root.path().join("extra").join(format!("{name}.pkg"))).unwrap();
        self.container.load_bytes(&bytes, name).unwrap();
    }

    pub fn rebind_plan(&self) -> Vec<RebindEntry> {
        read_rebind_file(&self.root.path().join("rebind.json")).unwrap()
    }

    /// search 1.0.0 -> 2.0.0 with the unary-to-binary adapter on
    /// `ui-finder`.
    pub fn swap_search(&self) -> Vec<LifecycleEvent> {
        self.load_extra("search-2.0.0");
        self.container.swap_instance("search", "search@2.0.0".parse().unwrap(), &self.rebind_plan()).unwrap()
    }
}
