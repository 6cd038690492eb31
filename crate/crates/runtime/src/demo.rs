//! The search application, embedded so a demo root can be written
//! anywhere without the source tree.
//!
//! [`materialize`] lays out a root the container boots from: the four
//! base packages, their instance and connection configs, the adapters and
//! a rebind plan. Packages not booted by default (search 2.0.0, monitor,
//! echo) go to `extra/`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::Result;
use crate::manifest::{pack_files, MANIFEST_NAME};

macro_rules! fixture {
    ($path:literal) => {
        ($path, include_str!(concat!("../../../demo/", $path)))
    };
}

struct DemoPackage {
    name: &'static str,
    manifest: &'static str,
    payload: Option<(&'static str, &'static str)>,
    boot: bool,
}

const PACKAGES: [DemoPackage; 7] = [
    DemoPackage {
        name: "userinterface-1.0.0",
        manifest: include_str!("../../../demo/packages/userinterface-1.0.0/component.json"),
        payload: None,
        boot: true,
    },
    DemoPackage {
        name: "search-1.0.0",
        manifest: include_str!("../../../demo/packages/search-1.0.0/component.json"),
        payload: Some(("search.rhai", include_str!("../../../demo/packages/search-1.0.0/search.rhai"))),
        boot: true,
    },
    DemoPackage {
        name: "documents-1.0.0",
        manifest: include_str!("../../../demo/packages/documents-1.0.0/component.json"),
        payload: None,
        boot: true,
    },
    DemoPackage {
        name: "formatter-1.0.0",
        manifest: include_str!("../../../demo/packages/formatter-1.0.0/component.json"),
        payload: None,
        boot: true,
    },
    DemoPackage {
        name: "search-2.0.0",
        manifest: include_str!("../../../demo/packages/search-2.0.0/component.json"),
        payload: Some(("search.rhai", include_str!("../../../demo/packages/search-2.0.0/search.rhai"))),
        boot: false,
    },
    DemoPackage {
        name: "monitor-1.0.0",
        manifest: include_str!("../../../demo/packages/monitor-1.0.0/component.json"),
        payload: None,
        boot: false,
    },
    DemoPackage {
        name: "echo-1.0.0",
        manifest: include_str!("../../../demo/packages/echo-1.0.0/component.json"),
        payload: None,
        boot: false,
    },
];

const FILES: [(&str, &str); 14] = [
    fixture!("config/instances/ui.json"),
    fixture!("config/instances/search.json"),
    fixture!("config/instances/documents.json"),
    fixture!("config/instances/formatter.json"),
    fixture!("config/connections/ui-finder.json"),
    fixture!("config/connections/ui-formatter.json"),
    fixture!("config/connections/search-documents.json"),
    fixture!("adapters/userinterface-search.rhai"),
    fixture!("adapters/search-unary.rhai"),
    fixture!("adapters/identity.rhai"),
    fixture!("rebind.json"),
    fixture!("models/search.json"),
    fixture!("models/search-microservices.json"),
    fixture!("models/empty.json"),
];

/// Package bytes for a demo package directory name such as
/// `search-2.0.0`.
pub fn package(name: &str) -> Option<Vec<u8>> {
    let p = PACKAGES.iter().find(|p| p.name == name)?;
    let mut files = BTreeMap::from([(MANIFEST_NAME.to_string(), p.manifest.as_bytes().to_vec())]);
    if let Some((entry, src)) = p.payload {
        files.insert(entry.to_string(), src.as_bytes().to_vec());
    }
    Some(pack_files(&files).expect("demo packages pack"))
}

pub fn package_names() -> impl Iterator<Item = &'static str> {
    PACKAGES.iter().map(|p| p.name)
}

/// Contents of an embedded fixture, by its path under the demo root.
pub fn file(path: &str) -> Option<&'static str> {
    FILES.iter().find(|(p, _)| *p == path).map(|(_, text)| *text)
}

/// Writes a bootable demo root to `root`, creating it if needed.
/// Existing files with the same names are overwritten.
pub fn materialize(root: &Path) -> Result<()> {
    for p in &PACKAGES {
        let dir = root.join(if p.boot { "components" } else { "extra" });
        std::fs::create_dir_all(&dir)?;
        std::fs::write(dir.join(format!("{}.pkg", p.name)), package(p.name).expect("listed"))?;
    }
    for (path, text) in FILES {
        let dest = root.join(path);
        if let Some(parent) = dest.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(dest, text)?;
    }
    Ok(())
}
