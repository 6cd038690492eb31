//! Hot-swappable component container.
//!
//! Components are packages holding a descriptor and a payload (a
//! sandboxed script or a built-in factory). The [`container::Container`]
//! loads them, runs instances, and routes calls between instance ports
//! through [`linker`] connections, which may carry adapter functions.
//! Instances are replaced under load by draining swaps. [`api`] exposes
//! all of it over HTTP and [`cli`] drives the API.

pub mod analysis;
pub mod api;
pub mod builtins;
pub mod cli;
pub mod component;
pub mod config;
pub mod container;
pub mod demo;
pub mod error;
pub mod json;
pub mod linker;
pub mod manifest;
pub mod script;

pub use container::{Container, ContainerOptions};
pub use error::{Result, RuntimeError};
