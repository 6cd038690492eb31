//! Core data model for a hot-swappable component platform.
//!
//! Everything in this crate is pure computation over owned data and builds
//! without `std` (only `alloc` is required):
//!
//! * [`value`]: the self-describing [`Value`] that crosses every module
//!   boundary, plus [`KeyPath`] and the insertion-ordered [`Table`].
//! * [`codec`]: the canonical binary encoding of a [`Value`].
//! * [`interface`]: the fixed set of fifteen universal interface kinds and
//!   the fourteen methods they are composed from.
//! * [`ism`]: the impact-scope model (applications, modules, services,
//!   context rule sets), change closure and independence certification.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod codec;
pub mod interface;
pub mod ism;
pub mod value;

pub use codec::{decode_value, encode_value, DecodeError};
pub use interface::{conforms, methods_of, Endpoint, InterfaceKind, Method, MethodSet, MethodSignature};
pub use value::{KeyPath, KeyPathError, Table, Value};
