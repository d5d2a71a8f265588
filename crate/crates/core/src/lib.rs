//! Deterministic user-space model of a selective-copy socket datapath for
//! layer-7 proxies.
//!
//! Message metadata is copied to the proxy; bodies stay anchored in kernel
//! buffers and are represented in user space by an 8-byte identifier.

pub mod bufcore;
pub mod harness;
pub mod protoprog;
pub mod simkernel;
pub mod vpimap;

use serde::Serialize;

/// Opaque socket identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct SockId(pub u64);
