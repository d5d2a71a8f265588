//! Virtual Payload Identifiers and the global map that resolves them.
//!
//! A VPI stands in for an anchored payload inside the application's buffer.
//! It is a keyed hash, so nothing about socket identity or kernel memory can
//! be read back out of the 8 bytes the application sees.

use std::collections::HashMap;
use std::fmt;
use std::hash::Hasher;
use std::sync::Mutex;
use std::time::Duration;

use siphasher::sip::SipHasher24;
use thiserror::Error;

use crate::SockId;

/// Width of a VPI on the byte stream.
pub const VPI_LEN: usize = 8;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Vpi(pub u64);

impl Vpi {
    /// Stream encoding, fixed little-endian.
    pub fn to_bytes(self) -> [u8; VPI_LEN] {
        self.0.to_le_bytes()
    }

    pub fn from_bytes(bytes: [u8; VPI_LEN]) -> Vpi {
        Vpi(u64::from_le_bytes(bytes))
    }
}

impl fmt::Debug for Vpi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Vpi({:016x})", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VpiEntry {
    pub vpi: Vpi,
    pub source_sock: SockId,
    /// Anchored bytes not yet handed to a send socket.
    pub anchored_remaining: u64,
    /// Total bytes the anchor covers (the message body, or its truncated prefix).
    pub anchor_len: u64,
    pub created_at: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VpiError {
    #[error("VPI map is full ({0} live entries)")]
    Full(usize),
}

/// Keyed 64-bit hash of `(source, seq, nonce)` under `salt`.
pub fn vpi_hash(salt: u64, source: SockId, seq: u64, nonce: u64) -> u64 {
    let mut h = SipHasher24::new_with_keys(salt, salt.rotate_left(32) ^ 0x5bd1_e995_9e37_79b9);
    h.write_u64(source.0);
    h.write_u64(seq);
    h.write_u64(nonce);
    h.finish()
}

/// Concurrent VPI table. Every operation takes the one internal lock, so
/// generate/lookup/remove are linearizable with respect to each other.
#[derive(Debug)]
pub struct VpiMap {
    entries: Mutex<HashMap<u64, VpiEntry>>,
    capacity: Option<usize>,
    salt: u64,
}

impl VpiMap {
    pub fn new(salt: u64) -> VpiMap {
        VpiMap { entries: Mutex::new(HashMap::new()), capacity: None, salt }
    }

    pub fn with_capacity_limit(salt: u64, capacity: usize) -> VpiMap {
        VpiMap { capacity: Some(capacity), ..VpiMap::new(salt) }
    }

    pub fn salt(&self) -> u64 {
        self.salt
    }

    fn entries(&self) -> std::sync::MutexGuard<'_, HashMap<u64, VpiEntry>> {
        self.entries.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Derives a fresh VPI and inserts its entry in one step. A value that
    /// collides with a live key is rehashed with the next nonce.
    pub fn generate(
        &self,
        source_sock: SockId,
        seq: u64,
        anchor_len: u64,
        now: Duration,
    ) -> Result<Vpi, VpiError> {
        let mut entries = self.entries();
        if let Some(cap) = self.capacity {
            if entries.len() >= cap {
                return Err(VpiError::Full(entries.len()));
            }
        }
        let mut nonce = 0u64;
        let value = loop {
            let v = vpi_hash(self.salt, source_sock, seq, nonce);
            if !entries.contains_key(&v) {
                break v;
            }
            nonce += 1;
        };
        let vpi = Vpi(value);
        entries.insert(
            value,
            VpiEntry { vpi, source_sock, anchored_remaining: anchor_len, anchor_len, created_at: now },
        );
        Ok(vpi)
    }

    /// Resolves 8 raw stream bytes. A miss is an ordinary answer.
    pub fn lookup(&self, candidate: [u8; VPI_LEN]) -> Option<VpiEntry> {
        self.entries().get(&Vpi::from_bytes(candidate).0).cloned()
    }

    pub fn get(&self, vpi: Vpi) -> Option<VpiEntry> {
        self.entries().get(&vpi.0).cloned()
    }

    pub fn remove(&self, vpi: Vpi) -> Option<VpiEntry> {
        self.entries().remove(&vpi.0)
    }

    /// Records `n` anchored bytes leaving for a send socket.
    pub fn note_transferred(&self, vpi: Vpi, n: u64) {
        if let Some(e) = self.entries().get_mut(&vpi.0) {
            e.anchored_remaining = e.anchored_remaining.saturating_sub(n);
        }
    }

    pub fn len(&self) -> usize {
        self.entries().len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries().is_empty()
    }

    pub fn live(&self) -> Vec<VpiEntry> {
        let mut v: Vec<_> = self.entries().values().cloned().collect();
        v.sort_by_key(|e| e.vpi);
        v
    }
}
