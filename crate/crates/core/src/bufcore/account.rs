use serde::Serialize;

/// Result of [`MemoryAccount::adjust`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[must_use]
pub enum AccountOutcome {
    Ok,
    OverLimit,
    Underflow,
}

/// Byte-level memory charge against a socket budget.
///
/// `temp_raise` lets a transfer path admit a staged payload above the base
/// limit; it is paid back as those bytes leave the socket.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MemoryAccount {
    charged: u64,
    base_limit: u64,
    temp_raise: u64,
}

impl MemoryAccount {
    pub fn new(base_limit: u64) -> MemoryAccount {
        MemoryAccount { charged: 0, base_limit, temp_raise: 0 }
    }

    pub fn charged(&self) -> u64 {
        self.charged
    }

    pub fn base_limit(&self) -> u64 {
        self.base_limit
    }

    pub fn temp_raise(&self) -> u64 {
        self.temp_raise
    }

    pub fn limit(&self) -> u64 {
        self.base_limit + self.temp_raise
    }

    /// Bytes that can still be admitted.
    pub fn room(&self) -> u64 {
        self.limit().saturating_sub(self.charged)
    }

    pub fn set_base_limit(&mut self, limit: u64) {
        self.base_limit = limit;
    }

    pub fn raise_temp(&mut self, n: u64) {
        self.temp_raise += n;
    }

    /// Pays back up to `n` bytes of temporary headroom.
    pub fn lower_temp(&mut self, n: u64) {
        self.temp_raise -= n.min(self.temp_raise);
    }

    /// Applies a signed charge. State is untouched unless the outcome is `Ok`.
    pub fn adjust(&mut self, delta: i64) -> AccountOutcome {
        if delta >= 0 {
            let next = self.charged + delta as u64;
            if next > self.limit() {
                return AccountOutcome::OverLimit;
            }
            self.charged = next;
        } else {
            let dec = delta.unsigned_abs();
            if dec > self.charged {
                return AccountOutcome::Underflow;
            }
            self.charged -= dec;
        }
        AccountOutcome::Ok
    }
}
