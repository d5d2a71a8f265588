//! Protocol programs: the control plane that decides, per call, which bytes
//! cross the user boundary and which stay anchored in the kernel.
//!
//! Programs are pure decision functions over per-connection state. The
//! kernel data plane executes the returned actions and commits the successor
//! state. New protocols plug in through [`ProtocolProgram`] without touching
//! the kernel.

pub mod http1;
pub mod kmp;
mod machine;

use thiserror::Error;

pub use http1::{
    http1_parse_chunk_header, http1_parse_head, parse_unit, ChunkHeader, Cursor, Framing, Head, Unit,
    UnitKind,
};
pub use kmp::{kmp_build, kmp_search, Matcher};
pub use machine::{
    CopyKind, FallbackReason, Http1Program, RxAction, RxConnState, RxDecision, RxInput, RxPhase,
    RxUnitReport, SendResult, TxAction, TxCompletion, TxConnState, TxDecision, TxInput, TxPhase,
    TxPostOutcome, TxUnitPath, TxUnitReport,
};

use crate::vpimap::{Vpi, VpiMap};

/// Bytes a VPI occupies; also the minimum body size worth anchoring.
pub const MIN_ANCHOR_BODY: u64 = crate::vpimap::VPI_LEN as u64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgError {
    #[error("empty search pattern")]
    EmptyPattern,
    #[error("header block is not terminated")]
    IncompleteHead,
    #[error("malformed Content-Length: {0}")]
    BadContentLength(String),
    #[error("malformed chunk size line: {0:?}")]
    BadChunkSize(String),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("protocol desync: {0}")]
    Desync(String),
}

/// Tunables shared by the receive and transmit programs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProgConfig {
    /// Receive-side parse window, in bytes past the read offset.
    pub lookahead: usize,
    /// Bound on how far the transmit side scans the outgoing buffer for the
    /// end of new metadata.
    pub tx_lookahead: usize,
}

impl Default for ProgConfig {
    fn default() -> Self {
        ProgConfig { lookahead: 256, tx_lookahead: 512 }
    }
}

/// The narrow interface a protocol program exposes to the kernel.
pub trait ProtocolProgram: Send + Sync + std::fmt::Debug {
    fn config(&self) -> ProgConfig;

    /// Decides one `recvmsg`. `issue` mints and registers a VPI for an
    /// anchor of the given length; `None` means no VPI could be issued.
    fn rx_step(
        &self,
        state: &RxConnState,
        input: &RxInput<'_>,
        issue: &mut dyn FnMut(u64) -> Option<Vpi>,
    ) -> RxDecision;

    /// Decides one `sendmsg` before any bytes move.
    fn tx_pre(&self, state: &TxConnState, input: &TxInput<'_>, vpis: &VpiMap) -> TxDecision;

    /// Folds the data plane's result back into the transmit state.
    fn tx_post(&self, state: &TxConnState, result: &SendResult) -> Result<TxPostOutcome, ProgError>;
}
