use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde::Serialize;

use crate::bufcore::{MemoryAccount, SegmentQueue};
use crate::protoprog::{RxConnState, RxPhase, TxConnState, TxPhase};
use crate::vpimap::Vpi;
use crate::SockId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Lifecycle {
    Open,
    DeferredTeardown { deadline: Duration },
    Closed,
}

/// Per-socket behaviour switches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SockOpts {
    /// Run the protocol programs on this socket (Selective mode only).
    pub selective: bool,
    /// Count this socket's traffic in the run metrics.
    pub metered: bool,
    /// Overrides the kernel-wide receive budget.
    pub rcvbuf: Option<u64>,
    /// Overrides the kernel-wide send budget.
    pub sndbuf: Option<u64>,
}

impl SockOpts {
    /// A proxy-side socket: selective and metered.
    pub fn proxy() -> SockOpts {
        SockOpts { selective: true, metered: true, ..SockOpts::default() }
    }

    /// A client or backend socket: plain copy semantics, not metered.
    pub fn endpoint() -> SockOpts {
        SockOpts::default()
    }
}

/// One anchored payload. Anchors occupy consecutive byte regions at the
/// front of the receive queue, in issue order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Anchor {
    pub vpi: Vpi,
    /// Bytes still held in the receive queue.
    pub remaining: u64,
    pub transferred: u64,
}

#[derive(Debug)]
pub(crate) struct SockState {
    pub opts: SockOpts,
    pub peer: Option<SockId>,
    pub recv_queue: SegmentQueue,
    pub send_queue: SegmentQueue,
    pub recv_account: MemoryAccount,
    pub send_account: MemoryAccount,
    pub rcvbuf: u64,
    pub refcount: u32,
    pub lifecycle: Lifecycle,
    pub rx: RxConnState,
    pub tx: TxConnState,
    pub anchors: VecDeque<Anchor>,
    pub vpi_seq: u64,
    /// No further bytes will arrive from the peer.
    pub peer_eof: bool,
    pub shut_wr: bool,
    pub kernel_to_user: u64,
    pub user_to_kernel: u64,
}

impl SockState {
    pub fn new(opts: SockOpts, rcvbuf: u64, sndbuf: u64) -> SockState {
        SockState {
            opts,
            peer: None,
            recv_queue: SegmentQueue::new(),
            send_queue: SegmentQueue::new(),
            recv_account: MemoryAccount::new(rcvbuf),
            send_account: MemoryAccount::new(sndbuf),
            rcvbuf,
            refcount: 1,
            lifecycle: Lifecycle::Open,
            rx: RxConnState::default(),
            tx: TxConnState::default(),
            anchors: VecDeque::new(),
            vpi_seq: 0,
            peer_eof: false,
            shut_wr: false,
            kernel_to_user: 0,
            user_to_kernel: 0,
        }
    }

    /// Anchored bytes this socket still holds or will hold.
    pub fn outstanding(&self) -> u64 {
        self.anchors.iter().map(|a| a.remaining).sum()
    }

    /// Index of `vpi`'s anchor and its byte offset in the receive queue.
    pub fn anchor_position(&self, vpi: Vpi) -> Option<(usize, u64)> {
        let mut off = 0;
        for (i, a) in self.anchors.iter().enumerate() {
            if a.vpi == vpi {
                return Some((i, off));
            }
            off += a.remaining;
        }
        None
    }

    /// The receive budget grows by the bytes held as anchors, up to the
    /// anchoring threshold.
    pub fn refresh_recv_budget(&mut self, threshold: u64) {
        let held = self.recv_queue.logical_consumed() as u64;
        self.recv_account.set_base_limit(self.rcvbuf + held.min(threshold));
    }
}

#[derive(Debug)]
pub(crate) struct SimSocket {
    pub state: Mutex<SockState>,
    /// Serializes `sendmsg` and `transmit_drain` on this socket. Never held
    /// together with another socket's `send_serial`.
    pub send_serial: Mutex<()>,
}

/// Point-in-time view of one socket.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SockInfo {
    pub sock: SockId,
    pub lifecycle: Lifecycle,
    pub refcount: u32,
    pub recv_bytes: u64,
    pub recv_unread: u64,
    /// Logically consumed bytes still physically held.
    pub anchored_held: u64,
    pub anchors_live: usize,
    pub anchors_outstanding: u64,
    pub send_bytes: u64,
    pub recv_account: MemoryAccount,
    pub send_account: MemoryAccount,
    pub rx_phase: RxPhase,
    pub tx_phase: TxPhase,
    pub bypass: bool,
    pub peer_eof: bool,
    /// Bytes physically copied out to the application.
    pub kernel_to_user: u64,
    /// Bytes physically copied in from the application.
    pub user_to_kernel: u64,
}

/// What `poll` reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Readiness {
    pub readable: bool,
    pub writable: bool,
    pub eof: bool,
    pub open: bool,
}
