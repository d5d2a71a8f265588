//! The simulated kernel data plane.
//!
//! Sockets expose a POSIX-shaped, non-blocking surface (`recvmsg`, `sendmsg`,
//! `sock_close`, `poll`). In [`KernelMode::Baseline`] every byte is copied.
//! In [`KernelMode::Selective`] selective sockets run the protocol programs:
//! bodies stay anchored in the receive queue and are later moved, segment by
//! segment, into a send queue.
//!
//! Cross-socket transfers never hold two socket locks at once. The source
//! socket is locked to cut the anchored bytes into a [`StagingQueue`], then
//! released; the destination is locked afterwards to append them.

mod locks;
mod metrics;
mod socket;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::bufcore::{
    concat, segment_build, AccountOutcome, BufError, MemoryAccount, Segment, DEFAULT_FRAG_CAPACITY,
    DEFAULT_MAX_FRAGS,
};
use crate::protoprog::{
    CopyKind, Http1Program, ProgConfig, ProtocolProgram, RxAction, RxConnState, RxInput, SendResult,
    TxAction, TxConnState, TxInput, TxPostOutcome,
};
use crate::vpimap::{Vpi, VpiMap, VPI_LEN};
use crate::SockId;

pub use locks::{held_by_current_thread, LockTracker};
pub use metrics::{Metrics, UnitReports};
pub use socket::{Lifecycle, Readiness, SockInfo, SockOpts};

use locks::Tracked;
use socket::{Anchor, SimSocket, SockState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelMode {
    Baseline,
    Selective,
}

#[derive(Debug, Clone)]
pub struct KernelConfig {
    pub mode: KernelMode,
    pub frag_capacity: usize,
    pub max_frags: usize,
    /// Most bytes one socket may keep anchored.
    pub anchor_threshold: u64,
    pub grace_period: Duration,
    pub rcvbuf: u64,
    pub sndbuf: u64,
    pub prog: ProgConfig,
    pub vpi_salt: u64,
    pub vpi_capacity: Option<usize>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            mode: KernelMode::Selective,
            frag_capacity: DEFAULT_FRAG_CAPACITY,
            max_frags: DEFAULT_MAX_FRAGS,
            anchor_threshold: 3 << 20,
            grace_period: Duration::from_secs(5),
            rcvbuf: 128 << 10,
            sndbuf: 64 << 10,
            prog: ProgConfig::default(),
            vpi_salt: 0x5e1e_c7c0_9f00_d1e5,
            vpi_capacity: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SockError {
    #[error("operation would block")]
    WouldBlock,
    #[error("socket {0:?} is closed")]
    Closed(SockId),
    #[error("no such socket {0:?}")]
    NoSuchSocket(SockId),
    #[error("socket {0:?} has no peer")]
    NotConnected(SockId),
    #[error("invalid argument: {0}")]
    InvalidArgument(&'static str),
    #[error("anchor for {0:?} is gone")]
    AnchorLost(Vpi),
    #[error("protocol desync: {0}")]
    Desync(String),
    #[error("kernel invariant violated: {0}")]
    Fatal(String),
}

impl From<BufError> for SockError {
    fn from(e: BufError) -> Self {
        SockError::Fatal(e.to_string())
    }
}

/// Result of one `recvmsg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Recv {
    /// Bytes the application should treat as received.
    pub logical: usize,
    /// Bytes actually written into the buffer.
    pub physical: usize,
}

impl Recv {
    pub fn is_eof(&self) -> bool {
        self.logical == 0
    }
}

/// Anchored segments in flight between a receive and a send socket.
#[derive(Debug)]
pub struct StagingQueue {
    pub segments: Vec<Segment>,
    pub total: u64,
    pub origin: SockId,
}

impl StagingQueue {
    pub fn empty(origin: SockId) -> StagingQueue {
        StagingQueue { segments: Vec::new(), total: 0, origin }
    }
}

/// Findings of [`SimKernel::audit`]; empty when the run ended clean.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Audit {
    pub problems: Vec<String>,
}

impl Audit {
    pub fn is_clean(&self) -> bool {
        self.problems.is_empty()
    }
}

#[derive(Debug)]
pub struct SimKernel {
    cfg: KernelConfig,
    prog: Arc<dyn ProtocolProgram>,
    vpis: VpiMap,
    table: RwLock<HashMap<SockId, Arc<SimSocket>>>,
    next_id: AtomicU64,
    clock: Mutex<Duration>,
    metrics: Mutex<Metrics>,
    reports: Mutex<UnitReports>,
    locks: LockTracker,
}

impl SimKernel {
    pub fn new(cfg: KernelConfig) -> SimKernel {
        let prog = Arc::new(Http1Program::new(cfg.prog));
        SimKernel::with_program(cfg, prog)
    }

    pub fn with_program(cfg: KernelConfig, prog: Arc<dyn ProtocolProgram>) -> SimKernel {
        let vpis = match cfg.vpi_capacity {
            Some(cap) => VpiMap::with_capacity_limit(cfg.vpi_salt, cap),
            None => VpiMap::new(cfg.vpi_salt),
        };
        SimKernel {
            cfg,
            prog,
            vpis,
            table: RwLock::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            clock: Mutex::new(Duration::ZERO),
            metrics: Mutex::new(Metrics::default()),
            reports: Mutex::new(UnitReports::default()),
            locks: LockTracker::default(),
        }
    }

    pub fn config(&self) -> &KernelConfig {
        &self.cfg
    }

    pub fn mode(&self) -> KernelMode {
        self.cfg.mode
    }

    pub fn vpis(&self) -> &VpiMap {
        &self.vpis
    }

    pub fn lock_tracker(&self) -> &LockTracker {
        &self.locks
    }

    pub fn metrics(&self) -> Metrics {
        self.metrics.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn unit_reports(&self) -> UnitReports {
        self.reports.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn now(&self) -> Duration {
        *self.clock.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn meter(&self, st: &SockState, f: impl FnOnce(&mut Metrics)) {
        if st.opts.metered {
            f(&mut self.metrics.lock().unwrap_or_else(|e| e.into_inner()));
        }
    }

    fn account(&self, acct: &mut MemoryAccount, delta: i64, what: &str) -> Result<(), SockError> {
        match acct.adjust(delta) {
            AccountOutcome::Ok => Ok(()),
            outcome => {
                if outcome == AccountOutcome::Underflow {
                    self.metrics.lock().unwrap_or_else(|e| e.into_inner()).underflow_events += 1;
                }
                Err(SockError::Fatal(format!("{what}: {outcome:?} adjusting by {delta}")))
            }
        }
    }

    fn socket(&self, id: SockId) -> Result<Arc<SimSocket>, SockError> {
        let table = self.table.read().unwrap_or_else(|e| e.into_inner());
        table.get(&id).cloned().ok_or(SockError::NoSuchSocket(id))
    }

    fn lock<'a>(&'a self, s: &'a SimSocket) -> Tracked<'a, SockState> {
        self.locks.lock(&s.state)
    }

    fn selective(&self, st: &SockState) -> bool {
        self.cfg.mode == KernelMode::Selective && st.opts.selective
    }

    fn new_socket(&self, opts: SockOpts) -> SockId {
        let id = SockId(self.next_id.fetch_add(1, Ordering::Relaxed));
        let st = SockState::new(
            opts,
            opts.rcvbuf.unwrap_or(self.cfg.rcvbuf),
            opts.sndbuf.unwrap_or(self.cfg.sndbuf),
        );
        let sock = SimSocket { state: Mutex::new(st), send_serial: Mutex::new(()) };
        self.table.write().unwrap_or_else(|e| e.into_inner()).insert(id, Arc::new(sock));
        id
    }

    /// Creates two connected sockets.
    pub fn socket_pair(&self, a: SockOpts, b: SockOpts) -> (SockId, SockId) {
        let ia = self.new_socket(a);
        let ib = self.new_socket(b);
        for (me, peer) in [(ia, ib), (ib, ia)] {
            let s = self.socket(me).expect("just created");
            self.lock(&s).peer = Some(peer);
        }
        (ia, ib)
    }

    /// Receives into `dst`; `dst.len()` is the user capacity.
    ///
    /// Returns a zero-length [`Recv`] at end of stream. In Selective mode the
    /// buffer may be written sparsely: logically skipped ranges keep whatever
    /// the buffer held before.
    pub fn recvmsg(&self, sock: SockId, dst: &mut [u8]) -> Result<Recv, SockError> {
        if dst.is_empty() {
            return Err(SockError::InvalidArgument("zero-capacity receive buffer"));
        }
        let s = self.socket(sock)?;
        let mut st = self.lock(&s);
        if st.lifecycle != Lifecycle::Open {
            return Err(SockError::Closed(sock));
        }
        let unread = st.recv_queue.unread();
        if unread == 0 {
            return if st.peer_eof { Ok(Recv { logical: 0, physical: 0 }) } else { Err(SockError::WouldBlock) };
        }

        if !self.selective(&st) {
            let n = dst.len().min(unread);
            let lc = st.recv_queue.logical_consumed();
            st.recv_queue.copy_out(lc, &mut dst[..n]);
            let split = st.recv_queue.split_range(lc, n)?;
            self.account(&mut st.recv_account, -(n as i64), "recv uncharge")?;
            st.kernel_to_user += n as u64;
            self.meter(&st, |m| {
                m.std_copy_bytes += n as u64;
                m.kernel_to_user_bytes += n as u64;
                m.split_copy_bytes += split.split_copy as u64;
            });
            return Ok(Recv { logical: n, physical: n });
        }

        let lc = st.recv_queue.logical_consumed();
        let window = st.recv_queue.window(lc, self.cfg.prog.lookahead);
        let input = RxInput {
            window: &window,
            available: unread as u64,
            capacity: dst.len(),
            eof: st.peer_eof,
            anchor_room: self.cfg.anchor_threshold.saturating_sub(st.outstanding()),
        };
        let now = self.now();
        let seq0 = st.vpi_seq;
        let mut issued: Vec<(Vpi, u64)> = Vec::new();
        let decision = {
            let vpis = &self.vpis;
            let issued = &mut issued;
            let mut issue = |len: u64| {
                let seq = seq0 + issued.len() as u64;
                let vpi = vpis.generate(sock, seq, len, now).ok()?;
                issued.push((vpi, len));
                Some(vpi)
            };
            self.prog.rx_step(&st.rx, &input, &mut issue)
        };
        st.vpi_seq += issued.len() as u64;

        let mut split_copy = 0;
        let (mut meta_bytes, mut full_bytes) = (0u64, 0u64);
        for action in &decision.actions {
            match *action {
                RxAction::CopyToUser { at, len, kind } => {
                    let lc = st.recv_queue.logical_consumed();
                    st.recv_queue.copy_out(lc, &mut dst[at..at + len]);
                    split_copy += st.recv_queue.split_range(lc, len)?.split_copy;
                    self.account(&mut st.recv_account, -(len as i64), "recv uncharge")?;
                    match kind {
                        CopyKind::Metadata => meta_bytes += len as u64,
                        CopyKind::Full => full_bytes += len as u64,
                    }
                }
                RxAction::InjectVpi { at, vpi } => {
                    dst[at..at + VPI_LEN].copy_from_slice(&vpi.to_bytes());
                    st.recv_queue.advance_logical(VPI_LEN)?;
                    let len = issued
                        .iter()
                        .find(|(v, _)| *v == vpi)
                        .map(|(_, len)| *len)
                        .ok_or_else(|| SockError::Fatal(format!("{vpi:?} injected but never issued")))?;
                    st.anchors.push_back(Anchor { vpi, remaining: len, transferred: 0 });
                    st.refcount += 1;
                    meta_bytes += VPI_LEN as u64;
                }
                RxAction::SkipLogical { len, .. } => st.recv_queue.advance_logical(len)?,
            }
        }
        st.rx = decision.next.clone();
        st.kernel_to_user += meta_bytes + full_bytes;
        st.refresh_recv_budget(self.cfg.anchor_threshold);
        let outstanding = st.outstanding();
        let metadata_path = decision
            .actions
            .iter()
            .any(|a| matches!(a, RxAction::InjectVpi { .. } | RxAction::CopyToUser { kind: CopyKind::Metadata, .. }));
        self.meter(&st, |m| {
            m.prog_invocations += 1;
            m.meta_prog_invocations += u64::from(metadata_path);
            m.meta_selcopy_bytes += meta_bytes;
            m.std_copy_bytes += full_bytes;
            m.kernel_to_user_bytes += meta_bytes + full_bytes;
            m.split_copy_bytes += split_copy as u64;
            m.vpis_issued += issued.len() as u64;
            m.fallbacks += u64::from(decision.fallback.is_some());
            m.peak_anchored_bytes = m.peak_anchored_bytes.max(outstanding);
        });
        if let (true, Some(report)) = (st.opts.metered, decision.completed) {
            self.reports.lock().unwrap_or_else(|e| e.into_inner()).rx.push((sock, report));
        }
        if decision.is_wait() {
            return Err(SockError::WouldBlock);
        }
        Ok(Recv { logical: decision.logical_len(), physical: decision.physical_len() })
    }

    /// Sends `buf`, returning how many bytes were accepted.
    pub fn sendmsg(&self, sock: SockId, buf: &[u8]) -> Result<usize, SockError> {
        if buf.is_empty() {
            return Err(SockError::InvalidArgument("empty send buffer"));
        }
        let s = self.socket(sock)?;
        let _serial = s.send_serial.lock().unwrap_or_else(|e| e.into_inner());
        let mut st = self.lock(&s);
        if st.lifecycle != Lifecycle::Open || st.shut_wr {
            return Err(SockError::Closed(sock));
        }
        if st.peer.is_none() {
            return Err(SockError::NotConnected(sock));
        }

        if !self.selective(&st) {
            let n = buf.len().min(st.send_account.room() as usize);
            if n == 0 {
                return Err(SockError::WouldBlock);
            }
            self.push_copy(&mut st, &buf[..n], CopyKind::Full)?;
            if n < buf.len() {
                self.meter(&st, |m| m.partial_sends += 1);
            }
            return Ok(n);
        }

        let d = self.prog.tx_pre(&st.tx, &TxInput { buf }, &self.vpis);
        let metadata_path = d.lookup.is_some()
            || d.actions.iter().any(|a| matches!(a, TxAction::CopyFromUser { kind: CopyKind::Metadata, .. }));
        self.meter(&st, |m| {
            m.prog_invocations += 1;
            m.meta_prog_invocations += u64::from(metadata_path);
        });
        if d.is_wait() {
            return Err(SockError::WouldBlock);
        }
        let note_decision = |m: &mut Metrics| {
            m.prog_invocations += 1;
            match d.lookup {
                Some(true) => m.vpi_lookup_hits += 1,
                Some(false) => m.vpi_lookup_misses += 1,
                None => {}
            }
            m.fallbacks += u64::from(d.fallback.is_some());
        };

        if !d.atomic {
            let requested = d.requested();
            let n = requested.min(st.send_account.room() as usize);
            if n == 0 {
                return Err(SockError::WouldBlock);
            }
            let mut left = n;
            for action in &d.actions {
                let TxAction::CopyFromUser { range, kind } = action else {
                    return Err(SockError::Fatal(format!("non-atomic decision with {action:?}")));
                };
                let take = left.min(range.len());
                self.push_copy(&mut st, &buf[range.start..range.start + take], *kind)?;
                left -= take;
            }
            let out = self.post(&d.next, SendResult { accepted: n, copied: n, transferred: 0 })?;
            self.meter(&st, |m| {
                note_decision(m);
                m.partial_sends += u64::from(n < requested);
            });
            self.finish_post(sock, &mut st, out)?;
            return Ok(n);
        }

        // FastPath: metadata, then the anchored payload, then any deep-copied tail.
        let mut meta = 0..0;
        let mut xfer = None;
        let mut tail = 0..0;
        for action in &d.actions {
            match action {
                TxAction::CopyFromUser { range, .. } => meta = range.clone(),
                TxAction::TransferAnchored { len, source, vpi, .. } => xfer = Some((*source, *vpi, *len as u64)),
                TxAction::Passthrough { range } => tail = range.clone(),
            }
        }
        let room = st.send_account.room() as usize;
        if room < meta.len() {
            return Err(SockError::WouldBlock);
        }
        let tail_take = tail.len().min(room - meta.len());
        drop(st);

        let staging = match xfer {
            Some((source, vpi, len)) => self.stage_extract(source, vpi, len)?,
            None => StagingQueue::empty(sock),
        };

        let mut st = self.lock(&s);
        self.push_copy(&mut st, &buf[meta.clone()], CopyKind::Metadata)?;
        let transferred = staging.total as usize;
        self.commit_locked(&mut st, staging)?;
        self.push_copy(&mut st, &buf[tail.start..tail.start + tail_take], CopyKind::Full)?;
        let accepted = meta.len() + transferred + tail_take;
        let result = SendResult { accepted, copied: meta.len() + tail_take, transferred };
        let out = self.post(&d.next, result)?;
        self.meter(&st, |m| {
            note_decision(m);
            m.fastpath_sends += 1;
            m.fastpath_tail_partial += u64::from(tail_take < tail.len());
        });
        let completed = out.completed;
        self.finish_post(sock, &mut st, out)?;
        drop(st);
        if let Some(c) = completed {
            self.release_anchor(c.source, c.vpi)?;
        }
        Ok(accepted)
    }

    fn post(&self, next: &TxConnState, r: SendResult) -> Result<TxPostOutcome, SockError> {
        self.prog.tx_post(next, &r).map_err(|e| SockError::Desync(e.to_string()))
    }

    fn finish_post(&self, sock: SockId, st: &mut SockState, out: TxPostOutcome) -> Result<(), SockError> {
        st.tx = out.next;
        if let (true, Some(report)) = (st.opts.metered, out.report) {
            self.reports.lock().unwrap_or_else(|e| e.into_inner()).tx.push((sock, report));
        }
        Ok(())
    }

    /// Copies user bytes into fresh segments on the send queue.
    fn push_copy(&self, st: &mut SockState, bytes: &[u8], kind: CopyKind) -> Result<(), SockError> {
        if bytes.is_empty() {
            return Ok(());
        }
        let n = bytes.len() as u64;
        self.account(&mut st.send_account, n as i64, "send charge")?;
        let segs = segment_build(bytes, self.cfg.frag_capacity, self.cfg.max_frags);
        let count = segs.len() as u64;
        st.send_queue.extend(segs);
        st.user_to_kernel += n;
        self.meter(st, |m| {
            match kind {
                CopyKind::Metadata => {
                    m.meta_selcopy_bytes += n;
                    m.meta_alloc_bytes += n;
                }
                CopyKind::Full => {
                    m.std_copy_bytes += n;
                    m.std_alloc_bytes += n;
                }
            }
            m.user_to_kernel_bytes += n;
            m.segments_forwarded += count;
        });
        Ok(())
    }

    /// Cuts `n` anchored bytes of `vpi` out of `recv`'s queue.
    ///
    /// Holds only the receive socket's lock.
    pub fn stage_extract(&self, recv: SockId, vpi: Vpi, n: u64) -> Result<StagingQueue, SockError> {
        if n == 0 {
            return Ok(StagingQueue::empty(recv));
        }
        let s = self.socket(recv)?;
        let mut st = self.lock(&s);
        let (idx, off) = st.anchor_position(vpi).ok_or(SockError::AnchorLost(vpi))?;
        let remaining = st.anchors[idx].remaining;
        if n > remaining {
            return Err(SockError::Desync(format!("transfer of {n} bytes from an anchor holding {remaining}")));
        }
        let consumed = st.recv_queue.logical_consumed() as u64;
        if off + n > consumed {
            return Err(SockError::Desync(format!(
                "transfer reaches byte {} but only {consumed} were delivered",
                off + n
            )));
        }
        let split = st.recv_queue.split_range(off as usize, n as usize)?;
        self.account(&mut st.recv_account, -(n as i64), "anchor uncharge")?;
        let a = &mut st.anchors[idx];
        a.remaining -= n;
        a.transferred += n;
        st.refresh_recv_budget(self.cfg.anchor_threshold);
        self.vpis.note_transferred(vpi, n);
        self.meter(&st, |m| {
            m.split_copy_bytes += split.split_copy as u64;
            m.transfers += 1;
        });
        Ok(StagingQueue { segments: split.segments, total: n, origin: recv })
    }

    /// Appends staged segments to `send`'s queue under its lock alone.
    pub fn commit_transfer(&self, staging: StagingQueue, send: SockId) -> Result<(), SockError> {
        if staging.total == 0 {
            return Ok(());
        }
        let s = self.socket(send)?;
        let mut st = self.lock(&s);
        self.commit_locked(&mut st, staging)
    }

    fn commit_locked(&self, st: &mut SockState, staging: StagingQueue) -> Result<(), SockError> {
        if staging.total == 0 {
            return Ok(());
        }
        st.send_account.raise_temp(staging.total);
        self.account(&mut st.send_account, staging.total as i64, "transfer charge")?;
        let count = staging.segments.len() as u64;
        for mut seg in staging.segments {
            seg.mark_transferred();
            st.send_queue.push_back(seg);
        }
        self.meter(st, |m| {
            m.meta_skb_trans_count += count;
            m.meta_skb_trans_bytes += staging.total;
            m.segments_forwarded += count;
        });
        Ok(())
    }

    /// Drops the anchor for `vpi` after its transmission completed.
    fn release_anchor(&self, source: SockId, vpi: Vpi) -> Result<(), SockError> {
        self.vpis.remove(vpi);
        let s = self.socket(source)?;
        let mut st = self.lock(&s);
        let Some((idx, off)) = st.anchor_position(vpi) else {
            return Ok(());
        };
        let a = st.anchors.remove(idx).expect("position is valid");
        if a.remaining > 0 {
            st.recv_queue.split_range(off as usize, a.remaining as usize)?;
            self.account(&mut st.recv_account, -(a.remaining as i64), "anchor drop")?;
            self.meter(&st, |m| m.anchor_mismatch_bytes += a.remaining);
        }
        st.refcount -= 1;
        st.rx.reset_for(vpi);
        st.refresh_recv_budget(self.cfg.anchor_threshold);
        Ok(())
    }

    /// Delivers queued send data to the peer, like the lower stack would.
    pub fn transmit_drain(&self, sock: SockId) -> Result<usize, SockError> {
        let s = self.socket(sock)?;
        let _serial = s.send_serial.lock().unwrap_or_else(|e| e.into_inner());
        let (peer, pending) = {
            let st = self.lock(&s);
            (st.peer.ok_or(SockError::NotConnected(sock))?, st.send_queue.total_bytes() as u64)
        };
        let ps = self.socket(peer)?;

        let (reserved, discard) = {
            let mut p = self.lock(&ps);
            if p.lifecycle == Lifecycle::Closed {
                (pending, true)
            } else {
                let r = pending.min(p.recv_account.room());
                if r > 0 {
                    self.account(&mut p.recv_account, r as i64, "drain reserve")?;
                }
                (r, false)
            }
        };

        let (segments, eof) = {
            let mut st = self.lock(&s);
            let split = st.send_queue.split_front(reserved as usize)?;
            if reserved > 0 {
                self.account(&mut st.send_account, -(reserved as i64), "drain uncharge")?;
            }
            let covered: usize = split.segments.iter().filter(|g| g.is_transferred()).map(Segment::len).sum();
            st.send_account.lower_temp(covered as u64);
            self.meter(&st, |m| m.split_copy_bytes += split.split_copy as u64);
            (split.segments, st.shut_wr && st.send_queue.is_empty())
        };

        if !discard && (reserved > 0 || eof) {
            let mut p = self.lock(&ps);
            if reserved > 0 {
                let bytes = concat(&segments);
                p.recv_queue.extend(segment_build(&bytes, self.cfg.frag_capacity, self.cfg.max_frags));
            }
            if eof {
                p.peer_eof = true;
            }
        }
        Ok(if discard { 0 } else { reserved as usize })
    }

    /// No more application sends; the peer sees end of stream once the send
    /// queue drains.
    pub fn shutdown_write(&self, sock: SockId) -> Result<(), SockError> {
        let s = self.socket(sock)?;
        self.lock(&s).shut_wr = true;
        Ok(())
    }

    /// Closes the application's handle. Sockets still referenced by anchors
    /// linger in deferred teardown until the grace period ends.
    pub fn sock_close(&self, sock: SockId) -> Result<(), SockError> {
        let s = self.socket(sock)?;
        let now = self.now();
        let mut st = self.lock(&s);
        if st.lifecycle != Lifecycle::Open {
            return Ok(());
        }
        st.shut_wr = true;
        // Unread data is discarded; bytes of a partly delivered anchor that
        // were never delivered go with it.
        let lc = st.recv_queue.logical_consumed();
        let unread = st.recv_queue.unread();
        if unread > 0 {
            st.recv_queue.split_range(lc, unread)?;
            self.account(&mut st.recv_account, -(unread as i64), "close discard")?;
        }
        let mut held = lc as u64;
        for a in st.anchors.iter_mut() {
            a.remaining = a.remaining.min(held);
            held -= a.remaining;
        }
        st.refcount -= 1;
        if st.anchors.is_empty() {
            st.lifecycle = Lifecycle::Closed;
            st.rx = RxConnState::default();
            st.tx = TxConnState::default();
        } else {
            st.refcount += 1;
            st.lifecycle = Lifecycle::DeferredTeardown { deadline: now + self.cfg.grace_period };
        }
        Ok(())
    }

    /// Advances virtual time and reaps sockets whose grace period ended,
    /// in deadline order. Returns the freed sockets.
    pub fn clock_advance(&self, dt: Duration) -> Result<Vec<SockId>, SockError> {
        let now = {
            let mut c = self.clock.lock().unwrap_or_else(|e| e.into_inner());
            *c += dt;
            *c
        };
        let sockets: Vec<(SockId, Arc<SimSocket>)> = {
            let table = self.table.read().unwrap_or_else(|e| e.into_inner());
            table.iter().map(|(id, s)| (*id, Arc::clone(s))).collect()
        };
        let mut due = Vec::new();
        for (id, s) in &sockets {
            if let Lifecycle::DeferredTeardown { deadline } = self.lock(s).lifecycle {
                if deadline <= now {
                    due.push((deadline, *id, Arc::clone(s)));
                }
            }
        }
        due.sort_by_key(|(deadline, id, _)| (*deadline, *id));
        let mut freed = Vec::new();
        for (_, id, s) in due {
            let mut st = self.lock(&s);
            if !matches!(st.lifecycle, Lifecycle::DeferredTeardown { .. }) {
                continue;
            }
            for a in std::mem::take(&mut st.anchors) {
                self.vpis.remove(a.vpi);
                st.refcount -= 1;
            }
            let held = st.recv_queue.total_bytes();
            st.recv_queue.drain_all();
            if held > 0 {
                self.account(&mut st.recv_account, -(held as i64), "teardown drop")?;
            }
            st.rx = RxConnState::default();
            st.tx = TxConnState::default();
            st.refcount -= 1;
            st.lifecycle = Lifecycle::Closed;
            freed.push(id);
        }
        Ok(freed)
    }

    pub fn poll(&self, sock: SockId) -> Result<Readiness, SockError> {
        let s = self.socket(sock)?;
        let st = self.lock(&s);
        let open = st.lifecycle == Lifecycle::Open;
        Ok(Readiness {
            readable: open && (st.recv_queue.unread() > 0 || st.peer_eof),
            writable: open && !st.shut_wr && st.send_account.room() > 0,
            eof: st.peer_eof && st.recv_queue.unread() == 0,
            open,
        })
    }

    pub fn sock_info(&self, sock: SockId) -> Result<SockInfo, SockError> {
        let s = self.socket(sock)?;
        let st = self.lock(&s);
        Ok(SockInfo {
            sock,
            lifecycle: st.lifecycle,
            refcount: st.refcount,
            recv_bytes: st.recv_queue.total_bytes() as u64,
            recv_unread: st.recv_queue.unread() as u64,
            anchored_held: st.recv_queue.logical_consumed() as u64,
            anchors_live: st.anchors.len(),
            anchors_outstanding: st.outstanding(),
            send_bytes: st.send_queue.total_bytes() as u64,
            recv_account: st.recv_account,
            send_account: st.send_account,
            rx_phase: st.rx.phase,
            tx_phase: st.tx.phase,
            bypass: st.rx.bypass.is_some() || st.tx.bypass.is_some(),
            peer_eof: st.peer_eof,
            kernel_to_user: st.kernel_to_user,
            user_to_kernel: st.user_to_kernel,
        })
    }

    pub fn sockets(&self) -> Vec<SockId> {
        let mut ids: Vec<_> = self.table.read().unwrap_or_else(|e| e.into_inner()).keys().copied().collect();
        ids.sort();
        ids
    }

    /// End-of-run hygiene: every socket closed and released, every account
    /// back at zero, no live identifiers, no lock or accounting violations.
    pub fn audit(&self) -> Audit {
        let mut problems = Vec::new();
        for id in self.sockets() {
            let Ok(info) = self.sock_info(id) else { continue };
            if info.lifecycle != Lifecycle::Closed || info.refcount != 0 {
                problems.push(format!("{id:?}: {:?} with refcount {}", info.lifecycle, info.refcount));
            }
            for (name, acct) in [("recv", info.recv_account), ("send", info.send_account)] {
                if acct.charged() != 0 || acct.temp_raise() != 0 {
                    problems.push(format!(
                        "{id:?}: {name} account charged {} temp_raise {}",
                        acct.charged(),
                        acct.temp_raise()
                    ));
                }
            }
        }
        if !self.vpis.is_empty() {
            problems.push(format!("{} VPI entries still live", self.vpis.len()));
        }
        if self.locks.violations() > 0 {
            problems.push(format!("{} nested socket-lock acquisitions", self.locks.violations()));
        }
        let underflows = self.metrics().underflow_events;
        if underflows > 0 {
            problems.push(format!("{underflows} accounting underflows"));
        }
        Audit { problems }
    }
}
