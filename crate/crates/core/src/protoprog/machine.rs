use std::borrow::Cow;
use std::ops::Range;

use serde::Serialize;

use super::http1::{parse_unit, Cursor, Framing, Unit, UnitKind};
use super::{ProgConfig, ProgError, ProtocolProgram, MIN_ANCHOR_BODY};
use crate::vpimap::{Vpi, VpiMap, VPI_LEN};
use crate::SockId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RxPhase {
    Default,
    MetadataParsed,
    /// Transient: entered and left inside a single `rx_step`.
    WriteVpi,
    FastPath,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TxPhase {
    Default,
    MetadataParsed,
    FastPath,
    FallbackBypass,
}

/// Why a connection stopped parsing and went to full copy for good.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FallbackReason {
    Parse,
    LookaheadOverflow,
    TruncatedStream,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CopyKind {
    /// Selective copy of protocol metadata.
    Metadata,
    /// Ordinary full copy.
    Full,
}

/// Per-connection receive program state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RxConnState {
    pub phase: RxPhase,
    pub cursor: Cursor,
    pub unit_kind: UnitKind,
    pub framing: Framing,
    pub metadata_len: u64,
    pub metadata_copied: u64,
    pub body_total: u64,
    pub body_effective: u64,
    pub logical_body_consumed: u64,
    pub pending_vpi: Option<Vpi>,
    /// Bytes of the current unit still owed through the ordinary copy path.
    pub full_copy_remaining: u64,
    pub unit_kernel_to_user: u64,
    pub bypass: Option<FallbackReason>,
}

impl Default for RxConnState {
    fn default() -> Self {
        RxConnState {
            phase: RxPhase::Default,
            cursor: Cursor::Head,
            unit_kind: UnitKind::Head,
            framing: Framing::NoBody,
            metadata_len: 0,
            metadata_copied: 0,
            body_total: 0,
            body_effective: 0,
            logical_body_consumed: 0,
            pending_vpi: None,
            full_copy_remaining: 0,
            unit_kernel_to_user: 0,
            bypass: None,
        }
    }
}

impl RxConnState {
    fn begin_unit(&mut self, u: &Unit, anchor_room: u64) {
        self.cursor = u.next;
        self.unit_kind = u.kind;
        self.framing = u.framing;
        self.metadata_len = u.metadata_len;
        self.metadata_copied = 0;
        self.body_total = u.body_len;
        self.logical_body_consumed = 0;
        self.unit_kernel_to_user = 0;
        self.pending_vpi = None;
        if u.body_len < MIN_ANCHOR_BODY || anchor_room < MIN_ANCHOR_BODY {
            self.body_effective = 0;
            self.full_copy_remaining = u.total_len();
            self.phase = RxPhase::Default;
        } else {
            self.body_effective = u.body_len.min(anchor_room);
            self.full_copy_remaining = 0;
            self.phase = RxPhase::MetadataParsed;
        }
    }

    /// Gives up on anchoring the current body; it is delivered by copy.
    fn downgrade(&mut self) {
        self.body_effective = 0;
        self.full_copy_remaining = self.body_total - self.logical_body_consumed;
        self.phase = RxPhase::Default;
    }

    fn finish_unit(&mut self) -> RxUnitReport {
        let report = RxUnitReport {
            kind: self.unit_kind,
            metadata_len: self.metadata_len,
            body_len: self.body_total,
            anchored: self.body_effective,
            kernel_to_user: self.unit_kernel_to_user,
            vpi: self.pending_vpi,
        };
        let cursor = self.cursor;
        let bypass = self.bypass;
        *self = RxConnState { cursor, bypass, ..RxConnState::default() };
        report
    }

    /// Cross-path reset after the transmit side completed `vpi`.
    ///
    /// Only applies while this state is still working on that anchor; any
    /// body the application has not consumed yet is delivered by copy.
    pub fn reset_for(&mut self, vpi: Vpi) -> bool {
        if self.pending_vpi != Some(vpi) {
            return false;
        }
        self.pending_vpi = None;
        if self.phase == RxPhase::FastPath && self.logical_body_consumed < self.body_total {
            self.downgrade();
        } else {
            let cursor = self.cursor;
            let bypass = self.bypass;
            *self = RxConnState { cursor, bypass, ..RxConnState::default() };
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RxUnitReport {
    pub kind: UnitKind,
    pub metadata_len: u64,
    pub body_len: u64,
    /// Body bytes delivered logically while staying in the kernel.
    pub anchored: u64,
    pub kernel_to_user: u64,
    #[serde(skip)]
    pub vpi: Option<Vpi>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RxAction {
    /// Copy the next `len` unread bytes to user offset `at`.
    CopyToUser { at: usize, len: usize, kind: CopyKind },
    /// Write the 8-byte identifier at `at`; the first 8 body bytes become anchored.
    InjectVpi { at: usize, vpi: Vpi },
    /// Report `len` more body bytes as read while leaving them anchored.
    SkipLogical { at: usize, len: usize },
}

#[derive(Debug, Clone, Copy)]
pub struct RxInput<'a> {
    /// Unread bytes from the read offset, at most `lookahead` long.
    pub window: &'a [u8],
    /// Total unread bytes in the queue.
    pub available: u64,
    pub capacity: usize,
    /// Peer has finished sending.
    pub eof: bool,
    /// How many more bytes this socket may anchor.
    pub anchor_room: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RxDecision {
    pub actions: Vec<RxAction>,
    pub next: RxConnState,
    pub completed: Option<RxUnitReport>,
    pub fallback: Option<FallbackReason>,
}

impl RxDecision {
    /// What `recvmsg` reports to the application.
    pub fn logical_len(&self) -> usize {
        self.actions
            .iter()
            .map(|a| match *a {
                RxAction::CopyToUser { len, .. } | RxAction::SkipLogical { len, .. } => len,
                RxAction::InjectVpi { .. } => VPI_LEN,
            })
            .sum()
    }

    /// Bytes physically written into the user buffer.
    pub fn physical_len(&self) -> usize {
        self.actions
            .iter()
            .map(|a| match *a {
                RxAction::CopyToUser { len, .. } => len,
                RxAction::InjectVpi { .. } => VPI_LEN,
                RxAction::SkipLogical { .. } => 0,
            })
            .sum()
    }

    pub fn is_wait(&self) -> bool {
        self.actions.is_empty()
    }
}

struct RxPlan {
    actions: Vec<RxAction>,
    at: usize,
    cap: usize,
    avail: u64,
}

impl RxPlan {
    fn budget(&self, limit: u64) -> usize {
        (self.cap as u64).min(self.avail).min(limit) as usize
    }

    fn copy(&mut self, len: usize, kind: CopyKind) {
        self.actions.push(RxAction::CopyToUser { at: self.at, len, kind });
        self.advance(len);
    }

    fn skip(&mut self, len: usize) {
        self.actions.push(RxAction::SkipLogical { at: self.at, len });
        self.advance(len);
    }

    fn inject(&mut self, vpi: Vpi) {
        self.actions.push(RxAction::InjectVpi { at: self.at, vpi });
        self.advance(VPI_LEN);
    }

    fn advance(&mut self, n: usize) {
        self.at += n;
        self.cap -= n;
        self.avail -= n as u64;
    }
}

/// Per-connection transmit program state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxConnState {
    pub phase: TxPhase,
    pub cursor: Cursor,
    pub unit_kind: UnitKind,
    pub metadata_len: u64,
    pub metadata_copied: u64,
    pub body_len: u64,
    /// Metadata plus full body of the unit being sent.
    pub expected_total: u64,
    pub cumulative_sent: u64,
    pub source_sock: Option<SockId>,
    pub vpi: Option<Vpi>,
    pub anchored_len: u64,
    /// A short unit still passing through in `Default`; tracked apart from
    /// the cumulative counter, which only runs outside `Default`.
    pub short_remaining: u64,
    /// Leading metadata bytes accepted before the metadata was complete.
    pub head_scratch: Vec<u8>,
    pub scratch_pending: usize,
    pub unit_user_to_kernel: u64,
    pub unit_transferred: u64,
    pub bypass: Option<FallbackReason>,
}

impl Default for TxConnState {
    fn default() -> Self {
        TxConnState {
            phase: TxPhase::Default,
            cursor: Cursor::Head,
            unit_kind: UnitKind::Head,
            metadata_len: 0,
            metadata_copied: 0,
            body_len: 0,
            expected_total: 0,
            cumulative_sent: 0,
            source_sock: None,
            vpi: None,
            anchored_len: 0,
            short_remaining: 0,
            head_scratch: Vec::new(),
            scratch_pending: 0,
            unit_user_to_kernel: 0,
            unit_transferred: 0,
            bypass: None,
        }
    }
}

impl TxConnState {
    fn clear_unit(&mut self) {
        let cursor = self.cursor;
        let bypass = self.bypass;
        *self = TxConnState { cursor, bypass, ..TxConnState::default() };
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TxInput<'a> {
    pub buf: &'a [u8],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TxAction {
    CopyFromUser { range: Range<usize>, kind: CopyKind },
    /// Move `len` anchored bytes from `source` in place of `buf[at..at + len]`.
    TransferAnchored { at: usize, len: usize, source: SockId, vpi: Vpi },
    /// Body bytes past a truncated anchor, copied like ordinary data.
    Passthrough { range: Range<usize> },
}

impl TxAction {
    pub fn len(&self) -> usize {
        match self {
            TxAction::CopyFromUser { range, .. } | TxAction::Passthrough { range } => range.len(),
            TxAction::TransferAnchored { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxDecision {
    pub actions: Vec<TxAction>,
    pub next: TxConnState,
    /// The anchored transfer and the metadata ahead of it are all-or-nothing.
    pub atomic: bool,
    /// `Some(hit)` when this call looked up an identifier.
    pub lookup: Option<bool>,
    pub fallback: Option<FallbackReason>,
}

impl TxDecision {
    fn new(next: TxConnState) -> TxDecision {
        TxDecision { actions: Vec::new(), next, atomic: false, lookup: None, fallback: None }
    }

    pub fn requested(&self) -> usize {
        self.actions.iter().map(TxAction::len).sum()
    }

    pub fn is_wait(&self) -> bool {
        self.actions.is_empty()
    }
}

/// What the data plane actually did with a [`TxDecision`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SendResult {
    pub accepted: usize,
    pub copied: usize,
    pub transferred: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TxCompletion {
    pub vpi: Vpi,
    pub source: SockId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TxUnitPath {
    Short,
    FastPath,
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TxUnitReport {
    pub kind: UnitKind,
    pub path: TxUnitPath,
    pub metadata_len: u64,
    pub body_len: u64,
    pub user_to_kernel: u64,
    pub transferred: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TxPostOutcome {
    pub next: TxConnState,
    pub completed: Option<TxCompletion>,
    pub report: Option<TxUnitReport>,
}

/// HTTP/1.0 / HTTP/1.1 receive and transmit programs.
#[derive(Debug, Clone, Copy, Default)]
pub struct Http1Program {
    cfg: ProgConfig,
}

impl Http1Program {
    pub fn new(cfg: ProgConfig) -> Http1Program {
        Http1Program { cfg }
    }

    fn rx_bypass(
        &self,
        mut s: RxConnState,
        plan: &mut RxPlan,
        reason: FallbackReason,
    ) -> (RxConnState, Option<FallbackReason>) {
        let fresh = s.bypass.is_none();
        s.bypass = Some(reason);
        let n = plan.budget(u64::MAX);
        if n > 0 {
            plan.copy(n, CopyKind::Full);
        }
        (s, fresh.then_some(reason))
    }
}

impl ProtocolProgram for Http1Program {
    fn config(&self) -> ProgConfig {
        self.cfg
    }

    fn rx_step(
        &self,
        state: &RxConnState,
        input: &RxInput<'_>,
        issue: &mut dyn FnMut(u64) -> Option<Vpi>,
    ) -> RxDecision {
        let mut s = state.clone();
        let mut plan = RxPlan { actions: Vec::new(), at: 0, cap: input.capacity, avail: input.available };
        let mut completed = None;

        if let Some(reason) = s.bypass {
            let (next, _) = self.rx_bypass(s, &mut plan, reason);
            return RxDecision { actions: plan.actions, next, completed, fallback: None };
        }

        if s.phase == RxPhase::Default && s.full_copy_remaining == 0 {
            let reason = match parse_unit(s.cursor, input.window) {
                Ok(Some(unit)) => {
                    s.begin_unit(&unit, input.anchor_room);
                    None
                }
                Ok(None) if input.window.len() < self.cfg.lookahead && !input.eof => {
                    return RxDecision { actions: plan.actions, next: s, completed, fallback: None };
                }
                Ok(None) if input.eof => Some(FallbackReason::TruncatedStream),
                Ok(None) => Some(FallbackReason::LookaheadOverflow),
                Err(_) => Some(FallbackReason::Parse),
            };
            if let Some(reason) = reason {
                let (next, fallback) = self.rx_bypass(s, &mut plan, reason);
                return RxDecision { actions: plan.actions, next, completed, fallback };
            }
        }

        loop {
            match s.phase {
                RxPhase::Default => {
                    let n = plan.budget(s.full_copy_remaining);
                    if n > 0 {
                        plan.copy(n, CopyKind::Full);
                        s.full_copy_remaining -= n as u64;
                        s.unit_kernel_to_user += n as u64;
                        if s.full_copy_remaining == 0 {
                            completed = Some(s.finish_unit());
                        }
                    }
                    break;
                }
                RxPhase::MetadataParsed => {
                    let meta_rem = s.metadata_len - s.metadata_copied;
                    let need = meta_rem + MIN_ANCHOR_BODY;
                    if plan.cap as u64 >= need && plan.avail >= need {
                        if meta_rem > 0 {
                            plan.copy(meta_rem as usize, CopyKind::Metadata);
                            s.metadata_copied = s.metadata_len;
                            s.unit_kernel_to_user += meta_rem;
                        }
                        s.phase = RxPhase::WriteVpi;
                        continue;
                    }
                    if meta_rem > 0 {
                        let n = plan.budget(meta_rem);
                        if n > 0 {
                            plan.copy(n, CopyKind::Metadata);
                            s.metadata_copied += n as u64;
                            s.unit_kernel_to_user += n as u64;
                        }
                        break;
                    }
                    if (plan.cap as u64) < MIN_ANCHOR_BODY || input.eof {
                        s.downgrade();
                        continue;
                    }
                    break;
                }
                RxPhase::WriteVpi => match issue(s.body_effective) {
                    Some(vpi) => {
                        plan.inject(vpi);
                        s.pending_vpi = Some(vpi);
                        s.logical_body_consumed = MIN_ANCHOR_BODY;
                        s.unit_kernel_to_user += MIN_ANCHOR_BODY;
                        s.phase = RxPhase::FastPath;
                    }
                    None => s.downgrade(),
                },
                RxPhase::FastPath => {
                    let eff_rem = s.body_effective.saturating_sub(s.logical_body_consumed);
                    if eff_rem > 0 {
                        let n = plan.budget(eff_rem);
                        if n > 0 {
                            plan.skip(n);
                            s.logical_body_consumed += n as u64;
                        }
                    }
                    if s.logical_body_consumed >= s.body_effective {
                        let n = plan.budget(s.body_total - s.logical_body_consumed);
                        if n > 0 {
                            plan.copy(n, CopyKind::Full);
                            s.logical_body_consumed += n as u64;
                            s.unit_kernel_to_user += n as u64;
                        }
                    }
                    if s.logical_body_consumed == s.body_total {
                        completed = Some(s.finish_unit());
                    }
                    break;
                }
            }
        }
        RxDecision { actions: plan.actions, next: s, completed, fallback: None }
    }

    fn tx_pre(&self, state: &TxConnState, input: &TxInput<'_>, vpis: &VpiMap) -> TxDecision {
        let buf = input.buf;
        let len = buf.len();
        let mut d = TxDecision::new(state.clone());
        let s = &mut d.next;

        if s.bypass.is_some() {
            d.actions.push(TxAction::CopyFromUser { range: 0..len, kind: CopyKind::Full });
            return d;
        }

        if s.phase == TxPhase::Default {
            if s.short_remaining > 0 {
                let n = len.min(s.short_remaining as usize);
                d.actions.push(TxAction::CopyFromUser { range: 0..n, kind: CopyKind::Full });
                return d;
            }
            let scan = self.cfg.tx_lookahead.saturating_sub(s.head_scratch.len()).min(len);
            let window: Cow<'_, [u8]> = if s.head_scratch.is_empty() {
                Cow::Borrowed(&buf[..scan])
            } else {
                let mut w = s.head_scratch.clone();
                w.extend_from_slice(&buf[..scan]);
                Cow::Owned(w)
            };
            let unit = match parse_unit(s.cursor, &window) {
                Ok(Some(unit)) => unit,
                Ok(None) if window.len() < self.cfg.tx_lookahead => {
                    // Metadata continues in a later send.
                    s.head_scratch.extend_from_slice(buf);
                    s.scratch_pending = len;
                    d.actions.push(TxAction::CopyFromUser { range: 0..len, kind: CopyKind::Metadata });
                    return d;
                }
                other => {
                    let reason = if other.is_err() {
                        FallbackReason::Parse
                    } else {
                        FallbackReason::LookaheadOverflow
                    };
                    s.bypass = Some(reason);
                    d.fallback = Some(reason);
                    d.actions.push(TxAction::CopyFromUser { range: 0..len, kind: CopyKind::Full });
                    return d;
                }
            };
            let already = s.head_scratch.len() as u64;
            s.head_scratch.clear();
            s.scratch_pending = 0;
            s.cursor = unit.next;
            s.unit_kind = unit.kind;
            s.metadata_len = unit.metadata_len;
            s.body_len = unit.body_len;
            s.unit_user_to_kernel = already;
            s.unit_transferred = 0;
            if unit.body_len < MIN_ANCHOR_BODY {
                s.short_remaining = unit.total_len() - already;
                let n = len.min(s.short_remaining as usize);
                d.actions.push(TxAction::CopyFromUser { range: 0..n, kind: CopyKind::Full });
                return d;
            }
            s.phase = TxPhase::MetadataParsed;
            s.expected_total = unit.total_len();
            s.cumulative_sent = already;
            s.metadata_copied = already.min(unit.metadata_len);
        }

        loop {
            let off = s.cumulative_sent;
            let meta_rem = s.metadata_len.saturating_sub(off) as usize;
            let unit_rem = (s.expected_total - off) as usize;
            match s.phase {
                TxPhase::MetadataParsed => {
                    if len < meta_rem + VPI_LEN {
                        if meta_rem > 0 {
                            d.actions.push(TxAction::CopyFromUser {
                                range: 0..len.min(meta_rem),
                                kind: CopyKind::Metadata,
                            });
                        }
                        return d;
                    }
                    let mut cand = [0u8; VPI_LEN];
                    cand.copy_from_slice(&buf[meta_rem..meta_rem + VPI_LEN]);
                    match vpis.lookup(cand) {
                        Some(entry) => {
                            d.lookup = Some(true);
                            s.phase = TxPhase::FastPath;
                            s.source_sock = Some(entry.source_sock);
                            s.vpi = Some(entry.vpi);
                            s.anchored_len = entry.anchor_len;
                        }
                        None => {
                            d.lookup = Some(false);
                            s.phase = TxPhase::FallbackBypass;
                        }
                    }
                }
                TxPhase::FastPath => {
                    let take = len.min(unit_rem);
                    let meta = meta_rem.min(take);
                    if meta > 0 {
                        d.actions.push(TxAction::CopyFromUser { range: 0..meta, kind: CopyKind::Metadata });
                    }
                    if take > meta {
                        let body_off = off.max(s.metadata_len) - s.metadata_len;
                        let anch = ((take - meta) as u64).min(s.anchored_len.saturating_sub(body_off)) as usize;
                        if anch > 0 {
                            d.actions.push(TxAction::TransferAnchored {
                                at: meta,
                                len: anch,
                                source: s.source_sock.expect("fast path has a source"),
                                vpi: s.vpi.expect("fast path has a vpi"),
                            });
                        }
                        if take > meta + anch {
                            d.actions.push(TxAction::Passthrough { range: meta + anch..take });
                        }
                    }
                    d.atomic = true;
                    return d;
                }
                TxPhase::FallbackBypass => {
                    let take = len.min(unit_rem);
                    d.actions.push(TxAction::CopyFromUser { range: 0..take, kind: CopyKind::Full });
                    return d;
                }
                TxPhase::Default => unreachable!("default phase handled above"),
            }
        }
    }

    fn tx_post(&self, state: &TxConnState, result: &SendResult) -> Result<TxPostOutcome, ProgError> {
        let mut s = state.clone();
        let sent = result.accepted as u64;
        let mut out_completed = None;
        let mut report = None;
        if s.bypass.is_some() {
            return Ok(TxPostOutcome { next: s, completed: None, report: None });
        }
        match s.phase {
            TxPhase::Default => {
                if s.scratch_pending > 0 {
                    let unsent = s.scratch_pending - result.accepted.min(s.scratch_pending);
                    s.head_scratch.truncate(s.head_scratch.len() - unsent);
                    s.scratch_pending = 0;
                } else if s.short_remaining > 0 {
                    if sent > s.short_remaining {
                        return Err(ProgError::Desync(format!(
                            "sent {sent} bytes but short unit has {} left",
                            s.short_remaining
                        )));
                    }
                    s.short_remaining -= sent;
                    s.unit_user_to_kernel += result.copied as u64;
                    if s.short_remaining == 0 {
                        report = Some(TxUnitReport {
                            kind: s.unit_kind,
                            path: TxUnitPath::Short,
                            metadata_len: s.metadata_len,
                            body_len: s.body_len,
                            user_to_kernel: s.unit_user_to_kernel,
                            transferred: 0,
                        });
                        s.clear_unit();
                    }
                } else if sent > 0 {
                    return Err(ProgError::Desync("bytes accepted with no unit in progress".into()));
                }
            }
            _ => {
                s.cumulative_sent += sent;
                if s.cumulative_sent > s.expected_total {
                    return Err(ProgError::Desync(format!(
                        "cumulative {} exceeds expected {}",
                        s.cumulative_sent, s.expected_total
                    )));
                }
                s.metadata_copied = s.metadata_len.min(s.cumulative_sent);
                s.unit_user_to_kernel += result.copied as u64;
                s.unit_transferred += result.transferred as u64;
                if s.cumulative_sent == s.expected_total {
                    let path = match s.phase {
                        TxPhase::FastPath => TxUnitPath::FastPath,
                        _ => TxUnitPath::Fallback,
                    };
                    if let (TxPhase::FastPath, Some(vpi), Some(source)) = (s.phase, s.vpi, s.source_sock) {
                        out_completed = Some(TxCompletion { vpi, source });
                    }
                    report = Some(TxUnitReport {
                        kind: s.unit_kind,
                        path,
                        metadata_len: s.metadata_len,
                        body_len: s.body_len,
                        user_to_kernel: s.unit_user_to_kernel,
                        transferred: s.unit_transferred,
                    });
                    s.clear_unit();
                }
            }
        }
        Ok(TxPostOutcome { next: s, completed: out_completed, report })
    }
}
