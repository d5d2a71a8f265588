use serde::Serialize;

use crate::protoprog::{RxUnitReport, TxUnitReport};
use crate::SockId;

/// Per-run cost counters.
///
/// The first eight fields are the reporting schema; the rest break the same
/// traffic down further for assertions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Metrics {
    /// Bytes moved across the user boundary by ordinary full copy.
    pub std_copy_bytes: u64,
    /// Kernel buffer bytes allocated for fully copied user data.
    pub std_alloc_bytes: u64,
    /// Metadata bytes copied selectively, plus injected identifier bytes.
    pub meta_selcopy_bytes: u64,
    /// Kernel buffer bytes allocated for selectively copied metadata.
    pub meta_alloc_bytes: u64,
    /// Program invocations that handled metadata: a metadata copy, an
    /// identifier injection or an identifier lookup.
    pub meta_prog_invocations: u64,
    /// Segments moved by ownership transfer.
    pub meta_skb_trans_count: u64,
    /// Bytes duplicated while cutting a fragment in two.
    pub split_copy_bytes: u64,
    /// Segments committed to a send queue.
    pub segments_forwarded: u64,

    pub kernel_to_user_bytes: u64,
    pub user_to_kernel_bytes: u64,
    pub meta_skb_trans_bytes: u64,
    /// Staged extractions of anchored bytes.
    pub transfers: u64,
    pub prog_invocations: u64,
    pub vpis_issued: u64,
    pub vpi_lookup_hits: u64,
    pub vpi_lookup_misses: u64,
    pub fallbacks: u64,
    pub fastpath_sends: u64,
    /// FastPath sends whose metadata-plus-transfer prefix was cut short.
    pub fastpath_partial_sends: u64,
    /// FastPath sends that took only part of a deep-copied tail.
    pub fastpath_tail_partial: u64,
    pub partial_sends: u64,
    pub underflow_events: u64,
    pub anchor_mismatch_bytes: u64,
    pub peak_anchored_bytes: u64,
}

impl Metrics {
    pub fn merge(&mut self, o: &Metrics) {
        self.std_copy_bytes += o.std_copy_bytes;
        self.std_alloc_bytes += o.std_alloc_bytes;
        self.meta_selcopy_bytes += o.meta_selcopy_bytes;
        self.meta_alloc_bytes += o.meta_alloc_bytes;
        self.meta_prog_invocations += o.meta_prog_invocations;
        self.meta_skb_trans_count += o.meta_skb_trans_count;
        self.split_copy_bytes += o.split_copy_bytes;
        self.segments_forwarded += o.segments_forwarded;
        self.kernel_to_user_bytes += o.kernel_to_user_bytes;
        self.user_to_kernel_bytes += o.user_to_kernel_bytes;
        self.meta_skb_trans_bytes += o.meta_skb_trans_bytes;
        self.transfers += o.transfers;
        self.prog_invocations += o.prog_invocations;
        self.vpis_issued += o.vpis_issued;
        self.vpi_lookup_hits += o.vpi_lookup_hits;
        self.vpi_lookup_misses += o.vpi_lookup_misses;
        self.fallbacks += o.fallbacks;
        self.fastpath_sends += o.fastpath_sends;
        self.fastpath_partial_sends += o.fastpath_partial_sends;
        self.fastpath_tail_partial += o.fastpath_tail_partial;
        self.partial_sends += o.partial_sends;
        self.underflow_events += o.underflow_events;
        self.anchor_mismatch_bytes += o.anchor_mismatch_bytes;
        self.peak_anchored_bytes = self.peak_anchored_bytes.max(o.peak_anchored_bytes);
    }
}

/// Per-unit program reports from metered sockets, in completion order.
#[derive(Debug, Clone, Default)]
pub struct UnitReports {
    pub rx: Vec<(SockId, RxUnitReport)>,
    pub tx: Vec<(SockId, TxUnitReport)>,
}
