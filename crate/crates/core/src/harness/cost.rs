//! A linear synthetic cost over the run counters. Weights are free
//! parameters; only ratios between runs are meaningful.

use serde::{Deserialize, Serialize};

use crate::simkernel::Metrics;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    /// Per byte crossing the user boundary, either direction.
    pub copy_byte: f64,
    /// Per byte of kernel buffer allocated for user data.
    pub alloc_byte: f64,
    /// Per metadata-handling program invocation.
    pub prog_invocation: f64,
    /// Per segment moved by ownership transfer.
    pub skb_trans: f64,
    /// Per byte duplicated when splitting a fragment.
    pub split_copy_byte: f64,
    /// Per segment committed to a send queue.
    pub segment: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            copy_byte: 1.0,
            alloc_byte: 0.25,
            prog_invocation: 64.0,
            skb_trans: 16.0,
            split_copy_byte: 1.0,
            segment: 32.0,
        }
    }
}

impl CostWeights {
    pub fn zero() -> CostWeights {
        CostWeights { copy_byte: 0.0, alloc_byte: 0.0, prog_invocation: 0.0, skb_trans: 0.0, split_copy_byte: 0.0, segment: 0.0 }
    }

    pub fn is_valid(&self) -> bool {
        [self.copy_byte, self.alloc_byte, self.prog_invocation, self.skb_trans, self.split_copy_byte, self.segment]
            .iter()
            .all(|w| w.is_finite() && *w >= 0.0)
    }
}

/// Weighted sum over every counter.
///
/// Panics if a weight is negative or not finite.
pub fn cost_model_eval(m: &Metrics, w: &CostWeights) -> f64 {
    assert!(w.is_valid(), "cost weights must be finite and non-negative: {w:?}");
    w.copy_byte * (m.std_copy_bytes + m.meta_selcopy_bytes) as f64
        + w.alloc_byte * (m.std_alloc_bytes + m.meta_alloc_bytes) as f64
        + w.prog_invocation * m.meta_prog_invocations as f64
        + w.skb_trans * m.meta_skb_trans_count as f64
        + w.split_copy_byte * m.split_copy_bytes as f64
        + w.segment * m.segments_forwarded as f64
}

/// The part of [`cost_model_eval`] spent on the metadata path alone.
pub fn metadata_path_cost(m: &Metrics, w: &CostWeights) -> f64 {
    assert!(w.is_valid(), "cost weights must be finite and non-negative: {w:?}");
    w.copy_byte * m.meta_selcopy_bytes as f64
        + w.alloc_byte * m.meta_alloc_bytes as f64
        + w.prog_invocation * m.meta_prog_invocations as f64
}
