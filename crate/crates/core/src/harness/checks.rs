//! Invariant checks over a finished run. Each returns human-readable
//! problems; an empty list means the property held.

use super::transcript::{compare_transcripts, Transcript};
use super::RunOutput;
use crate::protoprog::TxUnitPath;
use crate::simkernel::KernelMode;
use crate::vpimap::VPI_LEN;

/// Transcript matches `expected`, the kernel audit is clean and no context
/// ever held two socket locks.
pub fn check_run(out: &RunOutput, expected: &Transcript) -> Vec<String> {
    let mut problems: Vec<String> = out.audit.problems.iter().map(|p| format!("{:?} audit: {p}", out.mode)).collect();
    if let Err(d) = compare_transcripts(expected, &out.transcript) {
        problems.push(format!("{:?} transcript: {d}", out.mode));
    }
    if out.metrics.fastpath_partial_sends > 0 {
        problems.push(format!("{} partially accepted fast-path sends", out.metrics.fastpath_partial_sends));
    }
    problems
}

/// Counts of units the selective-copy check looked at.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AccountingSummary {
    pub rx_units: usize,
    pub tx_units: usize,
}

/// Every fully anchored unit crossed the boundary as its metadata plus one
/// identifier on the way in, and as its new metadata alone on the way out.
pub fn check_selective_accounting(out: &RunOutput) -> (AccountingSummary, Vec<String>) {
    let mut sum = AccountingSummary::default();
    let mut problems = Vec::new();
    if out.mode != KernelMode::Selective {
        return (sum, problems);
    }
    for (sock, r) in &out.reports.rx {
        if r.body_len >= VPI_LEN as u64 && r.anchored == r.body_len {
            sum.rx_units += 1;
            if r.kernel_to_user != r.metadata_len + VPI_LEN as u64 {
                problems.push(format!(
                    "{sock:?}: received unit with {} metadata bytes copied {} to user",
                    r.metadata_len, r.kernel_to_user
                ));
            }
        }
    }
    for (sock, r) in &out.reports.tx {
        if r.path == TxUnitPath::FastPath && r.transferred == r.body_len {
            sum.tx_units += 1;
            if r.user_to_kernel != r.metadata_len {
                problems.push(format!(
                    "{sock:?}: sent unit with {} metadata bytes copied {} from user",
                    r.metadata_len, r.user_to_kernel
                ));
            }
        }
    }
    (sum, problems)
}

/// Per sent unit: transferred bytes plus copied bytes equal the unit size.
pub fn check_conservation(out: &RunOutput) -> Vec<String> {
    out.reports
        .tx
        .iter()
        .filter(|(_, r)| r.transferred + r.user_to_kernel != r.metadata_len + r.body_len)
        .map(|(sock, r)| {
            format!(
                "{sock:?}: {:?} unit of {}+{} bytes moved {} by transfer and {} by copy",
                r.path, r.metadata_len, r.body_len, r.transferred, r.user_to_kernel
            )
        })
        .collect()
}
