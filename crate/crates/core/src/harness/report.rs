//! Metric rows as JSON lines or CSV. Column names follow the metric field
//! names; rows are written in the order given, so equal inputs give
//! byte-identical files.

use std::io::Write;

use serde::Serialize;

use super::cost::{cost_model_eval, CostWeights};
use super::RunOutput;
use crate::simkernel::KernelMode;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub label: String,
    pub mode: KernelMode,
    pub body_size: u64,
    pub seed: u64,
    pub connections: usize,
    pub messages: usize,
    pub std_copy_bytes: u64,
    pub std_alloc_bytes: u64,
    pub meta_selcopy_bytes: u64,
    pub meta_alloc_bytes: u64,
    pub meta_prog_invocations: u64,
    pub meta_skb_trans_count: u64,
    pub split_copy_bytes: u64,
    pub segments_forwarded: u64,
    pub vpis_issued: u64,
    pub fallbacks: u64,
    pub synthetic_cost: f64,
    pub transcript_digest: String,
}

impl ReportRow {
    pub fn from_run(label: &str, body_size: u64, seed: u64, messages: usize, out: &RunOutput, w: &CostWeights) -> ReportRow {
        let m = &out.metrics;
        ReportRow {
            label: label.to_string(),
            mode: out.mode,
            body_size,
            seed,
            connections: out.proxy_sockets.len(),
            messages,
            std_copy_bytes: m.std_copy_bytes,
            std_alloc_bytes: m.std_alloc_bytes,
            meta_selcopy_bytes: m.meta_selcopy_bytes,
            meta_alloc_bytes: m.meta_alloc_bytes,
            meta_prog_invocations: m.meta_prog_invocations,
            meta_skb_trans_count: m.meta_skb_trans_count,
            split_copy_bytes: m.split_copy_bytes,
            segments_forwarded: m.segments_forwarded,
            vpis_issued: m.vpis_issued,
            fallbacks: m.fallbacks,
            synthetic_cost: cost_model_eval(m, w),
            transcript_digest: out.transcript.digest(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Jsonl,
}

pub fn write_jsonl<W: Write>(rows: &[ReportRow], mut w: W) -> std::io::Result<()> {
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_csv<W: Write>(rows: &[ReportRow], w: W) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()
}

pub fn write_rows<W: Write>(rows: &[ReportRow], format: Format, w: W) -> std::io::Result<()> {
    match format {
        Format::Csv => write_csv(rows, w),
        Format::Jsonl => write_jsonl(rows, w),
    }
}
