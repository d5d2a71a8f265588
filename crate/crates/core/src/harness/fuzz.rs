//! Random end-to-end cases: one seed fixes the workload, the kernel
//! parameters and the schedule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::actors::Fault;
use super::checks::{check_conservation, check_run, check_selective_accounting};
use super::transcript::{compare_transcripts, expected_transcript};
use super::workload::{BodyPlan, CapPolicy, ChunkPolicy, Workload, WorkloadConfig};
use super::{run_pair, Scenario};
use crate::simkernel::KernelConfig;

#[derive(Debug, Clone)]
pub struct FuzzCase {
    pub seed: u64,
    pub workload: Workload,
    pub scenario: Scenario,
}

/// Builds the case for `seed`. Bodies range over 0..=2 MiB with framing,
/// header sizes, receive capacities, anchoring threshold and fragment
/// limits all drawn at random.
pub fn fuzz_case(seed: u64, fault: Fault) -> FuzzCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_cap = [512, 16 << 10, 256 << 10, 1 << 20][rng.gen_range(0..4)];
    let wc = WorkloadConfig {
        seed: rng.gen(),
        connections: rng.gen_range(1..=3),
        exchanges: rng.gen_range(1..=3),
        bodies: BodyPlan::Fuzz { max: 2 << 20 },
        request_bodies: rng.gen_bool(0.6),
        chunked: ChunkPolicy::Mixed,
        chunk_size: None,
        head_len: None,
        long_heads: 0.05,
        caps: CapPolicy::Random { min_body: 9, max: max_cap },
    };
    let kernel = KernelConfig {
        anchor_threshold: [3 << 20, 3 << 20, 64 << 10, 1024][rng.gen_range(0..4)],
        max_frags: if rng.gen_bool(0.5) { 17 } else { 45 },
        ..KernelConfig::default()
    };
    let scenario = Scenario {
        kernel,
        proxy_sndbuf: rng.gen_bool(0.2).then_some(4096),
        fault,
        sched_seed: rng.gen(),
        ..Scenario::default()
    };
    FuzzCase { seed, workload: wc.generate(), scenario }
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct FuzzOutcome {
    pub seed: u64,
    pub digest: String,
    pub messages: usize,
    pub bytes: u64,
    pub vpis_issued: u64,
    pub lookup_hits: u64,
    pub fallbacks: u64,
}

/// Runs `seed` under both modes and checks equivalence, the reference
/// transcript, hygiene and, for a clean proxy, selective-copy accounting.
/// With the corrupting proxy, every identifier lookup must miss.
pub fn fuzz_one(seed: u64, fault: Fault) -> Result<FuzzOutcome, String> {
    let case = fuzz_case(seed, fault);
    let (base, sel) = run_pair(&case.scenario, &case.workload).map_err(|e| format!("seed {seed}: {e}"))?;
    let expected = expected_transcript(&case.workload, fault == Fault::VpiCorrupt);
    let mut problems = check_run(&base, &expected);
    problems.extend(check_run(&sel, &expected));
    if let Err(d) = compare_transcripts(&base.transcript, &sel.transcript) {
        problems.push(format!("modes diverge: {d}"));
    }
    if base.proxy_trace != sel.proxy_trace {
        problems.push("proxy observed different message structure per mode".into());
    }
    problems.extend(check_conservation(&sel));
    match fault {
        Fault::None => problems.extend(check_selective_accounting(&sel).1),
        Fault::VpiCorrupt => {
            if sel.metrics.vpi_lookup_hits > 0 || sel.metrics.fastpath_sends > 0 {
                problems.push(format!("{} identifier lookups hit despite corruption", sel.metrics.vpi_lookup_hits));
            }
        }
    }
    if !problems.is_empty() {
        return Err(format!("seed {seed}: {}", problems.join("; ")));
    }
    Ok(FuzzOutcome {
        seed,
        digest: sel.transcript.digest(),
        messages: case.workload.messages(),
        bytes: sel.transcript.total_bytes(),
        vpis_issued: sel.metrics.vpis_issued,
        lookup_hits: sel.metrics.vpi_lookup_hits,
        fallbacks: sel.metrics.fallbacks,
    })
}

/// Seed of the `i`th case of a campaign started from `base`.
pub fn case_seed(base: u64, i: u64) -> u64 {
    base.wrapping_add(i.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}
