//! Scenario harness: workloads, a mode-agnostic proxy, transcripts and
//! metrics.
//!
//! Each connection is `client <-> [front | proxy | back] <-> backend`. Only
//! the two proxy sockets are selective and metered. The proxy code is the
//! same function under both kernel modes; it never learns which one it is
//! running on.

pub mod actors;
pub mod checks;
pub mod cost;
pub mod framer;
pub mod fuzz;
pub mod report;
mod sched;
pub mod transcript;
pub mod workload;

use std::time::Duration;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::simkernel::{Audit, KernelConfig, KernelMode, Metrics, SimKernel, SockError, SockOpts, UnitReports};
use crate::SockId;

pub use actors::Fault;
pub use checks::{check_conservation, check_run, check_selective_accounting};
pub use cost::{cost_model_eval, metadata_path_cost, CostWeights};
pub use framer::FrameError;
pub use transcript::{compare_transcripts, expected_transcript, Direction, Divergence, Transcript};
pub use workload::{BodyPlan, CapPolicy, ChunkPolicy, Exchange, MessageSpec, Workload, WorkloadConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Kernel(#[from] SockError),
    #[error(transparent)]
    Framing(#[from] FrameError),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no progress, presumed deadlock: {0}")]
    Deadlock(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Everything about a run except the workload.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub kernel: KernelConfig,
    /// Send budget of the proxy sockets, overriding the kernel default.
    pub proxy_sndbuf: Option<u64>,
    pub proxy_rcvbuf: Option<u64>,
    pub fault: Fault,
    /// One thread per connection direction instead of the seeded
    /// round-robin scheduler.
    pub stress: bool,
    pub sched_seed: u64,
    /// Stress mode: wall time without progress anywhere before giving up.
    pub watchdog: Duration,
    /// Deterministic mode: consecutive rounds without progress before
    /// giving up.
    pub max_idle_rounds: u32,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            kernel: KernelConfig::default(),
            proxy_sndbuf: None,
            proxy_rcvbuf: None,
            fault: Fault::None,
            stress: false,
            sched_seed: 0,
            watchdog: Duration::from_secs(30),
            max_idle_rounds: 4,
        }
    }
}

impl Scenario {
    pub fn with_mode(&self, mode: KernelMode) -> Scenario {
        let mut s = self.clone();
        s.kernel.mode = mode;
        s
    }
}

/// Per-connection view of the proxy's two sockets.
#[derive(Debug, Clone, Serialize)]
pub struct ProxySockets {
    pub front: SockId,
    pub back: SockId,
    /// Bytes copied to the proxy from the client side.
    pub front_kernel_to_user: u64,
    /// Bytes copied from the proxy toward the client.
    pub front_user_to_kernel: u64,
    pub back_kernel_to_user: u64,
    pub back_user_to_kernel: u64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub mode: KernelMode,
    pub transcript: Transcript,
    pub metrics: Metrics,
    pub reports: UnitReports,
    pub audit: Audit,
    /// Hash of the message structure the proxy observed.
    pub proxy_trace: String,
    pub proxy_sockets: Vec<ProxySockets>,
    pub lock_acquisitions: u64,
    pub lock_violations: u64,
    /// Scheduler rounds (deterministic) or idle spins (stress).
    pub steps: u64,
    /// Sockets freed by the grace-period timer after the final close.
    pub reaped: usize,
}

pub(crate) struct Conn {
    pub socks: [SockId; 4],
    pub client: actors::Client,
    pub backend: actors::Backend,
    pub req: actors::Pipe,
    pub resp: actors::Pipe,
}

fn proxy_opts(sc: &Scenario) -> SockOpts {
    SockOpts { rcvbuf: sc.proxy_rcvbuf, sndbuf: sc.proxy_sndbuf, ..SockOpts::proxy() }
}

/// Runs every exchange of `w` through a proxy to completion, closes all
/// sockets, lets deferred teardown expire and audits the kernel.
pub fn run_scenario(sc: &Scenario, w: &Workload) -> Result<RunOutput, HarnessError> {
    if w.caps.max() == 0 {
        return Err(HarnessError::Config("receive capacity must be positive".into()));
    }
    if sc.kernel.max_frags == 0 || sc.kernel.frag_capacity == 0 {
        return Err(HarnessError::Config("segments need room for at least one byte".into()));
    }
    let k = SimKernel::new(sc.kernel.clone());
    let mut conns = Vec::with_capacity(w.connections.len());
    for (i, exchanges) in w.connections.iter().enumerate() {
        let (client, front) = k.socket_pair(SockOpts::endpoint(), proxy_opts(sc));
        let (back, backend) = k.socket_pair(proxy_opts(sc), SockOpts::endpoint());
        let requests = exchanges.iter().flat_map(|e| e.request.render()).collect();
        let responses = exchanges.iter().map(|e| e.response.render()).collect();
        let seed = w.seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        conns.push(Conn {
            socks: [client, front, back, backend],
            client: actors::Client::new(client, requests),
            backend: actors::Backend::new(backend, responses),
            req: actors::Pipe::new(front, back, w.caps, seed, sc.fault),
            resp: actors::Pipe::new(back, front, w.caps, !seed, sc.fault),
        });
    }

    let steps = if sc.stress { sched::run_stress(&k, &mut conns, sc.watchdog)? } else { sched::run_seeded(&k, &mut conns, sc)? };

    let mut transcript = Transcript::default();
    let mut trace = Sha256::new();
    let mut proxy_sockets = Vec::with_capacity(conns.len());
    for (i, c) in conns.iter_mut().enumerate() {
        transcript.push(i, Direction::Requests, std::mem::take(&mut c.backend.received));
        transcript.push(i, Direction::Responses, std::mem::take(&mut c.client.received));
        transcript.proxy_calls.push((i, Direction::Requests, std::mem::take(&mut c.req.calls)));
        transcript.proxy_calls.push((i, Direction::Responses, std::mem::take(&mut c.resp.calls)));
        trace.update(c.req.trace_digest());
        trace.update(c.resp.trace_digest());
        let front = k.sock_info(c.socks[1])?;
        let back = k.sock_info(c.socks[2])?;
        proxy_sockets.push(ProxySockets {
            front: c.socks[1],
            back: c.socks[2],
            front_kernel_to_user: front.kernel_to_user,
            front_user_to_kernel: front.user_to_kernel,
            back_kernel_to_user: back.kernel_to_user,
            back_user_to_kernel: back.user_to_kernel,
        });
    }

    for c in &conns {
        for s in c.socks {
            k.sock_close(s)?;
        }
    }
    let reaped = k.clock_advance(sc.kernel.grace_period)?.len();

    Ok(RunOutput {
        mode: sc.kernel.mode,
        transcript,
        metrics: k.metrics(),
        reports: k.unit_reports(),
        audit: k.audit(),
        proxy_trace: hex::encode(trace.finalize()),
        proxy_sockets,
        lock_acquisitions: k.lock_tracker().acquisitions(),
        lock_violations: k.lock_tracker().violations(),
        steps,
        reaped,
    })
}

/// Runs the workload under both modes.
pub fn run_pair(sc: &Scenario, w: &Workload) -> Result<(RunOutput, RunOutput), HarnessError> {
    let base = run_scenario(&sc.with_mode(KernelMode::Baseline), w)?;
    let sel = run_scenario(&sc.with_mode(KernelMode::Selective), w)?;
    Ok((base, sel))
}
