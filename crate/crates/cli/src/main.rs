mod config;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use config::{ModeArg, Overrides, RunConfig};
use selcopy_core::harness::fuzz::{case_seed, fuzz_case, fuzz_one};
use selcopy_core::harness::report::{write_rows, ReportRow};
use selcopy_core::harness::{
    check_conservation, check_run, check_selective_accounting, compare_transcripts, expected_transcript, run_scenario,
    BodyPlan, ChunkPolicy, CostWeights, Fault, Scenario, WorkloadConfig,
};
use selcopy_core::protoprog::ProgConfig;
use selcopy_core::simkernel::{KernelConfig, KernelMode};

#[derive(Debug, Parser)]
#[command(name = "selcopy", version, about = "Selective-copy proxy datapath scenarios")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run a payload-size sweep and write one metrics row per (size, mode).
    Run(Overrides),
    /// Run random end-to-end workloads under both modes and compare them.
    Fuzz {
        #[arg(long, default_value_t = 100)]
        iterations: u64,
        #[command(flatten)]
        opts: Overrides,
    },
}

fn scenario(cfg: &RunConfig) -> Scenario {
    Scenario {
        kernel: KernelConfig {
            frag_capacity: cfg.frag_capacity,
            max_frags: cfg.max_frags,
            anchor_threshold: cfg.threshold,
            grace_period: cfg.grace,
            prog: ProgConfig { lookahead: cfg.lookahead, tx_lookahead: 2 * cfg.lookahead },
            ..KernelConfig::default()
        },
        fault: cfg.fault,
        stress: cfg.stress,
        sched_seed: cfg.seed,
        ..Scenario::default()
    }
}

fn output(cfg: &RunConfig) -> anyhow::Result<Box<dyn Write>> {
    Ok(match &cfg.out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(io::stdout().lock()),
    })
}

/// Returns the failed checks; an empty list means success.
fn cmd_run(cfg: &RunConfig) -> anyhow::Result<Vec<String>> {
    let modes: &[KernelMode] = match cfg.mode {
        ModeArg::Baseline => &[KernelMode::Baseline],
        ModeArg::Selective => &[KernelMode::Selective],
        ModeArg::Both => &[KernelMode::Baseline, KernelMode::Selective],
    };
    let sc = scenario(cfg);
    let weights = CostWeights::default();
    let label = if cfg.chunked { "chunked" } else { "content-length" };
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &size in &cfg.sizes {
        let w = WorkloadConfig {
            seed: cfg.seed,
            connections: cfg.connections,
            exchanges: cfg.messages,
            bodies: BodyPlan::Sizes(vec![size]),
            chunked: if cfg.chunked { ChunkPolicy::Always } else { ChunkPolicy::Never },
            chunk_size: Some(cfg.chunk_size),
            ..WorkloadConfig::default()
        }
        .generate();
        let expected = expected_transcript(&w, cfg.fault == Fault::VpiCorrupt);
        let mut outs = Vec::new();
        for &mode in modes {
            let out = run_scenario(&sc.with_mode(mode), &w).with_context(|| format!("size {size}, {mode:?}"))?;
            let mut problems = check_run(&out, &expected);
            problems.extend(check_conservation(&out));
            if cfg.fault == Fault::None {
                problems.extend(check_selective_accounting(&out).1);
            }
            if mode == KernelMode::Selective && cfg.chunked && cfg.fault == Fault::None && cfg.threshold >= 3 << 20 {
                let want: usize = w.connections.iter().flatten().map(|e| e.request.anchorable_units() + e.response.anchorable_units()).sum();
                if out.metrics.vpis_issued != want as u64 {
                    problems.push(format!("{} identifiers issued for {want} anchorable chunks", out.metrics.vpis_issued));
                }
            }
            failures.extend(problems.into_iter().map(|p| format!("size {size} {mode:?}: {p}")));
            rows.push(ReportRow::from_run(label, size, cfg.seed, w.messages(), &out, &weights));
            outs.push(out);
        }
        if let [a, b] = &outs[..] {
            if let Err(d) = compare_transcripts(&a.transcript, &b.transcript) {
                failures.push(format!("size {size}: modes diverge: {d}"));
            }
        }
    }
    write_rows(&rows, cfg.format, output(cfg)?).context("writing report")?;
    Ok(failures)
}

#[derive(serde::Serialize)]
struct FuzzRecord {
    seed: u64,
    ok: bool,
    digest: Option<String>,
    messages: usize,
    bytes: u64,
    vpis_issued: u64,
    lookup_hits: u64,
    error: Option<String>,
}

fn cmd_fuzz(iterations: u64, cfg: &RunConfig) -> anyhow::Result<Vec<String>> {
    let mut out = match &cfg.out {
        Some(_) => Some(output(cfg)?),
        None => None,
    };
    let mut failures = Vec::new();
    for i in 0..iterations {
        let seed = case_seed(cfg.seed, i);
        let result = if cfg.stress {
            fuzz_stress(seed, cfg.fault)
        } else {
            fuzz_one(seed, cfg.fault)
        };
        let record = match &result {
            Ok(o) => FuzzRecord {
                seed,
                ok: true,
                digest: Some(o.digest.clone()),
                messages: o.messages,
                bytes: o.bytes,
                vpis_issued: o.vpis_issued,
                lookup_hits: o.lookup_hits,
                error: None,
            },
            Err(e) => FuzzRecord { seed, ok: false, digest: None, messages: 0, bytes: 0, vpis_issued: 0, lookup_hits: 0, error: Some(e.clone()) },
        };
        if let Some(w) = out.as_mut() {
            serde_json::to_writer(&mut *w, &record)?;
            w.write_all(b"\n")?;
        }
        if let Err(e) = result {
            eprintln!("first failing seed: {seed} (replay: selcopy fuzz --iterations 1 --seed {seed})");
            failures.push(e);
            break;
        }
    }
    if let Some(mut w) = out {
        w.flush()?;
    }
    if failures.is_empty() {
        eprintln!("fuzz: {iterations} workloads passed (base seed {})", cfg.seed);
    }
    Ok(failures)
}

/// The same case under the free-running scheduler, checked against the
/// reference transcript only: call partitioning is not reproducible there.
fn fuzz_stress(seed: u64, fault: Fault) -> Result<selcopy_core::harness::fuzz::FuzzOutcome, String> {
    let mut case = fuzz_case(seed, fault);
    case.scenario.stress = true;
    let expected = expected_transcript(&case.workload, fault == Fault::VpiCorrupt);
    let mut last = None;
    for mode in [KernelMode::Baseline, KernelMode::Selective] {
        let out = run_scenario(&case.scenario.with_mode(mode), &case.workload).map_err(|e| format!("seed {seed}: {e}"))?;
        let problems = check_run(&out, &expected);
        if !problems.is_empty() {
            return Err(format!("seed {seed}: {}", problems.join("; ")));
        }
        last = Some(out);
    }
    let sel = last.expect("two modes ran");
    Ok(selcopy_core::harness::fuzz::FuzzOutcome {
        seed,
        digest: sel.transcript.digest(),
        messages: case.workload.messages(),
        bytes: sel.transcript.total_bytes(),
        vpis_issued: sel.metrics.vpis_issued,
        lookup_hits: sel.metrics.vpi_lookup_hits,
        fallbacks: sel.metrics.fallbacks,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (opts, run): (&Overrides, Box<dyn Fn(&RunConfig) -> anyhow::Result<Vec<String>>>) = match &cli.cmd {
        Cmd::Run(opts) => (opts, Box::new(cmd_run)),
        Cmd::Fuzz { iterations, opts } => {
            let n = *iterations;
            (opts, Box::new(move |c: &RunConfig| cmd_fuzz(n, c)))
        }
    };
    let cfg = match RunConfig::resolve(opts) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    match run(&cfg) {
        Ok(failures) if failures.is_empty() => ExitCode::SUCCESS,
        Ok(failures) => {
            for f in failures {
                eprintln!("FAIL {f}");
            }
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
