use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Conn, HarnessError, Scenario};
use crate::simkernel::SimKernel;
use crate::SockId;

fn conn_done(c: &Conn) -> bool {
    c.client.done() && c.backend.done() && c.req.done() && c.resp.done()
}

fn step_actor(k: &SimKernel, c: &mut Conn, which: usize) -> Result<bool, HarnessError> {
    match which {
        0 => c.client.step(k),
        1 => c.req.step(k),
        2 => c.backend.step(k),
        _ => c.resp.step(k),
    }
}

fn stuck_report(k: &SimKernel, conns: &[Conn]) -> String {
    let mut parts = Vec::new();
    for (i, c) in conns.iter().enumerate() {
        if conn_done(c) {
            continue;
        }
        let infos: Vec<String> = c
            .socks
            .iter()
            .filter_map(|s| k.sock_info(*s).ok())
            .map(|s| format!("{:?}[unread {} send {} rx {:?} tx {:?}]", s.sock, s.recv_unread, s.send_bytes, s.rx_phase, s.tx_phase))
            .collect();
        parts.push(format!(
            "conn {i}: client {} req {} backend {} resp {}; {}",
            c.client.done(),
            c.req.done(),
            c.backend.done(),
            c.resp.done(),
            infos.join(" ")
        ));
        if parts.len() == 4 {
            break;
        }
    }
    parts.join("; ")
}

/// Seeded round-robin: each round drains every socket, then steps every
/// unfinished actor once in a shuffled order.
pub(super) fn run_seeded(k: &SimKernel, conns: &mut [Conn], sc: &Scenario) -> Result<u64, HarnessError> {
    let mut rng = ChaCha8Rng::seed_from_u64(sc.sched_seed);
    let socks: Vec<SockId> = conns.iter().flat_map(|c| c.socks).collect();
    let mut order: Vec<(usize, usize)> = (0..conns.len()).flat_map(|c| (0..4).map(move |a| (c, a))).collect();
    let mut idle = 0;
    let mut rounds = 0u64;
    while !conns.iter().all(conn_done) {
        rounds += 1;
        let mut progress = false;
        for &s in &socks {
            progress |= k.transmit_drain(s)? > 0;
        }
        order.shuffle(&mut rng);
        for &(c, a) in &order {
            progress |= step_actor(k, &mut conns[c], a)?;
        }
        if progress {
            idle = 0;
        } else {
            idle += 1;
            if idle > sc.max_idle_rounds {
                return Err(HarnessError::Deadlock(format!("after {rounds} rounds: {}", stuck_report(k, conns))));
            }
        }
    }
    Ok(rounds)
}

struct Watch<'a> {
    progress: &'a AtomicU64,
    abort: &'a AtomicBool,
    limit: Duration,
    seen: u64,
    since: Instant,
}

impl Watch<'_> {
    fn tick(&mut self, progressed: bool) -> Result<(), HarnessError> {
        if progressed {
            self.progress.fetch_add(1, Ordering::Relaxed);
            return Ok(());
        }
        if self.abort.load(Ordering::Relaxed) {
            return Err(HarnessError::Deadlock("another handler gave up".into()));
        }
        let now = self.progress.load(Ordering::Relaxed);
        if now != self.seen {
            self.seen = now;
            self.since = Instant::now();
        } else if self.since.elapsed() > self.limit {
            self.abort.store(true, Ordering::Relaxed);
            return Err(HarnessError::Deadlock(format!("no progress anywhere for {:?}", self.limit)));
        }
        std::thread::yield_now();
        Ok(())
    }
}

fn drained(k: &SimKernel, socks: &[SockId]) -> Result<bool, HarnessError> {
    for &s in socks {
        if k.sock_info(s)?.send_bytes > 0 {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Free-running: two threads per connection, one per direction, each
/// stepping its own actors and driving the sockets it writes to. The two
/// directions of a connection move anchored payload between the same pair
/// of proxy sockets in opposite orders.
pub(super) fn run_stress(k: &SimKernel, conns: &mut [Conn], limit: Duration) -> Result<u64, HarnessError> {
    let progress = AtomicU64::new(0);
    let abort = AtomicBool::new(false);
    let spins = AtomicU64::new(0);
    let results: Vec<Result<(), HarnessError>> = std::thread::scope(|s| {
        let mut handles = Vec::new();
        for c in conns.iter_mut() {
            let [client_s, front, back, backend_s] = c.socks;
            let halves = [
                (&mut c.client as &mut dyn Side, &mut c.req, [client_s, back]),
                (&mut c.backend as &mut dyn Side, &mut c.resp, [backend_s, front]),
            ];
            for (end, pipe, drive) in halves {
                let (progress, abort, spins) = (&progress, &abort, &spins);
                handles.push(s.spawn(move || -> Result<(), HarnessError> {
                    let mut w = Watch { progress, abort, limit, seen: 0, since: Instant::now() };
                    loop {
                        let mut p = end.step_side(k)?;
                        p |= pipe.step(k)?;
                        for sock in drive {
                            p |= k.transmit_drain(sock)? > 0;
                        }
                        if end.side_done() && pipe.done() && drained(k, &drive)? {
                            return Ok(());
                        }
                        if !p {
                            spins.fetch_add(1, Ordering::Relaxed);
                        }
                        w.tick(p)?;
                    }
                }));
            }
        }
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(HarnessError::Protocol("handler panicked".into())))).collect()
    });
    for r in results {
        r?;
    }
    Ok(spins.load(Ordering::Relaxed))
}

trait Side: Send {
    fn step_side(&mut self, k: &SimKernel) -> Result<bool, HarnessError>;
    fn side_done(&self) -> bool;
}

impl Side for super::actors::Client {
    fn step_side(&mut self, k: &SimKernel) -> Result<bool, HarnessError> {
        self.step(k)
    }
    fn side_done(&self) -> bool {
        self.done()
    }
}

impl Side for super::actors::Backend {
    fn step_side(&mut self, k: &SimKernel) -> Result<bool, HarnessError> {
        self.step(k)
    }
    fn side_done(&self) -> bool {
        self.done()
    }
}
