//! The three parties of a proxied connection.
//!
//! Every actor is a non-blocking state machine with a `step` that makes
//! whatever progress the sockets allow and reports whether it made any.
//! None of them knows which kernel mode it runs under.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::framer::{rewrite_head, Framer, Piece};
use super::transcript::{fault_byte, VIA};
use super::workload::CapPolicy;
use super::HarnessError;
use crate::simkernel::{SimKernel, SockError};
use crate::SockId;

/// Outgoing bytes with a send cursor.
#[derive(Debug, Default)]
struct Outbox {
    buf: Vec<u8>,
    sent: usize,
}

impl Outbox {
    fn pending(&self) -> usize {
        self.buf.len() - self.sent
    }

    fn extend(&mut self, bytes: &[u8]) {
        if self.sent > 0 && self.sent * 2 >= self.buf.len() {
            self.buf.drain(..self.sent);
            self.sent = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    /// Sends until the socket stops accepting. Returns bytes accepted.
    fn flush(&mut self, k: &SimKernel, sock: SockId) -> Result<usize, SockError> {
        let mut total = 0;
        while self.pending() > 0 {
            match k.sendmsg(sock, &self.buf[self.sent..]) {
                Ok(0) | Err(SockError::WouldBlock) => break,
                Ok(n) => {
                    self.sent += n;
                    total += n;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(total)
    }
}

fn recv_into(k: &SimKernel, sock: SockId, buf: &mut [u8]) -> Result<Option<usize>, SockError> {
    match k.recvmsg(sock, buf) {
        Ok(r) => Ok(Some(r.logical)),
        Err(SockError::WouldBlock) => Ok(None),
        Err(e) => Err(e),
    }
}

const ENDPOINT_READ: usize = 64 << 10;

/// Sends every request up front, then reads responses until end of stream.
#[derive(Debug)]
pub struct Client {
    pub sock: SockId,
    out: Outbox,
    shut: bool,
    pub received: Vec<u8>,
    eof: bool,
    scratch: Vec<u8>,
}

impl Client {
    pub fn new(sock: SockId, requests: Vec<u8>) -> Client {
        Client { sock, out: Outbox { buf: requests, sent: 0 }, shut: false, received: Vec::new(), eof: false, scratch: vec![0; ENDPOINT_READ] }
    }

    pub fn done(&self) -> bool {
        self.eof
    }

    pub fn step(&mut self, k: &SimKernel) -> Result<bool, HarnessError> {
        let mut progress = self.out.flush(k, self.sock)? > 0;
        if self.out.pending() == 0 && !self.shut {
            k.shutdown_write(self.sock)?;
            self.shut = true;
            progress = true;
        }
        while !self.eof {
            match recv_into(k, self.sock, &mut self.scratch)? {
                Some(0) => self.eof = true,
                Some(n) => self.received.extend_from_slice(&self.scratch[..n]),
                None => break,
            }
            progress = true;
        }
        Ok(progress)
    }
}

/// Answers each complete request with the next scripted response.
#[derive(Debug)]
pub struct Backend {
    pub sock: SockId,
    framer: Framer,
    responses: Vec<Vec<u8>>,
    answered: usize,
    out: Outbox,
    pub received: Vec<u8>,
    eof: bool,
    shut: bool,
    scratch: Vec<u8>,
}

impl Backend {
    pub fn new(sock: SockId, responses: Vec<Vec<u8>>) -> Backend {
        Backend {
            sock,
            framer: Framer::new(),
            responses,
            answered: 0,
            out: Outbox::default(),
            received: Vec::new(),
            eof: false,
            shut: false,
            scratch: vec![0; ENDPOINT_READ],
        }
    }

    pub fn done(&self) -> bool {
        self.shut
    }

    pub fn step(&mut self, k: &SimKernel) -> Result<bool, HarnessError> {
        let mut progress = false;
        while !self.eof {
            let Some(n) = recv_into(k, self.sock, &mut self.scratch)? else { break };
            progress = true;
            if n == 0 {
                self.eof = true;
                break;
            }
            self.received.extend_from_slice(&self.scratch[..n]);
            let mut ended = 0;
            self.framer.feed(&self.scratch[..n], &mut |p| {
                if let Piece::End { .. } = p {
                    ended += 1;
                }
            })?;
            for _ in 0..ended {
                let resp = self.responses.get(self.answered).ok_or(HarnessError::Protocol("unexpected extra request".into()))?;
                self.out.extend(resp);
                self.answered += 1;
            }
        }
        progress |= self.out.flush(k, self.sock)? > 0;
        if self.eof && self.out.pending() == 0 && !self.shut {
            if self.answered != self.responses.len() {
                return Err(HarnessError::Protocol(format!(
                    "backend saw {} of {} requests before end of stream",
                    self.answered,
                    self.responses.len()
                )));
            }
            k.shutdown_write(self.sock)?;
            self.shut = true;
            progress = true;
        }
        Ok(progress)
    }
}

/// Misbehaviour injected into the proxy, identically under both modes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fault {
    #[default]
    None,
    /// Overwrite every payload byte (and so every identifier) before
    /// forwarding.
    VpiCorrupt,
}

/// One direction of the proxy: read from `src`, rewrite header blocks,
/// forward everything else untouched to `dst`.
///
/// The pipe never looks inside payloads. Under selective copy the payload
/// region of its buffer holds an identifier followed by stale bytes, and it
/// forwards those exactly as it would forward real payload.
#[derive(Debug)]
pub struct Pipe {
    pub src: SockId,
    pub dst: SockId,
    framer: Framer,
    caps: CapPolicy,
    rng: ChaCha8Rng,
    scratch: Vec<u8>,
    out: Outbox,
    out_limit: usize,
    fault: Fault,
    body_off: u64,
    src_eof: bool,
    shut: bool,
    trace: Sha256,
    pub calls: Vec<usize>,
}

impl Pipe {
    pub fn new(src: SockId, dst: SockId, caps: CapPolicy, seed: u64, fault: Fault) -> Pipe {
        Pipe {
            src,
            dst,
            framer: Framer::new(),
            caps,
            rng: ChaCha8Rng::seed_from_u64(seed),
            scratch: vec![0; caps.max().max(1)],
            out: Outbox::default(),
            out_limit: (2 * caps.max()).max(1 << 20),
            fault,
            body_off: 0,
            src_eof: false,
            shut: false,
            trace: Sha256::new(),
            calls: Vec::new(),
        }
    }

    pub fn done(&self) -> bool {
        self.shut
    }

    /// Hash of the message structure this pipe saw: header blocks and body
    /// lengths. Mode-independent for a correct kernel.
    pub fn trace_digest(&self) -> String {
        hex::encode(self.trace.clone().finalize())
    }

    fn absorb(&mut self, n: usize) -> Result<(), HarnessError> {
        let Pipe { framer, scratch, out, fault, body_off, trace, .. } = self;
        framer.feed(&scratch[..n], &mut |p| match p {
            Piece::Head(h) => {
                trace.update(b"H");
                trace.update(&h);
                *body_off = 0;
                out.extend(&rewrite_head(&h, format!("{}: {}\r\n", VIA.0, VIA.1).as_bytes()));
            }
            Piece::Raw { bytes, body } => {
                if body && *fault == Fault::VpiCorrupt {
                    let mapped: Vec<u8> = (0..bytes.len() as u64).map(|i| fault_byte(*body_off + i)).collect();
                    out.extend(&mapped);
                } else {
                    out.extend(bytes);
                }
                if body {
                    *body_off += bytes.len() as u64;
                }
            }
            Piece::End { body_len } => {
                trace.update(b"E");
                trace.update(body_len.to_le_bytes());
            }
        })?;
        Ok(())
    }

    pub fn step(&mut self, k: &SimKernel) -> Result<bool, HarnessError> {
        let mut progress = self.out.flush(k, self.dst)? > 0;
        if !self.src_eof && self.out.pending() < self.out_limit {
            let cap = self.caps.sample(&mut self.rng, self.framer.in_metadata());
            if let Some(n) = recv_into(k, self.src, &mut self.scratch[..cap])? {
                progress = true;
                self.calls.push(n);
                if n == 0 {
                    self.src_eof = true;
                } else {
                    self.absorb(n)?;
                    self.out.flush(k, self.dst)?;
                }
            }
        }
        if self.src_eof && self.out.pending() == 0 && !self.shut {
            if !self.framer.is_idle() {
                return Err(HarnessError::Protocol("stream ended inside a message".into()));
            }
            k.shutdown_write(self.dst)?;
            self.shut = true;
            progress = true;
        }
        Ok(progress)
    }
}
