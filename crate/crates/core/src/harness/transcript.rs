//! What the final receivers saw, in a form that does not depend on how the
//! bytes were cut into calls.

use std::fmt;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::workload::{MessageSpec, Workload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Client to backend, as read by the backend.
    Requests,
    /// Backend to client, as read by the client.
    Responses,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stream {
    pub conn: usize,
    pub dir: Direction,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    /// Sorted by (conn, dir).
    pub streams: Vec<Stream>,
    /// Logical lengths returned by each proxy `recvmsg`, per connection and
    /// direction. Scheduler-dependent; not part of the canonical form.
    pub proxy_calls: Vec<(usize, Direction, Vec<usize>)>,
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    hex::encode(h.finalize())
}

impl Transcript {
    pub fn push(&mut self, conn: usize, dir: Direction, bytes: Vec<u8>) {
        self.streams.push(Stream { conn, dir, bytes });
        self.streams.sort_by_key(|s| (s.conn, s.dir));
    }

    /// Hash of the canonical form: every stream with its key and length.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.streams {
            h.update((s.conn as u64).to_le_bytes());
            h.update([s.dir as u8]);
            h.update((s.bytes.len() as u64).to_le_bytes());
            h.update(&s.bytes);
        }
        hex::encode(h.finalize())
    }

    pub fn stream_digests(&self) -> Vec<(usize, Direction, String)> {
        self.streams.iter().map(|s| (s.conn, s.dir, sha256_hex(&[&s.bytes]))).collect()
    }

    pub fn total_bytes(&self) -> u64 {
        self.streams.iter().map(|s| s.bytes.len() as u64).sum()
    }
}

/// Where two transcripts first differ.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    pub conn: usize,
    pub dir: Option<Direction>,
    pub offset: u64,
    pub detail: String,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.dir {
            Some(d) => write!(f, "connection {} {:?} differs at byte {}: {}", self.conn, d, self.offset, self.detail),
            None => write!(f, "connection {}: {}", self.conn, self.detail),
        }
    }
}

/// Byte-exact comparison of the canonical streams.
pub fn compare_transcripts(a: &Transcript, b: &Transcript) -> Result<(), Divergence> {
    if a.streams.len() != b.streams.len() {
        return Err(Divergence {
            conn: 0,
            dir: None,
            offset: 0,
            detail: format!("{} streams vs {}", a.streams.len(), b.streams.len()),
        });
    }
    for (x, y) in a.streams.iter().zip(&b.streams) {
        if (x.conn, x.dir) != (y.conn, y.dir) {
            return Err(Divergence {
                conn: x.conn,
                dir: None,
                offset: 0,
                detail: format!("stream key {:?} vs {:?}", (x.conn, x.dir), (y.conn, y.dir)),
            });
        }
        if x.bytes != y.bytes {
            let offset = x.bytes.iter().zip(&y.bytes).position(|(p, q)| p != q).unwrap_or(x.bytes.len().min(y.bytes.len()));
            let detail = match (x.bytes.get(offset), y.bytes.get(offset)) {
                (Some(p), Some(q)) => format!("{p:#04x} vs {q:#04x}"),
                _ => format!("length {} vs {}", x.bytes.len(), y.bytes.len()),
            };
            return Err(Divergence { conn: x.conn, dir: Some(x.dir), offset: offset as u64, detail });
        }
    }
    Ok(())
}

/// The field the proxy appends to every header block it forwards.
pub const VIA: (&str, &str) = ("Via", "1.1 selcopy-proxy");

/// Replacement payload byte used by the corrupting proxy, by body offset.
pub fn fault_byte(offset: u64) -> u8 {
    (offset as u8).wrapping_mul(31) ^ 0x5a
}

/// What the proxy should deliver for `m`, built straight from its `MessageSpec`.
pub fn forwarded(m: &MessageSpec, corrupt: bool) -> Vec<u8> {
    m.render_with(m.head(Some(VIA)), |body| {
        if corrupt {
            for (i, b) in body.iter_mut().enumerate() {
                *b = fault_byte(i as u64);
            }
        }
    })
}

/// Reference transcript for a workload through a correct proxy.
pub fn expected_transcript(w: &Workload, corrupt: bool) -> Transcript {
    let mut t = Transcript::default();
    for (conn, exchanges) in w.connections.iter().enumerate() {
        let mut req = Vec::new();
        let mut resp = Vec::new();
        for e in exchanges {
            req.extend(forwarded(&e.request, corrupt));
            resp.extend(forwarded(&e.response, corrupt));
        }
        t.push(conn, Direction::Requests, req);
        t.push(conn, Direction::Responses, resp);
    }
    t
}
