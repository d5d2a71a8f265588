//! Seeded HTTP/1 workloads.
//!
//! A [`Workload`] is a plain value: every byte it renders follows from the
//! generating seed and config, so a run can be replayed from those alone.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

/// Chunked-encoding layout of one body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ChunkSpec {
    /// Data sizes of the non-terminal chunks; they sum to the body length.
    pub sizes: Vec<u64>,
    /// Put a `;name=value` extension on every size line.
    pub extensions: bool,
    pub trailers: Vec<(String, String)>,
}

/// One HTTP/1 message before rendering.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MessageSpec {
    pub start_line: String,
    /// Headers other than the framing header, which rendering adds.
    pub headers: Vec<(String, String)>,
    pub body_len: u64,
    pub body_seed: u64,
    pub chunked: Option<ChunkSpec>,
}

impl MessageSpec {
    pub fn request(body_len: u64, body_seed: u64) -> MessageSpec {
        let method = if body_len > 0 { "POST" } else { "GET" };
        MessageSpec {
            start_line: format!("{method} /objects/{body_seed:x} HTTP/1.1"),
            headers: vec![("Host".into(), "backend.local".into()), ("Accept".into(), "*/*".into())],
            body_len,
            body_seed,
            chunked: None,
        }
    }

    pub fn response(body_len: u64, body_seed: u64) -> MessageSpec {
        MessageSpec {
            start_line: "HTTP/1.1 200 OK".into(),
            headers: vec![("Server".into(), "origin".into()), ("Content-Type".into(), "application/octet-stream".into())],
            body_len,
            body_seed,
            chunked: None,
        }
    }

    /// Splits the body into chunks of at most `size` bytes.
    pub fn with_chunks(mut self, size: u64) -> MessageSpec {
        let size = size.max(1);
        let mut sizes = vec![size; (self.body_len / size) as usize];
        if self.body_len % size > 0 {
            sizes.push(self.body_len % size);
        }
        self.chunked = Some(ChunkSpec { sizes, extensions: false, trailers: Vec::new() });
        self
    }

    /// Pads the header block with an `X-Pad` field so it renders to exactly
    /// `len` bytes. Leaves the message alone if it is already longer than
    /// that, or too close to it to fit a field.
    pub fn with_head_len(mut self, len: usize) -> MessageSpec {
        let base = self.head(None).len();
        let field = "X-Pad: \r\n".len();
        if len >= base + field {
            self.headers.push(("X-Pad".into(), "p".repeat(len - base - field)));
        }
        self
    }

    fn framing_header(&self) -> Option<(String, String)> {
        match &self.chunked {
            Some(_) => Some(("Transfer-Encoding".into(), "chunked".into())),
            None if self.body_len > 0 || self.start_line.starts_with("HTTP/") => {
                Some(("Content-Length".into(), self.body_len.to_string()))
            }
            None => None,
        }
    }

    /// The header block, optionally with an extra field appended last.
    pub fn head(&self, extra: Option<(&str, &str)>) -> Vec<u8> {
        let mut out = format!("{}\r\n", self.start_line);
        for (k, v) in self.headers.iter().cloned().chain(self.framing_header()) {
            out.push_str(&format!("{k}: {v}\r\n"));
        }
        if let Some((k, v)) = extra {
            out.push_str(&format!("{k}: {v}\r\n"));
        }
        out.push_str("\r\n");
        out.into_bytes()
    }

    /// The payload bytes, independent of framing.
    pub fn body(&self) -> Vec<u8> {
        let mut body = vec![0u8; self.body_len as usize];
        ChaCha8Rng::seed_from_u64(self.body_seed).fill_bytes(&mut body);
        body
    }

    /// Wire bytes with the header block replaced by `head`, and the payload
    /// passed through `body_map` first.
    pub fn render_with(&self, head: Vec<u8>, body_map: impl Fn(&mut [u8])) -> Vec<u8> {
        let mut body = self.body();
        body_map(&mut body);
        let mut out = head;
        match &self.chunked {
            None => out.extend_from_slice(&body),
            Some(c) => {
                let mut at = 0usize;
                for (i, &n) in c.sizes.iter().enumerate() {
                    out.extend_from_slice(format!("{n:x}").as_bytes());
                    if c.extensions {
                        out.extend_from_slice(format!(";seq={i}").as_bytes());
                    }
                    out.extend_from_slice(b"\r\n");
                    out.extend_from_slice(&body[at..at + n as usize]);
                    out.extend_from_slice(b"\r\n");
                    at += n as usize;
                }
                out.extend_from_slice(b"0\r\n");
                for (k, v) in &c.trailers {
                    out.extend_from_slice(format!("{k}: {v}\r\n").as_bytes());
                }
                out.extend_from_slice(b"\r\n");
            }
        }
        out
    }

    pub fn render(&self) -> Vec<u8> {
        self.render_with(self.head(None), |_| {})
    }

    /// Count of chunks (or plain bodies) large enough to be anchored.
    pub fn anchorable_units(&self) -> usize {
        match &self.chunked {
            Some(c) => c.sizes.iter().filter(|&&n| n >= 8).count(),
            None => usize::from(self.body_len >= 8),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Exchange {
    pub request: MessageSpec,
    pub response: MessageSpec,
}

/// How receive capacities are drawn for each proxy `recvmsg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CapPolicy {
    Fixed(usize),
    /// Anywhere from 1 byte while reading metadata, and from `min_body`
    /// bytes otherwise, up to `max`; skewed toward small values.
    Random { min_body: usize, max: usize },
}

impl CapPolicy {
    pub fn max(&self) -> usize {
        match *self {
            CapPolicy::Fixed(n) => n,
            CapPolicy::Random { max, .. } => max,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng, in_metadata: bool) -> usize {
        match *self {
            CapPolicy::Fixed(n) => n,
            CapPolicy::Random { min_body, max } => {
                let lo = if in_metadata { 1 } else { min_body.min(max) };
                if rng.gen_bool(0.3) {
                    rng.gen_range(lo..=max.min(lo.max(64)))
                } else {
                    log_uniform(rng, lo as u64, max as u64) as usize
                }
            }
        }
    }
}

impl Default for CapPolicy {
    fn default() -> Self {
        CapPolicy::Random { min_body: 9, max: 256 << 10 }
    }
}

fn log_uniform(rng: &mut impl Rng, lo: u64, hi: u64) -> u64 {
    if lo >= hi {
        return lo;
    }
    let (a, b) = ((lo.max(1) as f64).ln(), ((hi + 1) as f64).ln());
    (rng.gen_range(a..b).exp() as u64).clamp(lo, hi)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Workload {
    pub seed: u64,
    /// Exchanges per connection, pipelined in order.
    pub connections: Vec<Vec<Exchange>>,
    pub caps: CapPolicy,
}

impl Workload {
    pub fn messages(&self) -> usize {
        self.connections.iter().map(|c| 2 * c.len()).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.connections
            .iter()
            .flatten()
            .map(|e| (e.request.render().len() + e.response.render().len()) as u64)
            .sum()
    }
}

/// Body sizes to draw from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum BodyPlan {
    /// Cycled in order over the exchanges of each connection.
    Sizes(Vec<u64>),
    /// Mostly small, sometimes up to `max`; includes bodies under 8 bytes.
    Fuzz { max: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ChunkPolicy {
    Never,
    Always,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadConfig {
    pub seed: u64,
    pub connections: usize,
    pub exchanges: usize,
    pub bodies: BodyPlan,
    /// Requests carry bodies drawn from the same plan; otherwise they are GETs.
    pub request_bodies: bool,
    pub chunked: ChunkPolicy,
    /// Fixed chunk data size; random sizes when unset.
    pub chunk_size: Option<u64>,
    /// Pad every header block to this many bytes.
    pub head_len: Option<usize>,
    /// Probability that a header block is padded past 256 bytes.
    pub long_heads: f64,
    pub caps: CapPolicy,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            seed: 1,
            connections: 1,
            exchanges: 1,
            bodies: BodyPlan::Sizes(vec![4096]),
            request_bodies: false,
            chunked: ChunkPolicy::Never,
            chunk_size: None,
            head_len: None,
            long_heads: 0.0,
            caps: CapPolicy::default(),
        }
    }
}

fn fuzz_body_len(rng: &mut impl Rng, max: u64) -> u64 {
    let len = match rng.gen_range(0..100) {
        0..=14 => rng.gen_range(0..8),
        15..=49 => rng.gen_range(8..4096),
        50..=79 => rng.gen_range(4096..128 << 10),
        80..=94 => rng.gen_range(128 << 10..1 << 20),
        _ => rng.gen_range(1 << 20..=2 << 20),
    };
    len.min(max)
}

fn random_chunks(rng: &mut impl Rng, body_len: u64) -> Vec<u64> {
    let mut sizes = Vec::new();
    let mut left = body_len;
    while left > 0 {
        let n = match rng.gen_range(0..4) {
            0 => rng.gen_range(1..16),
            1 => rng.gen_range(16..4096),
            _ => log_uniform(rng, 1, left.max(1)),
        }
        .min(left);
        sizes.push(n);
        left -= n;
    }
    sizes
}

impl WorkloadConfig {
    pub fn generate(&self) -> Workload {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut connections = Vec::with_capacity(self.connections);
        for conn in 0..self.connections {
            let mut exchanges = Vec::with_capacity(self.exchanges);
            for i in 0..self.exchanges {
                let draw = |rng: &mut ChaCha8Rng| match &self.bodies {
                    BodyPlan::Sizes(s) if s.is_empty() => 0,
                    BodyPlan::Sizes(s) => s[i % s.len()],
                    BodyPlan::Fuzz { max } => fuzz_body_len(rng, *max),
                };
                let req_len = if self.request_bodies { draw(&mut rng) } else { 0 };
                let resp_len = draw(&mut rng);
                let request = MessageSpec::request(req_len, rng.next_u64());
                let mut response = MessageSpec::response(resp_len, rng.next_u64());
                if rng.gen_bool(0.1) {
                    response.start_line = "HTTP/1.0 200 OK".into();
                }
                let (request, response) =
                    (self.shape(request, &mut rng, conn), self.shape(response, &mut rng, conn));
                exchanges.push(Exchange { request, response });
            }
            connections.push(exchanges);
        }
        Workload { seed: self.seed, connections, caps: self.caps }
    }

    fn shape(&self, mut m: MessageSpec, rng: &mut ChaCha8Rng, conn: usize) -> MessageSpec {
        m.headers.push(("X-Conn".into(), conn.to_string()));
        let chunk = match self.chunked {
            ChunkPolicy::Never => false,
            ChunkPolicy::Always => true,
            ChunkPolicy::Mixed => rng.gen_bool(0.4),
        };
        // Bodiless requests and HTTP/1.0 responses keep plain framing.
        let plain = (m.body_len == 0 && !m.start_line.starts_with("HTTP/")) || m.start_line.starts_with("HTTP/1.0");
        if chunk && !plain {
            m = match self.chunk_size {
                Some(n) => m.with_chunks(n),
                None => {
                    let sizes = random_chunks(rng, m.body_len);
                    let extensions = rng.gen_bool(0.3);
                    let trailers = if rng.gen_bool(0.3) { vec![("X-Checksum".into(), "0".into())] } else { vec![] };
                    MessageSpec { chunked: Some(ChunkSpec { sizes, extensions, trailers }), ..m }
                }
            };
        }
        if let Some(len) = self.head_len {
            m = m.with_head_len(len);
        } else if self.long_heads > 0.0 && rng.gen_bool(self.long_heads) {
            m = m.with_head_len(rng.gen_range(260..400));
        } else if rng.gen_bool(0.5) {
            m.headers.push(("X-Trace".into(), "t".repeat(rng.gen_range(0..64))));
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::framer::{dechunk, Framer, Piece};

    #[test]
    fn head_padding_is_exact() {
        for len in [120, 200, 256, 300] {
            let m = MessageSpec::response(1 << 20, 3).with_head_len(len);
            assert_eq!(m.head(None).len(), len);
        }
    }

    #[test]
    fn generation_is_replayable() {
        let cfg = WorkloadConfig {
            seed: 42,
            connections: 3,
            exchanges: 4,
            bodies: BodyPlan::Fuzz { max: 64 << 10 },
            request_bodies: true,
            chunked: ChunkPolicy::Mixed,
            ..WorkloadConfig::default()
        };
        assert_eq!(cfg.generate(), cfg.generate());
        let other = WorkloadConfig { seed: 43, ..cfg.clone() };
        assert_ne!(cfg.generate(), other.generate());
    }

    #[test]
    fn chunked_render_dechunks_to_body() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let len = rng.gen_range(0..20_000);
            let mut m = MessageSpec::response(len, rng.next_u64());
            m.chunked = Some(ChunkSpec { sizes: random_chunks(&mut rng, len), extensions: true, trailers: vec![] });
            let wire = m.render();
            let head = m.head(None).len();
            assert_eq!(dechunk(&wire[head..]).unwrap(), m.body());

            let mut body = Vec::new();
            let mut ends = 0;
            Framer::new()
                .feed(&wire, &mut |p| match p {
                    Piece::Raw { bytes, body: true } => body.extend_from_slice(bytes),
                    Piece::End { .. } => ends += 1,
                    _ => {}
                })
                .unwrap();
            assert_eq!((body, ends), (m.body(), 1));
        }
    }

    #[test]
    fn fixed_chunking_counts() {
        let m = MessageSpec::response(100 * 16384, 1).with_chunks(16384);
        assert_eq!(m.anchorable_units(), 100);
        let m = MessageSpec::response(20, 1).with_chunks(7);
        assert_eq!(m.chunked.as_ref().unwrap().sizes, vec![7, 7, 6]);
        assert_eq!(m.anchorable_units(), 0);
    }

    #[test]
    fn caps_respect_body_minimum() {
        let p = CapPolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let c = p.sample(&mut rng, false);
            assert!((9..=256 << 10).contains(&c));
            assert!(p.sample(&mut rng, true) >= 1);
        }
    }
}
