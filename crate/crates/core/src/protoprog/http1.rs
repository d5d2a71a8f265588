//! HTTP/1.0 and HTTP/1.1 metadata boundaries.
//!
//! A stream is cut into *units*: a metadata prefix the proxy must read,
//! followed by an opaque body. A message head is one unit. Under chunked
//! transfer coding each chunk is another unit whose metadata is the CRLF
//! closing the previous chunk's data plus the size line; the terminal chunk
//! and its trailer section are metadata only.

use std::sync::OnceLock;

use serde::Serialize;

use super::kmp::Matcher;
use super::ProgError;

const CRLF: &[u8] = b"\r\n";
const CRLFCRLF: &[u8] = b"\r\n\r\n";

fn crlf() -> &'static Matcher {
    static M: OnceLock<Matcher> = OnceLock::new();
    M.get_or_init(|| Matcher::new(CRLF).expect("non-empty"))
}

fn crlfcrlf() -> &'static Matcher {
    static M: OnceLock<Matcher> = OnceLock::new();
    M.get_or_init(|| Matcher::new(CRLFCRLF).expect("non-empty"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Framing {
    ContentLength,
    Chunked,
    NoBody,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Head {
    pub head_len: usize,
    pub framing: Framing,
    pub body_len: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkHeader {
    pub hdr_len: usize,
    pub chunk_size: u64,
}

impl ChunkHeader {
    pub fn is_terminal(&self) -> bool {
        self.chunk_size == 0
    }
}

/// Where the next unit starts in an HTTP/1 byte stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum Cursor {
    #[default]
    Head,
    /// Inside a chunked body; `leading_crlf` is set once a chunk's data has
    /// been framed and its closing CRLF is still ahead.
    Chunk { leading_crlf: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum UnitKind {
    Head,
    Chunk,
    LastChunk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Unit {
    pub kind: UnitKind,
    pub metadata_len: u64,
    pub body_len: u64,
    pub framing: Framing,
    pub next: Cursor,
}

impl Unit {
    pub fn total_len(&self) -> u64 {
        self.metadata_len + self.body_len
    }
}

fn trim(mut s: &[u8]) -> &[u8] {
    while let [b' ' | b'\t', rest @ ..] = s {
        s = rest;
    }
    while let [rest @ .., b' ' | b'\t'] = s {
        s = rest;
    }
    s
}

fn parse_decimal(v: &[u8]) -> Result<u64, ProgError> {
    if v.is_empty() || v.len() > 19 || !v.iter().all(u8::is_ascii_digit) {
        return Err(ProgError::BadContentLength(String::from_utf8_lossy(v).into_owned()));
    }
    Ok(v.iter().fold(0u64, |acc, d| acc * 10 + u64::from(d - b'0')))
}

/// Parses a complete header block (start line, fields, empty line).
pub fn http1_parse_head(head: &[u8]) -> Result<Head, ProgError> {
    let end = crlfcrlf().find(head).ok_or(ProgError::IncompleteHead)?;
    let head_len = end + CRLFCRLF.len();
    let block = &head[..end];
    let mut lines = block.split(|&b| b == b'\n').map(|l| l.strip_suffix(b"\r").unwrap_or(l));
    let start = lines.next().unwrap_or_default();
    if start.is_empty() {
        return Err(ProgError::Malformed("empty start line".into()));
    }
    let mut content_length: Option<u64> = None;
    let mut chunked = false;
    let mut other_coding = false;
    for line in lines {
        if line.first().is_some_and(|b| *b == b' ' || *b == b'\t') {
            return Err(ProgError::Malformed("obsolete line folding".into()));
        }
        let colon = line
            .iter()
            .position(|&b| b == b':')
            .ok_or_else(|| ProgError::Malformed(String::from_utf8_lossy(line).into_owned()))?;
        let name = &line[..colon];
        let value = trim(&line[colon + 1..]);
        if name.eq_ignore_ascii_case(b"content-length") {
            let n = parse_decimal(value)?;
            if content_length.is_some_and(|prev| prev != n) {
                return Err(ProgError::BadContentLength("conflicting values".into()));
            }
            content_length = Some(n);
        } else if name.eq_ignore_ascii_case(b"transfer-encoding") {
            let last = value.split(|&b| b == b',').map(trim).filter(|t| !t.is_empty()).last();
            match last {
                Some(t) if t.eq_ignore_ascii_case(b"chunked") => chunked = true,
                _ => other_coding = true,
            }
        }
    }
    if other_coding && !chunked {
        return Err(ProgError::Malformed("unsupported transfer coding".into()));
    }
    let (framing, body_len) = if chunked {
        (Framing::Chunked, None)
    } else if let Some(n) = content_length {
        (Framing::ContentLength, Some(n))
    } else {
        (Framing::NoBody, Some(0))
    };
    Ok(Head { head_len, framing, body_len })
}

/// Parses a chunk size line at the start of `window`.
///
/// `Ok(None)` means the line (or, for the terminal chunk, the trailer
/// section) is not complete within `window`.
pub fn http1_parse_chunk_header(window: &[u8]) -> Result<Option<ChunkHeader>, ProgError> {
    let Some(eol) = crlf().find(window) else {
        return Ok(None);
    };
    let line = &window[..eol];
    let size_part = trim(line.split(|&b| b == b';').next().unwrap_or_default());
    if size_part.is_empty() || size_part.len() > 15 || !size_part.iter().all(u8::is_ascii_hexdigit) {
        return Err(ProgError::BadChunkSize(String::from_utf8_lossy(line).into_owned()));
    }
    let chunk_size = size_part.iter().fold(0u64, |acc, &d| {
        let v = (d as char).to_digit(16).expect("checked hex digit");
        acc * 16 + u64::from(v)
    });
    if chunk_size > 0 {
        return Ok(Some(ChunkHeader { hdr_len: eol + CRLF.len(), chunk_size }));
    }
    // terminal chunk: metadata runs through the end of the trailer section
    match crlfcrlf().find(&window[eol..]) {
        Some(p) => Ok(Some(ChunkHeader { hdr_len: eol + p + CRLFCRLF.len(), chunk_size: 0 })),
        None => Ok(None),
    }
}

/// Frames the next unit from `window`, which starts at `cursor`.
pub fn parse_unit(cursor: Cursor, window: &[u8]) -> Result<Option<Unit>, ProgError> {
    match cursor {
        Cursor::Head => {
            if crlfcrlf().find(window).is_none() {
                return Ok(None);
            }
            let head = http1_parse_head(window)?;
            let next = match head.framing {
                Framing::Chunked => Cursor::Chunk { leading_crlf: false },
                _ => Cursor::Head,
            };
            Ok(Some(Unit {
                kind: UnitKind::Head,
                metadata_len: head.head_len as u64,
                body_len: head.body_len.unwrap_or(0),
                framing: head.framing,
                next,
            }))
        }
        Cursor::Chunk { leading_crlf } => {
            let lead = if leading_crlf { CRLF.len() } else { 0 };
            if window.len() < lead {
                return Ok(None);
            }
            if leading_crlf && &window[..lead] != CRLF {
                return Err(ProgError::Malformed("chunk data not followed by CRLF".into()));
            }
            let Some(ch) = http1_parse_chunk_header(&window[lead..])? else {
                return Ok(None);
            };
            let (kind, next) = if ch.is_terminal() {
                (UnitKind::LastChunk, Cursor::Head)
            } else {
                (UnitKind::Chunk, Cursor::Chunk { leading_crlf: true })
            };
            Ok(Some(Unit {
                kind,
                metadata_len: (lead + ch.hdr_len) as u64,
                body_len: ch.chunk_size,
                framing: Framing::Chunked,
                next,
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn content_length_head() {
        let h = http1_parse_head(b"HTTP/1.1 200 OK\r\nContent-Length: 5\r\n\r\n").unwrap();
        assert_eq!("HTTP/1.1 200 OK\r\nContent-Length: 5\r\n\r\n".len(), 38);
        assert_eq!(h, Head { head_len: 38, framing: Framing::ContentLength, body_len: Some(5) });
    }

    #[test]
    fn chunked_head() {
        let h = http1_parse_head(b"HTTP/1.1 200 OK\r\nTransfer-Encoding: gzip, chunked\r\n\r\n").unwrap();
        assert_eq!(h.framing, Framing::Chunked);
        assert_eq!(h.body_len, None);
    }

    #[test]
    fn chunked_wins_over_content_length() {
        let h = http1_parse_head(
            b"HTTP/1.1 200 OK\r\nContent-Length: 10\r\nTransfer-Encoding: chunked\r\n\r\n",
        )
        .unwrap();
        assert_eq!(h.framing, Framing::Chunked);
    }

    #[test]
    fn no_body_head() {
        let h = http1_parse_head(b"HTTP/1.0 204 No Content\r\n\r\n").unwrap();
        assert_eq!(h, Head { head_len: 27, framing: Framing::NoBody, body_len: Some(0) });
    }

    #[test]
    fn bad_content_length() {
        for bad in ["abc", "", "-1", "1 2", "99999999999999999999"] {
            let raw = format!("HTTP/1.1 200 OK\r\nContent-Length: {bad}\r\n\r\n");
            assert!(matches!(http1_parse_head(raw.as_bytes()), Err(ProgError::BadContentLength(_))), "{bad}");
        }
        let dup = b"HTTP/1.1 200 OK\r\nContent-Length: 1\r\ncontent-length: 2\r\n\r\n";
        assert!(http1_parse_head(dup).is_err());
        let same = b"HTTP/1.1 200 OK\r\nContent-Length: 2\r\ncontent-length: 2\r\n\r\n";
        assert_eq!(http1_parse_head(same).unwrap().body_len, Some(2));
    }

    #[test]
    fn malformed_field_line() {
        assert!(http1_parse_head(b"HTTP/1.1 200 OK\r\nnocolon\r\n\r\n").is_err());
        assert!(http1_parse_head(b"\r\n\r\n").is_err());
    }

    #[test]
    fn chunk_headers() {
        assert_eq!(
            http1_parse_chunk_header(b"400\r\n").unwrap(),
            Some(ChunkHeader { hdr_len: 5, chunk_size: 1024 })
        );
        assert_eq!(
            http1_parse_chunk_header(b"0\r\n\r\n").unwrap(),
            Some(ChunkHeader { hdr_len: 5, chunk_size: 0 })
        );
        assert_eq!(
            http1_parse_chunk_header(b"5\r\nhello\r\n").unwrap(),
            Some(ChunkHeader { hdr_len: 3, chunk_size: 5 })
        );
        assert_eq!(
            http1_parse_chunk_header(b"a;name=val\r\n").unwrap(),
            Some(ChunkHeader { hdr_len: 12, chunk_size: 10 })
        );
        assert_eq!(
            http1_parse_chunk_header(b"0\r\nX-Sum: 1\r\n\r\n").unwrap(),
            Some(ChunkHeader { hdr_len: 15, chunk_size: 0 })
        );
        assert_eq!(http1_parse_chunk_header(b"40").unwrap(), None);
        assert_eq!(http1_parse_chunk_header(b"0\r\n").unwrap(), None);
        assert!(http1_parse_chunk_header(b"zz\r\n").is_err());
        assert!(http1_parse_chunk_header(b"\r\n").is_err());
    }

    #[test]
    fn unit_sequence_over_chunked_message() {
        let stream = b"HTTP/1.1 200 OK\r\nTransfer-Encoding: chunked\r\n\r\n5\r\nhello\r\n0\r\n\r\n";
        let mut cursor = Cursor::Head;
        let mut pos = 0usize;
        let mut kinds = Vec::new();
        while pos < stream.len() {
            let u = parse_unit(cursor, &stream[pos..]).unwrap().unwrap();
            kinds.push((u.kind, u.metadata_len, u.body_len));
            pos += u.total_len() as usize;
            cursor = u.next;
        }
        assert_eq!(
            kinds,
            vec![(UnitKind::Head, 47, 0), (UnitKind::Chunk, 3, 5), (UnitKind::LastChunk, 7, 0)]
        );
        assert_eq!(cursor, Cursor::Head);
    }

    #[test]
    fn leading_crlf_is_enforced() {
        let r = parse_unit(Cursor::Chunk { leading_crlf: true }, b"xx5\r\n");
        assert!(r.is_err());
        assert_eq!(parse_unit(Cursor::Chunk { leading_crlf: true }, b"\r").unwrap(), None);
    }
}
