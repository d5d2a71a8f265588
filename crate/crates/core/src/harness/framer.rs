//! A small incremental HTTP/1 framer for the user-space side of the
//! harness: proxies, clients and backends. It shares no code with the
//! kernel's protocol program, so it can serve as an independent check.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("framing error: {0}")]
pub struct FrameError(pub String);

/// One delimited piece of the input stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Piece<'a> {
    /// A complete header block, including the empty line.
    Head(Vec<u8>),
    /// Body bytes (`body: true`) or chunk framing bytes, in stream order.
    Raw { bytes: &'a [u8], body: bool },
    /// The message that began with the last `Head` is complete.
    End { body_len: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum State {
    Head(Vec<u8>),
    Body(u64),
    ChunkLine(Vec<u8>),
    ChunkData(u64),
    ChunkEnd(u8),
    Trailer(Vec<u8>),
}

/// Which framing a header block announces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BodyKind {
    Length(u64),
    Chunked,
}

/// Reads the body framing out of a complete header block.
pub fn head_body_kind(head: &[u8]) -> Result<BodyKind, FrameError> {
    let text = std::str::from_utf8(head).map_err(|_| FrameError("non-UTF-8 header block".into()))?;
    let mut length = None;
    let mut chunked = false;
    for line in text.split("\r\n").skip(1) {
        let Some((name, value)) = line.split_once(':') else { continue };
        let name = name.trim().to_ascii_lowercase();
        let value = value.trim();
        if name == "content-length" {
            length = Some(value.parse::<u64>().map_err(|_| FrameError(format!("bad length {value:?}")))?);
        } else if name == "transfer-encoding" && value.to_ascii_lowercase().ends_with("chunked") {
            chunked = true;
        }
    }
    Ok(if chunked { BodyKind::Chunked } else { BodyKind::Length(length.unwrap_or(0)) })
}

fn find(hay: &[u8], needle: &[u8]) -> Option<usize> {
    hay.windows(needle.len()).position(|w| w == needle)
}

/// Incremental message framer; feed it bytes in any partition.
#[derive(Debug, Clone)]
pub struct Framer {
    state: State,
    body_len: u64,
}

impl Default for Framer {
    fn default() -> Self {
        Framer { state: State::Head(Vec::new()), body_len: 0 }
    }
}

impl Framer {
    pub fn new() -> Framer {
        Framer::default()
    }

    /// Still inside a header block or chunk framing line.
    pub fn in_metadata(&self) -> bool {
        matches!(self.state, State::Head(_) | State::ChunkLine(_) | State::Trailer(_) | State::ChunkEnd(_))
    }

    /// At a message boundary with nothing buffered.
    pub fn is_idle(&self) -> bool {
        matches!(&self.state, State::Head(b) if b.is_empty())
    }

    pub fn feed<'a>(&mut self, mut data: &'a [u8], out: &mut dyn FnMut(Piece<'a>)) -> Result<(), FrameError> {
        while !data.is_empty() {
            match &mut self.state {
                State::Head(buf) => {
                    let old = buf.len();
                    buf.extend_from_slice(data);
                    let from = old.saturating_sub(3);
                    let Some(p) = find(&buf[from..], b"\r\n\r\n") else {
                        data = &[];
                        continue;
                    };
                    let end = from + p + 4;
                    let used = end - old;
                    buf.truncate(end);
                    let head = std::mem::take(buf);
                    data = &data[used..];
                    let kind = head_body_kind(&head)?;
                    out(Piece::Head(head));
                    self.body_len = 0;
                    self.state = match kind {
                        BodyKind::Chunked => State::ChunkLine(Vec::new()),
                        BodyKind::Length(0) => {
                            out(Piece::End { body_len: 0 });
                            State::Head(Vec::new())
                        }
                        BodyKind::Length(n) => State::Body(n),
                    };
                }
                State::Body(left) => {
                    let take = (*left).min(data.len() as u64) as usize;
                    out(Piece::Raw { bytes: &data[..take], body: true });
                    data = &data[take..];
                    *left -= take as u64;
                    self.body_len += take as u64;
                    if *left == 0 {
                        out(Piece::End { body_len: self.body_len });
                        self.state = State::Head(Vec::new());
                    }
                }
                State::ChunkLine(line) | State::Trailer(line) => {
                    let (take, done) = match data.iter().position(|&b| b == b'\n') {
                        Some(i) => (i + 1, true),
                        None => (data.len(), false),
                    };
                    line.extend_from_slice(&data[..take]);
                    out(Piece::Raw { bytes: &data[..take], body: false });
                    data = &data[take..];
                    if !done {
                        continue;
                    }
                    let line = std::mem::take(line);
                    let text = line.strip_suffix(b"\r\n").ok_or_else(|| FrameError("bare LF".into()))?;
                    if matches!(self.state, State::Trailer(_)) {
                        if text.is_empty() {
                            out(Piece::End { body_len: self.body_len });
                            self.state = State::Head(Vec::new());
                        }
                        continue;
                    }
                    let text = std::str::from_utf8(text).map_err(|_| FrameError("non-UTF-8 chunk line".into()))?;
                    let hex = text.split(';').next().unwrap_or("").trim();
                    let size = u64::from_str_radix(hex, 16).map_err(|_| FrameError(format!("bad chunk size {hex:?}")))?;
                    self.state = if size == 0 { State::Trailer(Vec::new()) } else { State::ChunkData(size) };
                }
                State::ChunkData(left) => {
                    let take = (*left).min(data.len() as u64) as usize;
                    out(Piece::Raw { bytes: &data[..take], body: true });
                    data = &data[take..];
                    *left -= take as u64;
                    self.body_len += take as u64;
                    if *left == 0 {
                        self.state = State::ChunkEnd(2);
                    }
                }
                State::ChunkEnd(left) => {
                    let take = (*left as usize).min(data.len());
                    out(Piece::Raw { bytes: &data[..take], body: false });
                    data = &data[take..];
                    *left -= take as u8;
                    if *left == 0 {
                        self.state = State::ChunkLine(Vec::new());
                    }
                }
            }
        }
        Ok(())
    }
}

/// Adds `field` (a full `Name: value\r\n` line) at the end of a header block.
pub fn rewrite_head(head: &[u8], field: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(head.len() + field.len());
    out.extend_from_slice(&head[..head.len() - 2]);
    out.extend_from_slice(field);
    out.extend_from_slice(b"\r\n");
    out
}

/// Strips chunk framing from a complete chunked body (plus trailers),
/// returning the payload. A straightforward reference de-chunker.
pub fn dechunk(mut body: &[u8]) -> Result<Vec<u8>, FrameError> {
    let mut out = Vec::new();
    loop {
        let eol = find(body, b"\r\n").ok_or_else(|| FrameError("unterminated size line".into()))?;
        let line = std::str::from_utf8(&body[..eol]).map_err(|_| FrameError("non-UTF-8".into()))?;
        let size = usize::from_str_radix(line.split(';').next().unwrap_or("").trim(), 16)
            .map_err(|_| FrameError(format!("bad size {line:?}")))?;
        body = &body[eol + 2..];
        if size == 0 {
            return Ok(out);
        }
        if body.len() < size + 2 || &body[size..size + 2] != b"\r\n" {
            return Err(FrameError("short chunk".into()));
        }
        out.extend_from_slice(&body[..size]);
        body = &body[size + 2..];
    }
}
