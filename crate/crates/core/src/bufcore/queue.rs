use std::collections::VecDeque;

use super::segment::Segment;
use super::BufError;

/// Segments removed from a queue, plus the bytes duplicated to cut them out.
#[derive(Debug, Default)]
pub struct Split {
    pub segments: Vec<Segment>,
    pub split_copy: usize,
}

impl Split {
    pub fn len(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.iter().all(Segment::is_empty)
    }
}

/// An ordered byte queue built from segments.
///
/// The first `logical_consumed` bytes have already been reported to the
/// application but are still physically held (anchored). Everything after
/// them is unread.
#[derive(Debug, Default)]
pub struct SegmentQueue {
    segments: VecDeque<Segment>,
    total_bytes: usize,
    logical_consumed: usize,
}

impl SegmentQueue {
    pub fn new() -> SegmentQueue {
        SegmentQueue::default()
    }

    pub fn total_bytes(&self) -> usize {
        self.total_bytes
    }

    pub fn logical_consumed(&self) -> usize {
        self.logical_consumed
    }

    pub fn unread(&self) -> usize {
        self.total_bytes - self.logical_consumed
    }

    pub fn is_empty(&self) -> bool {
        self.total_bytes == 0
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    pub fn segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter()
    }

    pub fn push_back(&mut self, seg: Segment) {
        if seg.is_empty() {
            return;
        }
        self.total_bytes += seg.len();
        self.segments.push_back(seg);
    }

    pub fn extend<I: IntoIterator<Item = Segment>>(&mut self, segs: I) {
        for seg in segs {
            self.push_back(seg);
        }
    }

    /// Marks `n` more unread bytes as consumed by the application while
    /// leaving them in place.
    pub fn advance_logical(&mut self, n: usize) -> Result<(), BufError> {
        if n > self.unread() {
            return Err(BufError::Range { requested: n, available: self.unread() });
        }
        self.logical_consumed += n;
        Ok(())
    }

    /// Removes the first `n` bytes.
    pub fn split_front(&mut self, n: usize) -> Result<Split, BufError> {
        if n > self.total_bytes {
            return Err(BufError::Range { requested: n, available: self.total_bytes });
        }
        let mut out = Split::default();
        let mut need = n;
        while need > 0 {
            let seg = self.segments.pop_front().expect("byte count tracks segments");
            if seg.len() <= need {
                need -= seg.len();
                out.segments.push(seg);
            } else {
                let (front, back, copied) = seg.split_at(need);
                out.split_copy += copied;
                out.segments.push(front);
                self.segments.push_front(back);
                need = 0;
            }
        }
        self.total_bytes -= n;
        self.logical_consumed -= n.min(self.logical_consumed);
        Ok(out)
    }

    /// Removes bytes `[offset, offset + n)` and splices the queue back together.
    pub fn split_range(&mut self, offset: usize, n: usize) -> Result<Split, BufError> {
        let end = offset.checked_add(n).unwrap_or(usize::MAX);
        if end > self.total_bytes {
            return Err(BufError::Range { requested: end, available: self.total_bytes });
        }
        if n == 0 {
            return Ok(Split::default());
        }
        let consumed = self.logical_consumed;
        // Keep the anchored prefix accounting consistent across the detour.
        let head = self.split_front(offset)?;
        let mid = self.split_front(n)?;
        for seg in head.segments.into_iter().rev() {
            self.total_bytes += seg.len();
            self.segments.push_front(seg);
        }
        let overlap = consumed.min(end).saturating_sub(offset);
        self.logical_consumed = consumed - overlap;
        Ok(Split { segments: mid.segments, split_copy: head.split_copy + mid.split_copy })
    }

    /// Copies bytes starting at `offset` into `dst` without removing them.
    pub fn copy_out(&self, mut offset: usize, dst: &mut [u8]) -> usize {
        let mut written = 0;
        for seg in &self.segments {
            if written == dst.len() {
                break;
            }
            if offset >= seg.len() {
                offset -= seg.len();
                continue;
            }
            written += seg.copy_to(offset, &mut dst[written..]);
            offset = 0;
        }
        written
    }

    /// A linearized copy of up to `max` bytes starting at `offset`.
    pub fn window(&self, offset: usize, max: usize) -> Vec<u8> {
        let len = max.min(self.total_bytes.saturating_sub(offset));
        let mut out = vec![0u8; len];
        let got = self.copy_out(offset, &mut out);
        debug_assert_eq!(got, len);
        out
    }

    /// Removes every segment.
    pub fn drain_all(&mut self) -> Vec<Segment> {
        self.total_bytes = 0;
        self.logical_consumed = 0;
        self.segments.drain(..).collect()
    }

    pub fn to_vec(&self) -> Vec<u8> {
        self.window(0, self.total_bytes)
    }
}
