use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use super::BufError;

/// Default per-fragment capacity (one MSS worth of bytes).
pub const DEFAULT_FRAG_CAPACITY: usize = 1448;
/// Default fragment limit per segment.
pub const DEFAULT_MAX_FRAGS: usize = 17;

static NEXT_SEG_ID: AtomicU64 = AtomicU64::new(1);

fn next_seg_id() -> u64 {
    NEXT_SEG_ID.fetch_add(1, Ordering::Relaxed)
}

/// Unique identity of a [`Segment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SegId(pub u64);

impl fmt::Display for SegId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "seg#{}", self.0)
    }
}

/// An immutable run of bytes split into bounded page fragments.
///
/// This is the unit that moves between queues. Moving a `Segment` never
/// touches its bytes; only splitting one in the middle of a fragment does.
pub struct Segment {
    id: SegId,
    frags: Vec<Vec<u8>>,
    len: usize,
    frag_capacity: usize,
    max_frags: usize,
    transferred: bool,
}

impl fmt::Debug for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Segment")
            .field("id", &self.id)
            .field("len", &self.len)
            .field("frags", &self.frags.len())
            .field("transferred", &self.transferred)
            .finish()
    }
}

impl Segment {
    /// Builds a single segment holding `data`.
    ///
    /// Fails with [`BufError::SegmentOverflow`] when `data` needs more than
    /// `max_frags` fragments of `frag_capacity` bytes.
    pub fn new(data: &[u8], frag_capacity: usize, max_frags: usize) -> Result<Segment, BufError> {
        if frag_capacity == 0 || max_frags == 0 {
            return Err(BufError::InvalidGeometry { frag_capacity, max_frags });
        }
        let needed = data.len().div_ceil(frag_capacity);
        if needed > max_frags {
            return Err(BufError::SegmentOverflow { len: data.len(), frag_capacity, max_frags });
        }
        let frags = data.chunks(frag_capacity).map(<[u8]>::to_vec).collect();
        Ok(Segment {
            id: SegId(next_seg_id()),
            frags,
            len: data.len(),
            frag_capacity,
            max_frags,
            transferred: false,
        })
    }

    fn from_parts(frags: Vec<Vec<u8>>, frag_capacity: usize, max_frags: usize, transferred: bool) -> Segment {
        let len = frags.iter().map(Vec::len).sum();
        Segment { id: SegId(next_seg_id()), frags, len, frag_capacity, max_frags, transferred }
    }

    pub fn id(&self) -> SegId {
        self.id
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn frags(&self) -> &[Vec<u8>] {
        &self.frags
    }

    pub fn frag_capacity(&self) -> usize {
        self.frag_capacity
    }

    pub fn max_frags(&self) -> usize {
        self.max_frags
    }

    /// Whether this segment reached its current queue by ownership transfer.
    pub fn is_transferred(&self) -> bool {
        self.transferred
    }

    pub(crate) fn mark_transferred(&mut self) {
        self.transferred = true;
    }

    /// Copies bytes starting at `offset` into `dst`, returning the count copied.
    pub fn copy_to(&self, mut offset: usize, dst: &mut [u8]) -> usize {
        let mut written = 0;
        for frag in &self.frags {
            if written == dst.len() {
                break;
            }
            if offset >= frag.len() {
                offset -= frag.len();
                continue;
            }
            let take = (frag.len() - offset).min(dst.len() - written);
            dst[written..written + take].copy_from_slice(&frag[offset..offset + take]);
            written += take;
            offset = 0;
        }
        written
    }

    pub fn to_vec(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len);
        for frag in &self.frags {
            out.extend_from_slice(frag);
        }
        out
    }

    /// Splits into `[0, at)` and `[at, len)`.
    ///
    /// Returns both halves and the number of bytes duplicated to cut a
    /// fragment in two (zero when `at` lands on a fragment boundary).
    pub fn split_at(self, at: usize) -> (Segment, Segment, usize) {
        assert!(at <= self.len, "split point {at} beyond segment length {}", self.len);
        let Segment { frags, frag_capacity, max_frags, transferred, .. } = self;
        let mut front = Vec::new();
        let mut back = Vec::new();
        let mut copied = 0;
        let mut seen = 0;
        for mut frag in frags {
            let flen = frag.len();
            if seen + flen <= at {
                front.push(frag);
            } else if seen >= at {
                back.push(frag);
            } else {
                let tail = frag.split_off(at - seen);
                copied += tail.len();
                front.push(frag);
                back.push(tail);
            }
            seen += flen;
        }
        (
            Segment::from_parts(front, frag_capacity, max_frags, transferred),
            Segment::from_parts(back, frag_capacity, max_frags, transferred),
            copied,
        )
    }
}

/// Aggregates `data` into maximal segments, the way GRO coalesces MSS-sized
/// packets into page-fragment skbs.
///
/// Every segment but the last carries exactly `max_frags` full fragments.
pub fn segment_build(data: &[u8], frag_capacity: usize, max_frags: usize) -> Vec<Segment> {
    assert!(frag_capacity >= 1 && max_frags >= 1, "segment geometry must be non-zero");
    let per_segment = frag_capacity * max_frags;
    data.chunks(per_segment)
        .map(|chunk| {
            Segment::new(chunk, frag_capacity, max_frags).expect("chunk sized to segment capacity")
        })
        .collect()
}

/// Concatenates segment contents.
pub fn concat(segments: &[Segment]) -> Vec<u8> {
    let mut out = Vec::with_capacity(segments.iter().map(Segment::len).sum());
    for seg in segments {
        for frag in seg.frags() {
            out.extend_from_slice(frag);
        }
    }
    out
}
