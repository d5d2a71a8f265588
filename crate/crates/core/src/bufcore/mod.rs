//! Segment buffers, segment queues and memory accounts.
//!
//! These are the primitives both kernel modes are built from. A [`Segment`]
//! is the skb analog; a [`SegmentQueue`] is a socket queue; a
//! [`MemoryAccount`] is a socket's receive or send budget.

mod account;
mod queue;
mod segment;

use thiserror::Error;

pub use account::{AccountOutcome, MemoryAccount};
pub use queue::{SegmentQueue, Split};
pub use segment::{concat, segment_build, SegId, Segment, DEFAULT_FRAG_CAPACITY, DEFAULT_MAX_FRAGS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BufError {
    #[error("requested {requested} bytes but only {available} are queued")]
    Range { requested: usize, available: usize },
    #[error("{len} bytes do not fit in {max_frags} fragments of {frag_capacity} bytes")]
    SegmentOverflow { len: usize, frag_capacity: usize, max_frags: usize },
    #[error("invalid segment geometry: capacity {frag_capacity}, max frags {max_frags}")]
    InvalidGeometry { frag_capacity: usize, max_frags: usize },
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn build_round_trips(
            data in proptest::collection::vec(any::<u8>(), 0..20_000),
            cap in 1usize..2000,
            max_frags in 1usize..50,
        ) {
            let segs = segment_build(&data, cap, max_frags);
            prop_assert_eq!(segs.len(), data.len().div_ceil(cap * max_frags));
            for seg in &segs {
                prop_assert!(seg.frags().len() <= max_frags);
                prop_assert!(seg.frags().iter().all(|f| f.len() <= cap));
            }
            prop_assert_eq!(concat(&segs), data);
        }

        #[test]
        fn split_front_is_sound(
            chunks in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 1..300), 0..12),
            cut in any::<proptest::sample::Index>(),
        ) {
            let mut q = SegmentQueue::new();
            let mut original = Vec::new();
            for c in &chunks {
                original.extend_from_slice(c);
                q.extend(segment_build(c, 37, 3));
            }
            let n = if original.is_empty() { 0 } else { cut.index(original.len() + 1) };
            let out = q.split_front(n).unwrap();
            let mut rebuilt = concat(&out.segments);
            prop_assert_eq!(rebuilt.len(), n);
            rebuilt.extend(q.to_vec());
            prop_assert_eq!(rebuilt, original);
        }

        #[test]
        fn split_range_is_sound(
            data in proptest::collection::vec(any::<u8>(), 1..3000),
            a in any::<proptest::sample::Index>(),
            b in any::<proptest::sample::Index>(),
        ) {
            let mut q = SegmentQueue::new();
            q.extend(segment_build(&data, 100, 4));
            let off = a.index(data.len() + 1);
            let n = b.index(data.len() - off + 1);
            let mid = q.split_range(off, n).unwrap();
            prop_assert_eq!(concat(&mid.segments), &data[off..off + n]);
            let mut rest = data[..off].to_vec();
            rest.extend_from_slice(&data[off + n..]);
            prop_assert_eq!(q.to_vec(), rest);
        }
    }
}
