//! Training pair sampling.

use alloc::vec::Vec;
use rand::Rng;

use crate::error::{Error, Result};
use crate::FrameId;

/// Samples `count` ordered frame pairs whose distance in video order lies in
/// `[gap_min, gap_max]`. The gap is drawn uniformly over the admissible gaps,
/// then the pair uniformly among the `2 (n − gap)` ordered pairs with that gap.
pub fn sample_pairs<R: Rng + ?Sized>(
    frame_ids: &[FrameId],
    gap_min: usize,
    gap_max: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<(FrameId, FrameId)>> {
    let n = frame_ids.len();
    let hi = gap_max.min(n.saturating_sub(1));
    if gap_min == 0 || gap_min > gap_max || gap_min > hi {
        return Err(Error::NoAdmissiblePair {
            min: gap_min,
            max: gap_max,
        });
    }
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let gap = rng.random_range(gap_min..=hi);
        let start = rng.random_range(0..n - gap);
        let (a, b) = (frame_ids[start], frame_ids[start + gap]);
        if rng.random::<bool>() {
            pairs.push((a, b));
        } else {
            pairs.push((b, a));
        }
    }
    Ok(pairs)
}
