//! Deterministic data-parallel reduction.
//!
//! All reductions over pixels go through [`tree_reduce`], which splits the
//! index range at its midpoint recursively. The reduction tree depends only
//! on the range length, never on the worker count, so floating-point sums
//! come out bit-identical whether the pool has 1 thread or 64.

use std::ops::Range;

/// Ranges at or below this length are reduced sequentially in index order.
pub const LEAF_LEN: usize = 1024;

/// Reduce `leaf` results over `range` by recursive midpoint splitting.
pub fn tree_reduce<T, Leaf, Merge>(range: Range<usize>, leaf: &Leaf, merge: &Merge) -> T
where
    T: Send,
    Leaf: Fn(Range<usize>) -> T + Sync,
    Merge: Fn(T, T) -> T + Sync,
{
    if range.len() <= LEAF_LEN {
        leaf(range)
    } else {
        let mid = range.start + range.len() / 2;
        let (left, right) = rayon::join(
            || tree_reduce(range.start..mid, leaf, merge),
            || tree_reduce(mid..range.end, leaf, merge),
        );
        merge(left, right)
    }
}
