//! Randomized heuristic block selection.
//!
//! Blocks of a cell are examined in random order. A block is skipped when its
//! probability of not holding any record of the cell exceeds the remaining
//! confidence budget; the budget is then divided by that probability. The
//! expected completeness of the final selection is the product of the skipped
//! blocks' not-existence probabilities and never falls below the request.

use std::collections::BTreeSet;

use rand::Rng;

use crate::scalar::Scalar;
use crate::store::BlockRef;

/// Lower clamp applied to every requested confidence, so that a tiny
/// confidence cannot skip nearly every block.
pub const MIN_CONFIDENCE: f64 = 0.01;

/// Selection stops once the budget is within this distance of 1.
pub const BUDGET_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult<T> {
    pub cell: usize,
    /// Confidence after clamping.
    pub requested: T,
    pub selected: BTreeSet<BlockRef>,
    /// Skipped blocks with their not-existence probability, in skip order.
    pub skipped: Vec<(BlockRef, T)>,
    /// Product of the skipped blocks' not-existence probabilities.
    pub expected_pc: T,
}

impl<T: Scalar> SelectionResult<T> {
    /// Remaining budget `requested / expected_pc`; at most 1.
    pub fn budget(&self) -> T {
        self.requested / self.expected_pc
    }

    pub fn skipped_blocks(&self) -> impl Iterator<Item = BlockRef> + '_ {
        self.skipped.iter().map(|&(b, _)| b)
    }
}

pub fn clamp_confidence<T: Scalar>(p0: T) -> T {
    p0.max(T::of(MIN_CONFIDENCE)).min(T::one())
}

/// Runs the selection over `universe`, drawing blocks uniformly at random.
pub fn h_selection<T: Scalar, R: Rng + ?Sized>(
    cell: usize,
    universe: &[(BlockRef, T)],
    p0: T,
    rng: &mut R,
) -> SelectionResult<T> {
    h_selection_with(cell, universe, p0, |len| rng.gen_range(0..len))
}

/// Same as [`h_selection`] with the draw supplied by `pick`, which receives the
/// number of unexamined blocks and returns an index into them. Unexamined
/// blocks are kept in universe order except that the drawn position is filled
/// by the last one (`swap_remove`).
pub fn h_selection_with<T: Scalar>(
    cell: usize,
    universe: &[(BlockRef, T)],
    p0: T,
    mut pick: impl FnMut(usize) -> usize,
) -> SelectionResult<T> {
    let requested = clamp_confidence(p0);
    let done = T::one() - T::of(BUDGET_SLACK);
    let mut pool = universe.to_vec();
    let mut selected = BTreeSet::new();
    let mut skipped = Vec::new();
    let mut expected = T::one();

    while !pool.is_empty() && requested / expected < done {
        let (block, pne) = pool.swap_remove(pick(pool.len()));
        // pne > requested / expected, written so that the stored product
        // itself stays above the request
        if expected * pne > requested {
            expected = expected * pne;
            skipped.push((block, pne));
        } else {
            selected.insert(block);
        }
    }
    selected.extend(pool.into_iter().map(|(b, _)| b));

    SelectionResult {
        cell,
        requested,
        selected,
        skipped,
        expected_pc: expected,
    }
}

/// Per-cell confidence for `k` independently selected cells: the smallest
/// value `q >= p0^(1/k)` whose k-fold floating-point product is at least `p0`.
/// Since rounding is monotone, any per-cell results at or above `q` multiply
/// to at least `p0`.
pub fn per_cell_confidence<T: Scalar>(p0: T, k: usize) -> T {
    if k <= 1 {
        return p0;
    }
    let fold = |q: T| (0..k).fold(T::one(), |acc, _| acc * q);
    let mut q = p0.powf(T::one() / T::of_usize(k)).min(T::one());
    while fold(q) < p0 && q < T::one() {
        q = (q + q * T::epsilon()).min(T::one());
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn b(block: usize) -> BlockRef {
        BlockRef { slot: 0, block }
    }

    fn universe(pnes: &[f64]) -> Vec<(BlockRef, f64)> {
        pnes.iter()
            .enumerate()
            .map(|(i, &p)| (b(i + 1), p))
            .collect()
    }

    #[test]
    fn full_confidence_selects_everything() {
        let u = universe(&[0.999, 0.5, 1.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = h_selection(3, &u, 1.0, &mut rng);
        assert_eq!(r.selected.len(), 4);
        assert!(r.skipped.is_empty());
        assert_eq!(r.expected_pc, 1.0);
        assert_eq!(r.cell, 3);
    }

    #[test]
    fn hand_trace_two_blocks() {
        // g = 0.05 and g = 0.9, drawn in order
        let u = universe(&[0.95, 0.1]);
        let r = h_selection_with(0, &u, 0.9, |_| 0);
        assert_eq!(r.skipped, vec![(b(1), 0.95)]);
        assert_eq!(r.selected, BTreeSet::from([b(2)]));
        assert_eq!(r.expected_pc, 0.95);
        assert!((r.budget() - 0.9 / 0.95).abs() < 1e-15);
    }

    #[test]
    fn single_block_kept_when_unlikely_empty() {
        let u = universe(&[0.1]);
        let r = h_selection_with(0, &u, 0.5, |_| 0);
        assert_eq!(r.selected, BTreeSet::from([b(1)]));
        assert_eq!(r.expected_pc, 1.0);
    }

    #[test]
    fn confidence_is_clamped() {
        assert_eq!(clamp_confidence(0.001f64), 0.01);
        assert_eq!(clamp_confidence(0.3f64), 0.3);
        assert_eq!(clamp_confidence(1.5f64), 1.0);
        // every block near-certainly empty: clamping stops the skipping
        let u = universe(&[0.9; 100]);
        let r = h_selection_with(0, &u, 1e-6, |_| 0);
        assert_eq!(r.requested, 0.01);
        assert!(r.expected_pc >= 0.01);
        assert_eq!(r.skipped.len(), 43); // 0.9^43 > 0.01 > 0.9^44
    }

    #[test]
    fn empty_universe() {
        let r: SelectionResult<f64> = h_selection_with(0, &[], 0.3, |_| unreachable!());
        assert!(r.selected.is_empty());
        assert_eq!(r.expected_pc, 1.0);
    }

    #[test]
    fn zero_existence_blocks_are_neutral() {
        // appending PNE = 1 blocks never changes which of the others get skipped
        let base = universe(&[0.97, 0.6, 0.99, 0.2, 0.95]);
        let mut padded: Vec<_> = (10..15).map(|i| (b(i), 1.0)).collect();
        padded.extend(base.iter().copied());
        // always draw the last unexamined block, so the real ones come first
        let run = |u: &[(BlockRef, f64)]| {
            let r = h_selection_with(0, u, 0.9, |len| len - 1);
            let real: Vec<_> = r.skipped_blocks().filter(|x| x.block < 10).collect();
            (r.expected_pc, real)
        };
        assert_eq!(run(&base), run(&padded));
    }

    #[test]
    fn selection_is_randomized() {
        let u = universe(&[0.9, 0.8, 0.95, 0.85, 0.7, 0.99, 0.75, 0.88, 0.92, 0.6]);
        let sets: BTreeSet<Vec<BlockRef>> = (0..20)
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                h_selection(0, &u, 0.5, &mut rng)
                    .selected
                    .into_iter()
                    .collect()
            })
            .collect();
        assert!(sets.len() >= 2);
    }

    #[test]
    fn per_cell_split() {
        let q = per_cell_confidence(0.8f64, 4);
        assert!((q - 0.8f64.powf(0.25)).abs() < 1e-15);
        assert!((q - 0.9457416090031758).abs() < 1e-12);
        assert!(q * q * q * q >= 0.8);
        assert_eq!(per_cell_confidence(0.8f64, 1), 0.8);
        assert_eq!(per_cell_confidence(1.0f64, 7), 1.0);
    }

    #[test]
    fn f32_selection() {
        let u: Vec<(BlockRef, f32)> = vec![(b(1), 0.95), (b(2), 0.1)];
        let r = h_selection_with(0, &u, 0.9f32, |_| 0);
        assert_eq!(r.selected, BTreeSet::from([b(2)]));
        assert!(r.expected_pc >= 0.9);
    }

    proptest! {
        #[test]
        fn positive_error_and_accounting(
            pnes in prop::collection::vec(0.0f64..=1.0, 0..200),
            p0 in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let u = universe(&pnes);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = h_selection(0, &u, p0, &mut rng);
            prop_assert!(r.expected_pc >= r.requested);
            let prod: f64 = r.skipped.iter().map(|&(_, p)| p).product();
            prop_assert_eq!(prod, r.expected_pc);
            prop_assert!(r.budget() <= 1.0 + 1e-12);
            // each block examined at most once; partition of the universe
            prop_assert_eq!(r.selected.len() + r.skipped.len(), u.len());
            for x in r.skipped_blocks() {
                prop_assert!(!r.selected.contains(&x));
            }
        }

        #[test]
        fn per_cell_product_covers_request(p0 in 0.01f64..=1.0, k in 1usize..200) {
            let q = per_cell_confidence(p0, k);
            prop_assert!(q <= 1.0);
            prop_assert!((0..k).fold(1.0, |acc, _| acc * q) >= p0);
            prop_assert!(q - p0.powf(1.0 / k as f64) < 1e-12);
        }
    }
}
