//! Model-change accounting and bottleneck extraction.
//!
//! Every time the free-energy-selected space differs between two consecutive
//! states, the entered state's model-change counter goes up. Bottlenecks are
//! extracted from the counter matrix by Otsu thresholding (exact histogram,
//! one bin per distinct value) followed by 3x3 non-maximum suppression. The
//! same pipeline applied to raw state-visit counts serves as the
//! experience-based baseline.

use crate::grid::{Grid, GridPos};
use crate::space::SpaceId;

/// Per-state model-change counters. Wall cells are never entered, so they
/// stay at zero.
pub type ModelChangeMatrix = Grid<u64>;

/// Per-state visit counters (one increment per state entered).
pub type VisitMatrix = Grid<u64>;

/// Binary detection mask plus the detected cells in row-major order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BottleneckMask {
    pub mask: Grid<u8>,
    pub cells: Vec<GridPos>,
}

impl BottleneckMask {
    pub fn contains(&self, pos: GridPos) -> bool {
        self.mask.contains(pos) && self.mask[pos] == 1
    }

    /// True when some detected cell is within Chebyshev distance `tol` of
    /// `pos`.
    pub fn contains_near(&self, pos: GridPos, tol: usize) -> bool {
        self.cells.iter().any(|c| c.chebyshev(pos) <= tol)
    }
}

/// Counts a model change on the entered state when the selected space
/// flipped between the previous and the current state.
pub fn record_step(
    mc: &mut ModelChangeMatrix,
    prev_space: SpaceId,
    cur_space: SpaceId,
    cur_state: GridPos,
) {
    if prev_space != cur_space {
        mc[cur_state] += 1;
    }
}

/// Threshold (as a value of the matrix) maximizing the between-class
/// variance, computed exactly over the distinct-value histogram.
///
/// For a split into `{v < t}` and `{v >= t}` with counts `c0, c1` and sums
/// `s0, s1`, the between-class variance is proportional to
/// `(s0*c1 - s1*c0)^2 / (c0*c1)`; candidates are compared as exact integer
/// fractions so the scan is bit-reproducible. Ties keep the smallest
/// threshold. Returns `None` when fewer than two distinct values exist.
fn otsu_scan(values: &[u64]) -> Option<u64> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    // (value, count, sum) per distinct value, ascending.
    let mut bins: Vec<(u64, u128, u128)> = Vec::new();
    for &v in &sorted {
        match bins.last_mut() {
            Some((bv, c, s)) if *bv == v => {
                *c += 1;
                *s += v as u128;
            }
            _ => bins.push((v, 1, v as u128)),
        }
    }
    if bins.len() < 2 {
        return None;
    }
    let total_count: u128 = bins.iter().map(|b| b.1).sum();
    let total_sum: u128 = bins.iter().map(|b| b.2).sum();
    let mut c0: u128 = 0;
    let mut s0: u128 = 0;
    let mut best: Option<(u128, u128, u64)> = None; // (numerator, denominator, threshold)
    for (i, &(value, count, sum)) in bins.iter().enumerate() {
        if i > 0 {
            let c1 = total_count - c0;
            let s1 = total_sum - s0;
            let diff = (s0 * c1) as i128 - (s1 * c0) as i128;
            let num = (diff * diff) as u128;
            let den = c0 * c1;
            let better = match best {
                None => true,
                Some((bn, bd, _)) => num * bd > bn * den,
            };
            if better {
                best = Some((num, den, value));
            }
        }
        c0 += count;
        s0 += sum;
    }
    best.map(|(_, _, t)| t)
}

/// Otsu's thresholding over the full matrix. Returns the threshold and the
/// binary mask `value >= threshold`. A degenerate matrix (all values equal)
/// yields an infinite threshold and an all-zero mask: no variance means no
/// evidence of bottlenecks.
pub fn otsu_threshold(matrix: &Grid<u64>) -> (f64, Grid<u8>) {
    match otsu_scan(matrix.cells()) {
        Some(t) => (t as f64, matrix.map(|&v| u8::from(v >= t))),
        None => (f64::INFINITY, matrix.map(|_| 0)),
    }
}

/// Non-maximum suppression on the elementwise product `scores * mask`.
///
/// A cell survives iff its product value is positive and is the maximum of
/// its 3x3 window; plateau ties keep only the lexicographically smallest
/// (row, col) cell of each window.
pub fn nms(scores: &Grid<u64>, mask: &Grid<u8>) -> BottleneckMask {
    assert_eq!(
        (scores.height(), scores.width()),
        (mask.height(), mask.width()),
        "shape mismatch"
    );
    let product = |p: GridPos| scores[p] * mask[p] as u64;
    let mut out = scores.map(|_| 0u8);
    let mut cells = Vec::new();
    for pos in scores.positions() {
        let v = product(pos);
        if v == 0 {
            continue;
        }
        let mut survives = true;
        'window: for dr in -1i32..=1 {
            for dc in -1i32..=1 {
                let Some(w) = pos.offset(dr, dc, scores.height(), scores.width()) else {
                    continue;
                };
                let wv = product(w);
                if wv > v || (wv == v && w < pos) {
                    survives = false;
                    break 'window;
                }
            }
        }
        if survives {
            out[pos] = 1;
            cells.push(pos);
        }
    }
    BottleneckMask { mask: out, cells }
}

/// Full extraction: Otsu on the model-change matrix, then NMS on
/// `matrix * otsu_mask`.
pub fn detect(mc: &ModelChangeMatrix) -> BottleneckMask {
    let (_, mask) = otsu_threshold(mc);
    nms(mc, &mask)
}

/// Experience-based baseline: the identical Otsu + NMS pipeline applied to
/// cumulative state-visit counts instead of model changes.
pub fn frequency_baseline(visits: &VisitMatrix) -> BottleneckMask {
    let (_, mask) = otsu_threshold(visits);
    nms(visits, &mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pos(r: usize, c: usize) -> GridPos {
        GridPos::new(r, c)
    }

    fn grid_from(rows: &[&[u64]]) -> Grid<u64> {
        let height = rows.len();
        let width = rows[0].len();
        Grid::from_vec(height, width, rows.concat())
    }

    /// Exhaustive threshold sweep recomputing both classes from scratch.
    fn otsu_brute(values: &[u64]) -> Option<u64> {
        let mut distinct = values.to_vec();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() < 2 {
            return None;
        }
        let mut best: Option<(u128, u128, u64)> = None;
        for &t in &distinct[1..] {
            let (mut c0, mut s0, mut c1, mut s1) = (0u128, 0u128, 0u128, 0u128);
            for &v in values {
                if v < t {
                    c0 += 1;
                    s0 += v as u128;
                } else {
                    c1 += 1;
                    s1 += v as u128;
                }
            }
            let diff = (s0 * c1) as i128 - (s1 * c0) as i128;
            let (num, den) = ((diff * diff) as u128, c0 * c1);
            let better = match best {
                None => true,
                Some((bn, bd, _)) => num * bd > bn * den,
            };
            if better {
                best = Some((num, den, t));
            }
        }
        best.map(|(_, _, t)| t)
    }

    #[test]
    fn no_space_change_no_count() {
        let mut mc: ModelChangeMatrix = Grid::new(3, 3);
        for _ in 0..5 {
            record_step(&mut mc, SpaceId::Agg, SpaceId::Agg, pos(1, 1));
        }
        assert!(mc.cells().iter().all(|&v| v == 0));
    }

    #[test]
    fn space_flip_counts_on_entered_state() {
        let mut mc: ModelChangeMatrix = Grid::new(3, 3);
        record_step(&mut mc, SpaceId::Main, SpaceId::Agg, pos(2, 0));
        assert_eq!(mc[pos(2, 0)], 1);
        record_step(&mut mc, SpaceId::Agg, SpaceId::Main, pos(2, 0));
        assert_eq!(mc[pos(2, 0)], 2);
    }

    #[test]
    fn otsu_separates_two_clusters() {
        let g = grid_from(&[&[0, 0, 0], &[10, 10, 0]]);
        let (t, mask) = otsu_threshold(&g);
        assert_eq!(t, 10.0);
        assert_eq!(mask.cells(), &[0, 0, 0, 1, 1, 0]);
    }

    #[test]
    fn otsu_picks_the_wide_gap() {
        let g = grid_from(&[&[1, 2], &[9, 10]]);
        let (t, mask) = otsu_threshold(&g);
        assert_eq!(t, 9.0);
        assert_eq!(mask.cells(), &[0, 0, 1, 1]);
    }

    #[test]
    fn degenerate_matrix_yields_empty_mask() {
        let g = grid_from(&[&[4, 4], &[4, 4]]);
        let (t, mask) = otsu_threshold(&g);
        assert!(t.is_infinite());
        assert!(mask.cells().iter().all(|&v| v == 0));
    }

    #[test]
    fn fast_otsu_equals_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let n = rng.random_range(2..200);
            let values: Vec<u64> = (0..n).map(|_| rng.random_range(0..40)).collect();
            assert_eq!(otsu_scan(&values), otsu_brute(&values), "values {values:?}");
        }
    }

    #[test]
    fn lone_positive_cell_survives_nms() {
        let g = grid_from(&[&[0, 0, 0], &[0, 3, 0], &[0, 0, 0]]);
        let mask = g.map(|_| 1u8);
        let out = nms(&g, &mask);
        assert_eq!(out.cells, vec![pos(1, 1)]);
    }

    #[test]
    fn nms_keeps_the_larger_neighbor() {
        let g = grid_from(&[&[5, 7]]);
        let mask = g.map(|_| 1u8);
        let out = nms(&g, &mask);
        assert_eq!(out.cells, vec![pos(0, 1)]);
    }

    #[test]
    fn plateau_tie_keeps_lexicographically_smallest() {
        let g = grid_from(&[&[6, 6]]);
        let mask = g.map(|_| 1u8);
        let out = nms(&g, &mask);
        assert_eq!(out.cells, vec![pos(0, 0)]);
    }

    #[test]
    fn nms_output_is_masked_subset_with_separation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let g = Grid::from_vec(6, 6, (0..36).map(|_| rng.random_range(0..5)).collect());
            let (_, mask) = otsu_threshold(&g);
            let out = nms(&g, &mask);
            for &c in &out.cells {
                assert_eq!(mask[c], 1, "survivor outside the Otsu mask");
            }
            for &a in &out.cells {
                for &b in &out.cells {
                    assert!(a == b || a.chebyshev(b) > 1, "{a} and {b} both survived");
                }
            }
        }
    }

    #[test]
    fn all_zero_counts_detect_nothing() {
        let mc: ModelChangeMatrix = Grid::new(5, 5);
        assert!(detect(&mc).cells.is_empty());
    }

    #[test]
    fn synthetic_doorway_trajectory_is_detected() {
        // Walks across row 2 of a 5x9 grid, flipping to the main space on the
        // "doorway" cell (2, 4) and back to aggregation right after.
        let mut mc: ModelChangeMatrix = Grid::new(5, 9);
        for _ in 0..12 {
            let mut prev = SpaceId::Agg;
            for col in 1..9 {
                let here = if col == 4 { SpaceId::Main } else { SpaceId::Agg };
                record_step(&mut mc, prev, here, pos(2, col));
                prev = here;
            }
        }
        assert_eq!(mc[pos(2, 4)], 12);
        assert_eq!(mc[pos(2, 5)], 12);
        let out = detect(&mc);
        assert_eq!(out.cells, vec![pos(2, 4)], "doorway tie resolves to the entry cell");
    }

    #[test]
    fn uniform_visits_give_empty_baseline() {
        let visits: VisitMatrix = Grid::from_vec(4, 4, vec![3; 16]);
        assert!(frequency_baseline(&visits).cells.is_empty());
    }

    #[test]
    fn visit_peak_at_start_is_the_baseline_failure_mode() {
        // Traffic decays away from the start corner.
        let visits: VisitMatrix = Grid::from_vec(
            5,
            5,
            (0..25)
                .map(|i| 40u64.saturating_sub(6 * (i / 5 + i % 5)).max(1))
                .collect(),
        );
        let out = frequency_baseline(&visits);
        assert!(out.contains(pos(0, 0)), "start state should be detected: {:?}", out.cells);
    }

    #[test]
    fn detect_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g: Grid<u64> = Grid::from_vec(8, 8, (0..64).map(|_| rng.random_range(0..30)).collect());
        assert_eq!(detect(&g), detect(&g));
    }
}
