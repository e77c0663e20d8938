//! Main and aggregation state spaces.
//!
//! The main space is the raw grid (identity mapping). The aggregation space
//! replaces each state by its local neighborhood: all walkable cells strictly
//! within distance `L` of it. Nothing is learned in the aggregation space;
//! its Q-values are visit-count-weighted averages of the members' main-space
//! values, and its confidence statistics are the members' running sums pooled
//! by plain summation (so they equal the sums of the concatenated sample
//! histories).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::env::{Action, Layout};
use crate::grid::GridPos;
use crate::learner::QTable;
use crate::{Error, Result};

/// The two competing representations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceId {
    Main,
    Agg,
}

impl fmt::Display for SpaceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpaceId::Main => "main",
            SpaceId::Agg => "agg",
        })
    }
}

/// Distance metric for neighborhood membership.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Euclidean,
    Manhattan,
}

impl Metric {
    pub fn distance(self, a: GridPos, b: GridPos) -> f64 {
        let dr = a.row.abs_diff(b.row) as f64;
        let dc = a.col.abs_diff(b.col) as f64;
        match self {
            Metric::Euclidean => (dr * dr + dc * dc).sqrt(),
            Metric::Manhattan => dr + dc,
        }
    }
}

/// Aggregation-space shape: metric plus the strict distance bound `L`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AggregationSpec {
    pub metric: Metric,
    pub max_distance: f64,
}

impl Default for AggregationSpec {
    fn default() -> Self {
        Self {
            metric: Metric::Euclidean,
            max_distance: 2.0,
        }
    }
}

/// The members of one aggregated state.
#[derive(Clone, Debug, PartialEq)]
pub struct Neighborhood {
    pub center: GridPos,
    pub metric: Metric,
    pub max_distance: f64,
    /// Row-major ordered walkable cells with `d(center, cell) < max_distance`.
    /// Always contains the center itself.
    pub members: Vec<GridPos>,
}

/// Collects the walkable cells strictly within `spec.max_distance` of
/// `center`. With the default Euclidean `L = 2` an interior cell gets its
/// full 3x3 block; walls and out-of-grid cells are excluded.
pub fn neighborhood(center: GridPos, layout: &Layout, spec: AggregationSpec) -> Neighborhood {
    debug_assert!(layout.is_walkable(center), "center {center} must be walkable");
    let reach = spec.max_distance.ceil() as i32;
    let mut members = Vec::new();
    for dr in -reach..=reach {
        for dc in -reach..=reach {
            let Some(pos) = center.offset(dr, dc, layout.height(), layout.width()) else {
                continue;
            };
            if layout.is_walkable(pos) && spec.metric.distance(center, pos) < spec.max_distance {
                members.push(pos);
            }
        }
    }
    Neighborhood {
        center,
        metric: spec.metric,
        max_distance: spec.max_distance,
        members,
    }
}

/// Aggregation-space Q-value: the visit-count-weighted average of the
/// members' main-space values,
/// `sum_s' n(s',a) * q(s',a) / sum_s' n(s',a)`.
///
/// Errors with [`Error::ZeroSamples`] when no member has ever taken `a`.
pub fn q_agg(action: Action, table: &QTable, nb: &Neighborhood) -> Result<f64> {
    let mut weight = 0u64;
    let mut acc = 0.0;
    for &member in &nb.members {
        let s = table.stats(member, action);
        weight += s.n;
        acc += s.n as f64 * s.q;
    }
    if weight == 0 {
        return Err(Error::ZeroSamples {
            state: nb.center,
            action,
        });
    }
    Ok(acc / weight as f64)
}

/// Pooled running sums of the members' recorded histories.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PooledStats {
    pub n: u64,
    pub s1: f64,
    pub s2: f64,
    pub t_samples: u64,
}

/// Sums the members' counts and running sums, which is exactly what the
/// standard-deviation formula would see on the concatenation of their sample
/// histories.
pub fn pooled_stats(action: Action, table: &QTable, nb: &Neighborhood) -> PooledStats {
    let mut pooled = PooledStats::default();
    for &member in &nb.members {
        let s = table.stats(member, action);
        pooled.n += s.n;
        pooled.s1 += s.s1;
        pooled.s2 += s.s2;
        pooled.t_samples += s.t_samples;
    }
    pooled
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Layout;
    use crate::free_energy::sample_std;

    fn pos(r: usize, c: usize) -> GridPos {
        GridPos::new(r, c)
    }

    fn open_grid() -> Layout {
        let rows = ".........\n".repeat(8);
        Layout::parse(&format!("max_steps=50\n{rows}........G\n"), "open").unwrap()
    }

    #[test]
    fn interior_euclidean_l2_is_the_3x3_block() {
        let layout = open_grid();
        let nb = neighborhood(pos(4, 4), &layout, AggregationSpec::default());
        assert_eq!(nb.members.len(), 9);
        for dr in -1..=1 {
            for dc in -1..=1 {
                let p = pos((4 + dr) as usize, (4 + dc) as usize);
                assert!(nb.members.contains(&p));
            }
        }
        assert!(nb.members.contains(&nb.center));
    }

    #[test]
    fn corner_clips_to_four_cells() {
        let layout = open_grid();
        let nb = neighborhood(pos(0, 0), &layout, AggregationSpec::default());
        assert_eq!(nb.members.len(), 4);
    }

    #[test]
    fn walls_are_excluded() {
        let layout = Layout::builtin("two_rooms").unwrap();
        // (1, 3) touches the interior wall at col 4: the 3 wall cells drop out.
        let nb = neighborhood(pos(1, 3), &layout, AggregationSpec::default());
        assert_eq!(nb.members.len(), 6);
        assert!(nb.members.iter().all(|&p| layout.is_walkable(p)));
    }

    #[test]
    fn manhattan_l2_is_the_diamond() {
        let layout = open_grid();
        let spec = AggregationSpec {
            metric: Metric::Manhattan,
            max_distance: 2.0,
        };
        let nb = neighborhood(pos(4, 4), &layout, spec);
        // Strict d < 2 keeps the center and the four orthogonal neighbors.
        assert_eq!(nb.members.len(), 5);
    }

    #[test]
    fn l_below_one_collapses_to_the_center() {
        let layout = open_grid();
        let spec = AggregationSpec {
            metric: Metric::Euclidean,
            max_distance: 0.99,
        };
        let nb = neighborhood(pos(4, 4), &layout, spec);
        assert_eq!(nb.members, vec![pos(4, 4)]);
    }

    #[test]
    fn neighborhood_is_symmetric_on_open_grid() {
        let layout = open_grid();
        let spec = AggregationSpec::default();
        for a in layout_positions(&layout) {
            for b in layout_positions(&layout) {
                let a_in_b = neighborhood(b, &layout, spec).members.contains(&a);
                let b_in_a = neighborhood(a, &layout, spec).members.contains(&b);
                assert_eq!(a_in_b, b_in_a, "asymmetry between {a} and {b}");
            }
        }
    }

    fn layout_positions(layout: &Layout) -> Vec<GridPos> {
        (0..layout.height())
            .flat_map(|r| (0..layout.width()).map(move |c| pos(r, c)))
            .filter(|&p| layout.is_walkable(p))
            .collect()
    }

    fn table_with(entries: &[(GridPos, Action, f64, u64)]) -> QTable {
        // Fabricates stats directly via repeated zero-rate updates plus a
        // final assignment through sarsa with lambda = 1 toward the value.
        let mut t = QTable::new(9, 9);
        for &(s, a, q, n) in entries {
            for _ in 0..n {
                // lambda = 1 pins q to the target r each update
                t.sarsa_update(s, a, q, pos(8, 8), Action::Up, 1.0, 0.0);
            }
            assert_eq!(t.stats(s, a).n, n);
            assert_eq!(t.q(s, a), q);
        }
        t
    }

    #[test]
    fn weighted_average_hand_value() {
        let layout = open_grid();
        let nb = neighborhood(pos(4, 4), &layout, AggregationSpec::default());
        let t = table_with(&[
            (pos(4, 3), Action::Up, 1.0, 1),
            (pos(4, 5), Action::Up, 3.0, 3),
        ]);
        assert_eq!(q_agg(Action::Up, &t, &nb).unwrap(), 2.5);
    }

    #[test]
    fn constant_values_are_a_fixed_point() {
        let layout = open_grid();
        let nb = neighborhood(pos(4, 4), &layout, AggregationSpec::default());
        let t = table_with(&[
            (pos(3, 3), Action::Left, -2.0, 4),
            (pos(4, 4), Action::Left, -2.0, 1),
            (pos(5, 5), Action::Left, -2.0, 9),
        ]);
        assert!((q_agg(Action::Left, &t, &nb).unwrap() - -2.0).abs() < 1e-12);
    }

    #[test]
    fn single_visited_member_dominates() {
        let layout = open_grid();
        let nb = neighborhood(pos(4, 4), &layout, AggregationSpec::default());
        let t = table_with(&[(pos(3, 4), Action::Down, -7.25, 5)]);
        assert_eq!(q_agg(Action::Down, &t, &nb).unwrap(), -7.25);
    }

    #[test]
    fn zero_samples_is_an_error() {
        let layout = open_grid();
        let nb = neighborhood(pos(4, 4), &layout, AggregationSpec::default());
        let t = QTable::new(9, 9);
        assert!(matches!(
            q_agg(Action::Up, &t, &nb),
            Err(Error::ZeroSamples { .. })
        ));
    }

    #[test]
    fn pooled_counts_are_additive() {
        let layout = open_grid();
        let nb = neighborhood(pos(4, 4), &layout, AggregationSpec::default());
        let t = table_with(&[
            (pos(4, 3), Action::Right, 1.0, 2),
            (pos(4, 5), Action::Right, 2.0, 2),
        ]);
        let p = pooled_stats(Action::Right, &t, &nb);
        assert_eq!(p.n, 4);
        assert_eq!(p.t_samples, 4);
    }

    #[test]
    fn single_cell_neighborhood_pools_to_main_stats() {
        let layout = open_grid();
        let spec = AggregationSpec {
            metric: Metric::Euclidean,
            max_distance: 0.5,
        };
        let nb = neighborhood(pos(2, 2), &layout, spec);
        let mut t = QTable::new(9, 9);
        for r in [-1.0, -1.0, 4.0] {
            t.sarsa_update(pos(2, 2), Action::Up, r, pos(2, 3), Action::Up, 0.7, 0.9);
        }
        let main = *t.stats(pos(2, 2), Action::Up);
        let p = pooled_stats(Action::Up, &t, &nb);
        assert_eq!((p.n, p.s1, p.s2, p.t_samples), (main.n, main.s1, main.s2, main.t_samples));
        assert_eq!(q_agg(Action::Up, &t, &nb).unwrap(), main.q);
    }

    #[test]
    fn pooling_equals_concatenated_histories() {
        // Oracle: evaluate the std formula on the concatenation of the two
        // members' recorded histories and compare with the pooled-sums path.
        let layout = open_grid();
        let nb = neighborhood(pos(4, 4), &layout, AggregationSpec::default());
        let mut t = QTable::new(9, 9);
        let mut histories: Vec<f64> = Vec::new();
        for (cell, rewards) in [
            (pos(4, 3), vec![-1.0, -1.0, -10.0]),
            (pos(4, 5), vec![-1.0, 10.0, -1.0, -1.0]),
        ] {
            for r in rewards {
                t.sarsa_update(cell, Action::Up, r, pos(0, 0), Action::Up, 0.9, 0.9);
                histories.push(t.q(cell, Action::Up));
            }
        }
        let p = pooled_stats(Action::Up, &t, &nb);
        assert_eq!(p.t_samples as usize, histories.len());
        let n = histories.len() as f64;
        let s1: f64 = histories.iter().sum();
        let s2: f64 = histories.iter().map(|v| v * v).sum();
        assert!((p.s1 - s1).abs() < 1e-12);
        assert!((p.s2 - s2).abs() < 1e-12);
        let concat_std = (((n * s2 - s1 * s1) / (n * (n - 1.0))).max(0.0)).sqrt();
        let pooled_std = sample_std(p.s1, p.s2, p.t_samples);
        assert!((concat_std - pooled_std).abs() < 1e-12);
    }
}
