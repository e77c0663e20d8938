//! Tabular SARSA with per-pair running statistics.
//!
//! Besides the value estimate itself, every (state, action) pair keeps the
//! visit count and the running sum / sum of squares of the recorded value
//! history. Those sums are what the confidence-interval machinery consumes,
//! so no per-sample history is ever stored. One sample is recorded per update
//! of the pair, after the update has been applied.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Layout};
use crate::grid::GridPos;
use crate::{Error, Result};

/// Running statistics for one (state, action) pair.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct QStats {
    /// Current value estimate.
    pub q: f64,
    /// Number of updates applied to this pair.
    pub n: u64,
    /// Running sum of the recorded value samples.
    pub s1: f64,
    /// Running sum of the squared value samples.
    pub s2: f64,
    /// Number of recorded samples (tracks `n`).
    pub t_samples: u64,
}

/// Per-episode learning-rate and exploration schedules.
///
/// `lambda_k = lambda0 * (1 - lambda_decay)^k` and
/// `eps_k = eps0 * exp(-eps_decay * k)` for episode index `k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedules {
    pub gamma: f64,
    pub lambda0: f64,
    pub lambda_decay: f64,
    pub eps0: f64,
    pub eps_decay: f64,
}

impl Default for Schedules {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            lambda0: 0.99,
            lambda_decay: 0.001,
            eps0: 0.3,
            eps_decay: 0.3,
        }
    }
}

impl Schedules {
    /// (learning rate, exploration rate) for episode `k`.
    pub fn at(&self, episode: u32) -> (f64, f64) {
        let lambda = self.lambda0 * (1.0 - self.lambda_decay).powi(episode as i32);
        let eps = self.eps0 * (-self.eps_decay * episode as f64).exp();
        (lambda, eps)
    }
}

/// Dense Q-table over all grid cells and the full action alphabet. Slots for
/// actions that a layout never offers in a state simply stay at zero.
#[derive(Clone, Debug)]
pub struct QTable {
    height: usize,
    width: usize,
    slots: Vec<[QStats; Action::COUNT]>,
}

impl QTable {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            slots: vec![[QStats::default(); Action::COUNT]; height * width],
        }
    }

    pub fn for_layout(layout: &Layout) -> Self {
        Self::new(layout.height(), layout.width())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn flat(&self, state: GridPos) -> usize {
        debug_assert!(state.row < self.height && state.col < self.width);
        state.row * self.width + state.col
    }

    pub fn stats(&self, state: GridPos, action: Action) -> &QStats {
        &self.slots[self.flat(state)][action.index()]
    }

    fn stats_mut(&mut self, state: GridPos, action: Action) -> &mut QStats {
        let i = self.flat(state);
        &mut self.slots[i][action.index()]
    }

    pub fn q(&self, state: GridPos, action: Action) -> f64 {
        self.stats(state, action).q
    }

    /// Value estimates for `actions` in `state`, in the given order.
    pub fn q_values(&self, state: GridPos, actions: &[Action]) -> Vec<f64> {
        actions.iter().map(|&a| self.q(state, a)).collect()
    }

    /// One on-policy update:
    /// `q(s,a) += lambda * (r + gamma * q(s',a') - q(s,a))`,
    /// then the new value is appended to the pair's running sums.
    #[allow(clippy::too_many_arguments)]
    pub fn sarsa_update(
        &mut self,
        state: GridPos,
        action: Action,
        reward: f64,
        next_state: GridPos,
        next_action: Action,
        lambda: f64,
        gamma: f64,
    ) {
        debug_assert!((0.0..=1.0).contains(&lambda) && (0.0..=1.0).contains(&gamma));
        let target = reward + gamma * self.q(next_state, next_action);
        let entry = self.stats_mut(state, action);
        entry.q += lambda * (target - entry.q);
        assert!(entry.q.is_finite(), "q diverged at {state} {action}");
        entry.n += 1;
        entry.s1 += entry.q;
        entry.s2 += entry.q * entry.q;
        entry.t_samples += 1;
    }

    /// Writes the full table as CSV with columns
    /// `row,col,action,q,n,s1,s2,t_samples`.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "row,col,action,q,n,s1,s2,t_samples")?;
        for row in 0..self.height {
            for col in 0..self.width {
                for idx in 0..Action::COUNT {
                    let action = Action::from_index(idx).expect("idx < COUNT");
                    let s = &self.slots[row * self.width + col][idx];
                    writeln!(
                        w,
                        "{},{},{},{},{},{},{},{}",
                        row,
                        col,
                        action.name(),
                        s.q,
                        s.n,
                        s.s1,
                        s.s2,
                        s.t_samples
                    )?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a table previously written by [`QTable::save_csv`]. Dimensions
    /// are inferred from the largest row/col present.
    pub fn load_csv(path: &Path) -> Result<QTable> {
        let malformed = |reason: &str| Error::MalformedFile {
            path: path.to_path_buf(),
            reason: reason.to_string(),
        };
        let reader = BufReader::new(File::open(path)?);
        let mut records: Vec<(GridPos, Action, QStats)> = Vec::new();
        let mut height = 0usize;
        let mut width = 0usize;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if i == 0 || line.trim().is_empty() {
                continue; // header
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 8 {
                return Err(malformed("expected 8 columns"));
            }
            let row: usize = fields[0].parse().map_err(|_| malformed("bad row"))?;
            let col: usize = fields[1].parse().map_err(|_| malformed("bad col"))?;
            let action = Action::parse(fields[2]).ok_or_else(|| malformed("bad action"))?;
            let stats = QStats {
                q: fields[3].parse().map_err(|_| malformed("bad q"))?,
                n: fields[4].parse().map_err(|_| malformed("bad n"))?,
                s1: fields[5].parse().map_err(|_| malformed("bad s1"))?,
                s2: fields[6].parse().map_err(|_| malformed("bad s2"))?,
                t_samples: fields[7].parse().map_err(|_| malformed("bad t_samples"))?,
            };
            height = height.max(row + 1);
            width = width.max(col + 1);
            records.push((GridPos::new(row, col), action, stats));
        }
        if records.is_empty() {
            return Err(malformed("no records"));
        }
        let mut table = QTable::new(height, width);
        for (pos, action, stats) in records {
            *table.stats_mut(pos, action) = stats;
        }
        Ok(table)
    }
}

/// Epsilon-greedy distribution over `q`: every action gets `eps / k` and the
/// remaining `1 - eps` is split equally among the maximal entries (exact
/// ties share it).
pub fn epsilon_greedy(q: &[f64], eps: f64) -> Vec<f64> {
    assert!(!q.is_empty());
    debug_assert!((0.0..=1.0).contains(&eps));
    let k = q.len() as f64;
    let max = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ties = q.iter().filter(|&&v| v == max).count() as f64;
    q.iter()
        .map(|&v| eps / k + if v == max { (1.0 - eps) / ties } else { 0.0 })
        .collect()
}

/// Samples an action index from a probability vector. The vector must sum to
/// one within 1e-9.
pub fn select_action<R: Rng + ?Sized>(policy: &[f64], rng: &mut R) -> Result<usize> {
    let sum: f64 = policy.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || policy.iter().any(|&p| p < 0.0) {
        return Err(Error::NonNormalizedPolicy(sum));
    }
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, &p) in policy.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(policy.len() - 1) // float round-off fell past the last bin
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pos(r: usize, c: usize) -> GridPos {
        GridPos::new(r, c)
    }

    #[test]
    fn sarsa_hand_computed_updates() {
        let mut t = QTable::new(2, 2);
        // q=0, r=-1, q(s',a')=0, lambda=0.5, gamma=0.9 -> q=-0.5
        t.sarsa_update(pos(0, 0), Action::Up, -1.0, pos(0, 1), Action::Up, 0.5, 0.9);
        assert_eq!(t.q(pos(0, 0), Action::Up), -0.5);
        // q=1, r=+10, q(s',a')=0, lambda=1 -> q=10
        let mut t = QTable::new(2, 2);
        t.stats_mut(pos(0, 0), Action::Down).q = 1.0;
        t.sarsa_update(pos(0, 0), Action::Down, 10.0, pos(1, 1), Action::Up, 1.0, 0.9);
        assert_eq!(t.q(pos(0, 0), Action::Down), 10.0);
    }

    #[test]
    fn zero_learning_rate_only_counts() {
        let mut t = QTable::new(1, 2);
        t.stats_mut(pos(0, 0), Action::Left).q = 2.5;
        t.sarsa_update(pos(0, 0), Action::Left, -1.0, pos(0, 1), Action::Left, 0.0, 0.9);
        let s = t.stats(pos(0, 0), Action::Left);
        assert_eq!(s.q, 2.5);
        assert_eq!(s.n, 1);
        assert_eq!(s.t_samples, 1);
    }

    #[test]
    fn n_counts_updates_per_pair() {
        let mut t = QTable::new(1, 2);
        for _ in 0..7 {
            t.sarsa_update(pos(0, 0), Action::Right, -1.0, pos(0, 1), Action::Up, 0.3, 0.9);
        }
        t.sarsa_update(pos(0, 1), Action::Up, -1.0, pos(0, 0), Action::Up, 0.3, 0.9);
        assert_eq!(t.stats(pos(0, 0), Action::Right).n, 7);
        assert_eq!(t.stats(pos(0, 1), Action::Up).n, 1);
    }

    #[test]
    fn running_sums_match_two_pass_variance() {
        // Oracle: keep the full recorded history and compare its two-pass
        // sample variance against the variance recovered from (s1, s2, t).
        let mut t = QTable::new(1, 2);
        let mut history = Vec::new();
        let rewards = [-1.0, -1.0, -10.0, -1.0, 10.0, -1.0, -1.0, -10.0];
        for (i, &r) in rewards.iter().enumerate() {
            let lambda = 0.99 * 0.999f64.powi(i as i32);
            t.sarsa_update(pos(0, 0), Action::Up, r, pos(0, 1), Action::Down, lambda, 0.9);
            history.push(t.q(pos(0, 0), Action::Up));
        }
        let s = t.stats(pos(0, 0), Action::Up);
        assert_eq!(s.t_samples as usize, history.len());
        let mean = history.iter().sum::<f64>() / history.len() as f64;
        let two_pass =
            history.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (history.len() - 1) as f64;
        let n = s.t_samples as f64;
        let from_sums = (n * s.s2 - s.s1 * s.s1) / (n * (n - 1.0));
        assert!((two_pass - from_sums).abs() < 1e-9, "{two_pass} vs {from_sums}");
        // Cauchy-Schwarz invariant on the sums.
        assert!(s.s2 * n >= s.s1 * s.s1 - 1e-9);
    }

    #[test]
    fn schedule_values() {
        let s = Schedules::default();
        let (l0, e0) = s.at(0);
        assert_eq!(l0, 0.99);
        assert_eq!(e0, 0.3);
        let (_, e1) = s.at(1);
        assert!((e1 - 0.3 * (-0.3f64).exp()).abs() < 1e-12);
        assert!((e1 - 0.22225).abs() < 1e-4);
        // Decays are monotone toward zero.
        let mut prev = s.at(0);
        for k in 1..200 {
            let cur = s.at(k);
            assert!(cur.0 < prev.0 && cur.1 < prev.1);
            prev = cur;
        }
        assert!(s.at(10_000).0 < 1e-4 && s.at(10_000).1 < 1e-100);
    }

    #[test]
    fn greedy_when_eps_zero() {
        let p = epsilon_greedy(&[1.0, 0.0, 0.0, 0.0], 0.0);
        assert_eq!(p, vec![1.0, 0.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(select_action(&p, &mut rng).unwrap(), 0);
        }
    }

    #[test]
    fn pure_exploration_is_uniform() {
        let p = epsilon_greedy(&[1.0, 0.0, 0.0, 0.0], 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0u32; 4];
        let samples = 100_000;
        for _ in 0..samples {
            counts[select_action(&p, &mut rng).unwrap()] += 1;
        }
        for c in counts {
            let freq = c as f64 / samples as f64;
            assert!((freq - 0.25).abs() < 0.02, "freq {freq}");
        }
    }

    #[test]
    fn eps_greedy_top_action_frequency() {
        // eps = 0.3 over 4 actions: P(best) = 0.7 + 0.3/4 = 0.775.
        let p = epsilon_greedy(&[1.0, 0.0, 0.0, 0.0], 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut hits = 0u32;
        let samples = 100_000;
        for _ in 0..samples {
            if select_action(&p, &mut rng).unwrap() == 0 {
                hits += 1;
            }
        }
        let freq = hits as f64 / samples as f64;
        assert!((freq - 0.775).abs() < 0.02, "freq {freq}");
    }

    #[test]
    fn ties_split_the_greedy_mass() {
        let p = epsilon_greedy(&[0.0, 0.0, 0.0, 0.0], 0.2);
        for v in &p {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn non_normalized_vector_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            select_action(&[0.5, 0.4], &mut rng),
            Err(Error::NonNormalizedPolicy(_))
        ));
    }

    #[test]
    fn snapshot_roundtrips_through_csv() {
        let mut t = QTable::new(3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let s = pos(rng.random_range(0..3), rng.random_range(0..4));
            let s2 = pos(rng.random_range(0..3), rng.random_range(0..4));
            let a = Action::from_index(rng.random_range(0..4)).unwrap();
            t.sarsa_update(s, a, -1.0, s2, Action::Up, 0.5, 0.9);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snapshot.csv");
        t.save_csv(&path).unwrap();
        let loaded = QTable::load_csv(&path).unwrap();
        assert_eq!(loaded.height(), 3);
        assert_eq!(loaded.width(), 4);
        for r in 0..3 {
            for c in 0..4 {
                for i in 0..Action::COUNT {
                    let a = Action::from_index(i).unwrap();
                    assert_eq!(t.stats(pos(r, c), a), loaded.stats(pos(r, c), a));
                }
            }
        }
    }
}
