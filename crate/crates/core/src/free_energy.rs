//! Thompson-sampling beliefs, free energy, and per-state space selection.
//!
//! Action values are modeled as uniform distributions on empirical-Bernstein
//! confidence intervals built from each pair's running statistics. The
//! Thompson policy of a space is the probability that each action's value is
//! the maximum under those beliefs, computed by deterministic quadrature. A
//! space's score combines a KL penalty to the behavioral policy (tempered by
//! `alpha`), a cross-space utility correction (tempered by `beta`), and the
//! expected surprise of the space's own Thompson policy; the target policy
//! minimizing it has a Gibbs closed form. Whichever space scores lower is the
//! selected model for the state.

use serde::{Deserialize, Serialize};

use crate::env::Layout;
use crate::grid::GridPos;
use crate::learner::{epsilon_greedy, QTable};
use crate::space::{neighborhood, pooled_stats, q_agg, AggregationSpec, SpaceId};
use crate::{Error, Result};

/// Free-energy hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeParams {
    /// Weight of the behavioral-policy constraint (larger = weaker pull).
    pub alpha: f64,
    /// Weight of the main-space utility constraint; must exceed 1.
    pub beta: f64,
    /// Confidence parameter: intervals hold with probability `1 - nu`.
    pub nu: f64,
    /// Probabilities are clamped to at least this before any log.
    pub prob_floor: f64,
}

impl Default for FeParams {
    fn default() -> Self {
        Self {
            alpha: 4.0,
            beta: 7.0,
            nu: 0.1,
            prob_floor: 1e-10,
        }
    }
}

/// Number of Simpson subintervals used by [`thompson_policy`].
pub const QUAD_SUBINTERVALS: usize = 256;

/// Tie margin for space selection: free energies closer than this resolve
/// to the main space.
pub const SPACE_TIE_EPS: f64 = 1e-12;

/// Uniform belief interval for one action's value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeliefInterval {
    pub center: f64,
    pub radius: f64,
    /// False when the underlying pair has fewer than 2 samples; the whole
    /// space then falls back to a uniform Thompson policy.
    pub sufficient: bool,
}

impl BeliefInterval {
    fn insufficient() -> Self {
        Self {
            center: 0.0,
            radius: 0.0,
            sufficient: false,
        }
    }

    /// P(value <= x) under the belief.
    fn cdf(&self, x: f64) -> f64 {
        if self.radius == 0.0 {
            if x >= self.center {
                1.0
            } else {
                0.0
            }
        } else {
            ((x - (self.center - self.radius)) / (2.0 * self.radius)).clamp(0.0, 1.0)
        }
    }
}

/// Sample standard deviation recovered from running sums:
/// `sqrt((t * s2 - s1^2) / (t * (t - 1)))`, clamped at zero against float
/// cancellation. Requires `t >= 2`.
pub fn sample_std(s1: f64, s2: f64, t_samples: u64) -> f64 {
    debug_assert!(t_samples >= 2);
    let t = t_samples as f64;
    (((t * s2 - s1 * s1) / (t * (t - 1.0))).max(0.0)).sqrt()
}

/// Empirical-Bernstein interval half-width:
/// `std * sqrt(2 ln(3/nu) / n) + 3 ln(3/nu) / n` (natural log).
///
/// Errors with [`Error::InsufficientSamples`] below 2 samples; callers treat
/// that as "use the uniform fallback".
pub fn confidence_radius(n: u64, s1: f64, s2: f64, t_samples: u64, nu: f64) -> Result<f64> {
    if n < 2 || t_samples < 2 {
        return Err(Error::InsufficientSamples(n.min(t_samples)));
    }
    debug_assert!(nu > 0.0 && nu < 1.0);
    let log_term = (3.0 / nu).ln();
    let nf = n as f64;
    Ok(sample_std(s1, s2, t_samples) * (2.0 * log_term / nf).sqrt() + 3.0 * log_term / nf)
}

fn uniform(k: usize) -> Vec<f64> {
    vec![1.0 / k as f64; k]
}

/// Probability that each action's value is the maximum under independent
/// uniform beliefs on the given intervals.
///
/// Computed by 256-subinterval composite Simpson quadrature over each
/// action's own support; zero-width intervals are treated as point masses
/// (exact ties split the win evenly). If any action lacks sufficient
/// statistics the whole vector falls back to uniform. The result is
/// normalized, non-negative, and deterministic.
pub fn thompson_policy(intervals: &[BeliefInterval]) -> Vec<f64> {
    let k = intervals.len();
    assert!(k >= 1, "need at least one action");
    if intervals.iter().any(|iv| !iv.sufficient) {
        return uniform(k);
    }
    if k == 1 {
        return vec![1.0];
    }
    let raw: Vec<f64> = (0..k)
        .map(|i| {
            if intervals[i].radius == 0.0 {
                point_mass_win_prob(i, intervals)
            } else {
                quadrature_win_prob(i, intervals)
            }
        })
        .collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return uniform(k);
    }
    raw.into_iter().map(|p| p / total).collect()
}

fn point_mass_win_prob(i: usize, intervals: &[BeliefInterval]) -> f64 {
    let v = intervals[i].center;
    let mut ties = 1.0;
    let mut prod = 1.0;
    for (j, other) in intervals.iter().enumerate() {
        if j == i {
            continue;
        }
        if other.radius == 0.0 {
            if other.center > v {
                return 0.0;
            }
            if other.center == v {
                ties += 1.0;
            }
        } else {
            prod *= other.cdf(v);
        }
    }
    prod / ties
}

fn quadrature_win_prob(i: usize, intervals: &[BeliefInterval]) -> f64 {
    let iv = intervals[i];
    let lo = iv.center - iv.radius;
    let hi = iv.center + iv.radius;
    let h = (hi - lo) / QUAD_SUBINTERVALS as f64;
    let others = |x: f64| -> f64 {
        intervals
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, o)| o.cdf(x))
            .product()
    };
    let mut sum = others(lo) + others(hi);
    for step in 1..QUAD_SUBINTERVALS {
        let weight = if step % 2 == 1 { 4.0 } else { 2.0 };
        sum += weight * others(lo + step as f64 * h);
    }
    // Simpson integral of the product of CDFs, times the uniform density.
    (sum * h / 3.0) / (hi - lo)
}

fn ln_clamped(p: f64, floor: f64) -> f64 {
    p.clamp(floor, 1.0).ln()
}

/// Utility of each action in space `m`, shifted toward the main space:
/// `u_hat(a) = u_m(a) - (u_m(a) - u_main(a)) / beta` with
/// `u = ln(clamped Thompson probability)`.
pub fn shaped_utility(pi_ts_m: &[f64], pi_ts_main: &[f64], beta: f64, prob_floor: f64) -> Vec<f64> {
    debug_assert_eq!(pi_ts_m.len(), pi_ts_main.len());
    pi_ts_m
        .iter()
        .zip(pi_ts_main)
        .map(|(&pm, &pmain)| {
            let u_m = ln_clamped(pm, prob_floor);
            let u_main = ln_clamped(pmain, prob_floor);
            u_m - (u_m - u_main) / beta
        })
        .collect()
}

/// Gibbs closed form of the free-energy minimizer:
/// `pi*(a) = pi_b(a) * exp(alpha * u_hat(a)) / z`. Returns the policy and the
/// normalizer `z`.
pub fn optimal_policy(pi_b: &[f64], u_hat: &[f64], alpha: f64) -> (Vec<f64>, f64) {
    debug_assert_eq!(pi_b.len(), u_hat.len());
    let weights: Vec<f64> = pi_b
        .iter()
        .zip(u_hat)
        .map(|(&b, &u)| b * (alpha * u).exp())
        .collect();
    let z: f64 = weights.iter().sum();
    assert!(z > 0.0, "all policy weights vanished");
    (weights.into_iter().map(|w| w / z).collect(), z)
}

/// Free energy of a target policy `pi` in a space with Thompson policy
/// `pi_ts_m`, relative to the behavioral policy and the main space:
///
/// `F = E_pi[ ln(pi/pi_b)/alpha + ln(pi_ts_m/pi_ts_main)/beta - ln pi_ts_m ]`
///
/// i.e. a KL penalty to the behavioral policy plus the shaped-utility terms;
/// all logs are clamped by `prob_floor`. [`optimal_policy`] is its exact
/// minimizer over the simplex.
pub fn free_energy(
    pi: &[f64],
    pi_b: &[f64],
    pi_ts_main: &[f64],
    pi_ts_m: &[f64],
    alpha: f64,
    beta: f64,
    prob_floor: f64,
) -> f64 {
    debug_assert!(pi.len() == pi_b.len() && pi.len() == pi_ts_main.len() && pi.len() == pi_ts_m.len());
    let mut f = 0.0;
    for a in 0..pi.len() {
        let p = pi[a];
        if p == 0.0 {
            continue; // lim p->0 of every term is 0
        }
        let info = (ln_clamped(p, prob_floor) - ln_clamped(pi_b[a], prob_floor)) / alpha;
        let tm = ln_clamped(pi_ts_m[a], prob_floor);
        let tmain = ln_clamped(pi_ts_main[a], prob_floor);
        f += p * (info + (tm - tmain) / beta - tm);
    }
    f
}

/// Everything computed for one space at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct SpacePolicyReport {
    pub space: SpaceId,
    pub pi_ts: Vec<f64>,
    pub u_hat: Vec<f64>,
    pub pi_star: Vec<f64>,
    pub free_energy: f64,
}

/// Result of comparing both spaces at a state.
#[derive(Clone, Debug, PartialEq)]
pub struct SpaceSelection {
    pub chosen: SpaceId,
    pub main: SpacePolicyReport,
    pub agg: SpacePolicyReport,
}

impl SpaceSelection {
    pub fn report(&self, space: SpaceId) -> &SpacePolicyReport {
        match space {
            SpaceId::Main => &self.main,
            SpaceId::Agg => &self.agg,
        }
    }
}

/// Evaluates both spaces at `state` on the current learner snapshot and
/// returns the one with lower free energy (ties, within [`SPACE_TIE_EPS`],
/// go to the main space).
///
/// The behavioral policy of each space is epsilon-greedy over that space's
/// own Q-values at the given exploration rate. A space in which any action
/// has fewer than 2 samples gets a uniform Thompson policy.
pub fn select_space(
    state: GridPos,
    layout: &Layout,
    table: &QTable,
    agg_spec: AggregationSpec,
    epsilon: f64,
    params: &FeParams,
) -> SpaceSelection {
    let actions = layout.actions(state);

    let main_intervals: Vec<BeliefInterval> = actions
        .iter()
        .map(|&a| {
            let s = table.stats(state, a);
            match confidence_radius(s.n, s.s1, s.s2, s.t_samples, params.nu) {
                Ok(radius) => BeliefInterval {
                    center: s.q,
                    radius,
                    sufficient: true,
                },
                Err(_) => BeliefInterval::insufficient(),
            }
        })
        .collect();

    let nb = neighborhood(state, layout, agg_spec);
    let mut q_agg_values = Vec::with_capacity(actions.len());
    let agg_intervals: Vec<BeliefInterval> = actions
        .iter()
        .map(|&a| {
            // Unvisited aggregates keep the neutral initial value for the
            // behavioral policy; the interval is then marked insufficient.
            let center = q_agg(a, table, &nb).unwrap_or(0.0);
            q_agg_values.push(center);
            let pooled = pooled_stats(a, table, &nb);
            match confidence_radius(pooled.n, pooled.s1, pooled.s2, pooled.t_samples, params.nu) {
                Ok(radius) => BeliefInterval {
                    center,
                    radius,
                    sufficient: true,
                },
                Err(_) => BeliefInterval::insufficient(),
            }
        })
        .collect();

    let pi_ts_main = thompson_policy(&main_intervals);
    let pi_ts_agg = thompson_policy(&agg_intervals);

    let pi_b_main = epsilon_greedy(&table.q_values(state, actions), epsilon);
    let pi_b_agg = epsilon_greedy(&q_agg_values, epsilon);

    let evaluate = |space: SpaceId, pi_ts: &[f64], pi_b: &[f64]| -> SpacePolicyReport {
        let u_hat = shaped_utility(pi_ts, &pi_ts_main, params.beta, params.prob_floor);
        let (pi_star, _z) = optimal_policy(pi_b, &u_hat, params.alpha);
        let f = free_energy(
            &pi_star,
            pi_b,
            &pi_ts_main,
            pi_ts,
            params.alpha,
            params.beta,
            params.prob_floor,
        );
        SpacePolicyReport {
            space,
            pi_ts: pi_ts.to_vec(),
            u_hat,
            pi_star,
            free_energy: f,
        }
    };

    let main = evaluate(SpaceId::Main, &pi_ts_main, &pi_b_main);
    let agg = evaluate(SpaceId::Agg, &pi_ts_agg, &pi_b_agg);

    let chosen = if main.free_energy - agg.free_energy >= SPACE_TIE_EPS {
        SpaceId::Agg
    } else {
        SpaceId::Main
    };
    SpaceSelection { chosen, main, agg }
}
