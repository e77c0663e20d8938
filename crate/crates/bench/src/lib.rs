//! Shared fixtures for the pipeline benchmarks.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use subgoal_core::experiment::{run_episode, RunConfig};
use subgoal_core::{Grid, GridWorld, Layout, QTable};

/// Runs a few warm-up episodes so benchmarks see a realistically populated
/// Q-table and model-change matrix.
pub fn warmed_state(layout_name: &str, episodes: u32) -> (Layout, QTable, Grid<u64>) {
    let layout = Layout::load(layout_name).expect("built-in layout");
    let cfg = RunConfig::new(layout_name);
    let mut env = GridWorld::new(&layout, cfg.p_fail);
    let mut table = QTable::for_layout(&layout);
    let mut mc = Grid::new(layout.height(), layout.width());
    let mut visits = Grid::new(layout.height(), layout.width());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for episode in 0..episodes {
        let (lambda, eps) = cfg.schedules.at(episode);
        run_episode(
            &mut env,
            &mut table,
            lambda,
            eps,
            cfg.schedules.gamma,
            cfg.agg_spec(),
            &cfg.fe,
            &mut mc,
            &mut visits,
            &mut rng,
            |_, _, _| {},
        )
        .expect("episode");
    }
    (layout, table, mc)
}
