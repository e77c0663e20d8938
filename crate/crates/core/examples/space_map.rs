//! Prints which representation (main `M` vs aggregation `a`, `=` for exact
//! ties and `#` for walls) the agent would select at every cell as training
//! progresses, followed by the final model-change matrix. Handy for seeing
//! where space flips, and therefore model changes, accumulate.
//!
//! Usage: `cargo run -p subgoal-core --example space_map [layout] [seed]`

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use subgoal_core::experiment::{run_episode, RunConfig};
use subgoal_core::{select_space, Grid, GridPos, GridWorld, Layout, QTable, SpaceId};

fn main() {
    let name = std::env::args().nth(1).unwrap_or_else(|| "two_rooms".into());
    let seed: u64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let layout = Layout::load(&name).expect("layout");
    let cfg = RunConfig::new(&name);
    let mut env = GridWorld::new(&layout, cfg.p_fail);
    let mut table = QTable::for_layout(&layout);
    let mut mc = Grid::new(layout.height(), layout.width());
    let mut visits = Grid::new(layout.height(), layout.width());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for episode in 0..cfg.episodes {
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
        let e1 = episode + 1;
        if [1, 5, 10, 20, 30, 50].contains(&e1) || e1 == cfg.episodes {
            println!("== after episode {e1} (eps = {eps:.4}):");
            for r in 0..layout.height() {
                let mut line = String::new();
                for c in 0..layout.width() {
                    let p = GridPos::new(r, c);
                    if !layout.is_walkable(p) {
                        line.push('#');
                        continue;
                    }
                    let sel = select_space(p, &layout, &table, cfg.agg_spec(), eps, &cfg.fe);
                    let gap = sel.main.free_energy - sel.agg.free_energy;
                    line.push(match sel.chosen {
                        SpaceId::Main if gap.abs() < 1e-9 => '=',
                        SpaceId::Main => 'M',
                        SpaceId::Agg => 'a',
                    });
                }
                println!("  {line}");
            }
        }
    }

    println!("final model changes:");
    for r in 0..layout.height() {
        let line: Vec<String> = (0..layout.width())
            .map(|c| format!("{:4}", mc[GridPos::new(r, c)]))
            .collect();
        println!("  {}", line.join(""));
    }
}
