//! Experiment configuration, the episode loop, multi-seed orchestration, and
//! artifact emission.
//!
//! A run is a pure function of (config, seed): every seed gets its own
//! deterministic sub-generator, a fresh learner, and a fresh model-change
//! matrix. Artifacts (CSV matrices, PGM heatmaps, bottleneck JSON lists, a
//! summary JSON) are written with hand-rolled, byte-stable encoders so two
//! identical invocations produce identical files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::bottleneck::{detect, frequency_baseline, record_step, BottleneckMask};
use crate::env::{GridWorld, Layout};
use crate::free_energy::{select_space, FeParams, SpaceSelection};
use crate::grid::{Grid, GridPos};
use crate::learner::{epsilon_greedy, select_action, QTable, Schedules};
use crate::space::{AggregationSpec, Metric};
use crate::{Error, Result};

/// Full description of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Built-in layout name or path to a layout file.
    pub layout: String,
    /// Probability that an action fails and scatters to a random neighbor.
    #[serde(default = "defaults::p_fail")]
    pub p_fail: f64,
    #[serde(default = "defaults::episodes")]
    pub episodes: u32,
    /// Number of independent seeded runs.
    #[serde(default = "defaults::seeds")]
    pub seeds: u32,
    /// Seed `k` uses the RNG stream `base_seed + k`.
    #[serde(default)]
    pub base_seed: u64,
    /// Aggregation-space distance bound (strict).
    #[serde(default = "defaults::l")]
    pub l: f64,
    #[serde(default)]
    pub metric: Metric,
    #[serde(default = "defaults::out_dir")]
    pub out_dir: PathBuf,
    /// Append per-step space-selection records to `trace_seed<k>.csv`.
    #[serde(default)]
    pub trace: bool,
    /// Run detection every this many episodes (a final checkpoint is always
    /// added).
    #[serde(default = "defaults::detect_every")]
    pub detect_every: u32,
    #[serde(default)]
    pub fe: FeParams,
    #[serde(default)]
    pub schedules: Schedules,
}

mod defaults {
    use std::path::PathBuf;

    pub fn p_fail() -> f64 {
        0.33
    }
    pub fn episodes() -> u32 {
        50
    }
    pub fn seeds() -> u32 {
        10
    }
    pub fn l() -> f64 {
        2.0
    }
    pub fn out_dir() -> PathBuf {
        PathBuf::from("runs")
    }
    pub fn detect_every() -> u32 {
        10
    }
}

impl RunConfig {
    /// Defaults for a layout: p=0.33, 50 episodes, 10 seeds, Euclidean L=2,
    /// detection every 10 episodes.
    pub fn new(layout: &str) -> Self {
        Self {
            layout: layout.to_string(),
            p_fail: defaults::p_fail(),
            episodes: defaults::episodes(),
            seeds: defaults::seeds(),
            base_seed: 0,
            l: defaults::l(),
            metric: Metric::default(),
            out_dir: defaults::out_dir(),
            trace: false,
            detect_every: defaults::detect_every(),
            fe: FeParams::default(),
            schedules: Schedules::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn agg_spec(&self) -> AggregationSpec {
        AggregationSpec {
            metric: self.metric,
            max_distance: self.l,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.layout.is_empty() {
            return bad("layout must be set");
        }
        if !(0.0..=1.0).contains(&self.p_fail) {
            return bad("p_fail must be in [0, 1]");
        }
        if self.episodes == 0 || self.seeds == 0 || self.detect_every == 0 {
            return bad("episodes, seeds and detect_every must be at least 1");
        }
        if self.l <= 0.0 {
            return bad("l must be positive");
        }
        if self.fe.alpha <= 0.0 || self.fe.beta <= 1.0 {
            return bad("fe.alpha must be > 0 and fe.beta > 1");
        }
        if !(0.0 < self.fe.nu && self.fe.nu < 1.0) || self.fe.prob_floor <= 0.0 {
            return bad("fe.nu must be in (0, 1) and fe.prob_floor positive");
        }
        Ok(())
    }
}

/// Everything produced by one seeded run.
#[derive(Clone, Debug)]
pub struct SeedOutcome {
    pub returns: Vec<f64>,
    pub mc: Grid<u64>,
    pub visits: Grid<u64>,
    /// Detection results at each checkpoint episode (1-based), in order.
    pub checkpoints: Vec<(u32, BottleneckMask)>,
    /// Frequency-baseline detection on the final visit counts.
    pub baseline: BottleneckMask,
}

impl SeedOutcome {
    pub fn final_mask(&self) -> &BottleneckMask {
        &self.checkpoints.last().expect("at least one checkpoint").1
    }
}

/// JSON-serializable cross-seed summary (also the in-memory return of
/// [`run_experiment`]).
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub layout: String,
    pub height: usize,
    pub width: usize,
    pub p_fail: f64,
    pub episodes: u32,
    pub seeds: u32,
    pub checkpoint_episodes: Vec<u32>,
    /// Undiscounted episode returns, indexed `[seed][episode]`.
    pub returns: Vec<Vec<f64>>,
    /// Final model-change matrix of each seed, as rows of counts.
    pub model_changes: Vec<Vec<Vec<u64>>>,
    /// Detected cells as `[row, col]`, indexed `[seed][checkpoint][i]`.
    pub bottlenecks: Vec<Vec<Vec<[usize; 2]>>>,
    /// Frequency-baseline cells, indexed `[seed][i]`.
    pub baseline_bottlenecks: Vec<Vec<[usize; 2]>>,
    /// Fraction of seeds whose final mask contains each cell.
    pub detection_rate: Vec<Vec<f64>>,
}

impl RunSummary {
    pub fn final_cells(&self, seed: usize) -> &[[usize; 2]] {
        self.bottlenecks[seed].last().expect("checkpoint").as_slice()
    }

    /// Seeds whose detected set, at any checkpoint up to and including the
    /// last, contains a cell within Chebyshev distance `tol` of `target`.
    pub fn seeds_detecting(&self, target: GridPos, tol: usize) -> usize {
        self.bottlenecks
            .iter()
            .filter(|per_seed| {
                per_seed.iter().flatten().any(|&[r, c]| GridPos::new(r, c).chebyshev(target) <= tol)
            })
            .count()
    }
}

/// One episode of the full pipeline. Each environment step: act, observe,
/// pick the next action, apply the SARSA update, then evaluate both spaces
/// for the newly entered state on the post-update snapshot and count a model
/// change if the selection flipped relative to the previous state (whose
/// selection is cached, never recomputed). Returns the undiscounted episode
/// return.
#[allow(clippy::too_many_arguments)]
pub fn run_episode<R: Rng + ?Sized>(
    env: &mut GridWorld,
    table: &mut QTable,
    lambda: f64,
    epsilon: f64,
    gamma: f64,
    agg_spec: AggregationSpec,
    fe: &FeParams,
    mc: &mut Grid<u64>,
    visits: &mut Grid<u64>,
    rng: &mut R,
    mut on_step: impl FnMut(u32, GridPos, &SpaceSelection),
) -> Result<f64> {
    let layout = env.layout();
    let mut state = env.reset(rng);
    let mut action = {
        let actions = layout.actions(state);
        let pi = epsilon_greedy(&table.q_values(state, actions), epsilon);
        actions[select_action(&pi, rng)?]
    };
    let mut prev_space = select_space(state, layout, table, agg_spec, epsilon, fe).chosen;
    let mut episode_return = 0.0;

    loop {
        visits[state] += 1; // occupancy at decision time: one count per step
        let tr = env.step(action, rng)?;
        episode_return += tr.reward;

        let next_actions = layout.actions(tr.next_state);
        let next_action = {
            let pi = epsilon_greedy(&table.q_values(tr.next_state, next_actions), epsilon);
            next_actions[select_action(&pi, rng)?]
        };
        table.sarsa_update(state, action, tr.reward, tr.next_state, next_action, lambda, gamma);

        let selection = select_space(tr.next_state, layout, table, agg_spec, epsilon, fe);
        record_step(mc, prev_space, selection.chosen, tr.next_state);
        on_step(env.steps(), tr.next_state, &selection);

        prev_space = selection.chosen;
        state = tr.next_state;
        action = next_action;
        if tr.done {
            break;
        }
    }
    Ok(episode_return)
}

/// Episodes at which detection runs: every `detect_every`, plus the final
/// episode.
pub fn checkpoint_episodes(episodes: u32, detect_every: u32) -> Vec<u32> {
    let mut eps: Vec<u32> = (1..=episodes).filter(|e| e % detect_every == 0).collect();
    if eps.last() != Some(&episodes) {
        eps.push(episodes);
    }
    eps
}

/// Runs all episodes for one seed. When `trace` is given, one CSV line per
/// step (`episode,step,row,col,f_main,f_agg,space`) is appended to it.
pub fn run_seed(
    layout: &Layout,
    cfg: &RunConfig,
    seed_index: u32,
    mut trace: Option<&mut dyn Write>,
) -> Result<SeedOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.base_seed.wrapping_add(seed_index as u64));
    let mut env = GridWorld::new(layout, cfg.p_fail);
    let mut table = QTable::for_layout(layout);
    let mut mc: Grid<u64> = Grid::new(layout.height(), layout.width());
    let mut visits: Grid<u64> = Grid::new(layout.height(), layout.width());
    let checkpoints = checkpoint_episodes(cfg.episodes, cfg.detect_every);

    let mut returns = Vec::with_capacity(cfg.episodes as usize);
    let mut detections = Vec::with_capacity(checkpoints.len());
    if let Some(w) = trace.as_deref_mut() {
        writeln!(w, "episode,step,row,col,f_main,f_agg,space")?;
    }

    for episode in 0..cfg.episodes {
        let (lambda, epsilon) = cfg.schedules.at(episode);
        let mut trace_err: Option<std::io::Error> = None;
        let episode_return = run_episode(
            &mut env,
            &mut table,
            lambda,
            epsilon,
            cfg.schedules.gamma,
            cfg.agg_spec(),
            &cfg.fe,
            &mut mc,
            &mut visits,
            &mut rng,
            |step, state, sel| {
                if let Some(w) = trace.as_deref_mut() {
                    let line = writeln!(
                        w,
                        "{},{},{},{},{},{},{}",
                        episode + 1,
                        step,
                        state.row,
                        state.col,
                        sel.main.free_energy,
                        sel.agg.free_energy,
                        sel.chosen
                    );
                    if let Err(e) = line {
                        trace_err.get_or_insert(e);
                    }
                }
            },
        )?;
        if let Some(e) = trace_err {
            return Err(e.into());
        }
        returns.push(episode_return);
        if checkpoints.contains(&(episode + 1)) {
            detections.push((episode + 1, detect(&mc)));
        }
    }

    let baseline = frequency_baseline(&visits);
    Ok(SeedOutcome {
        returns,
        mc,
        visits,
        checkpoints: detections,
        baseline,
    })
}

/// Runs every seed, writes all artifacts under `cfg.out_dir`, and returns the
/// summary. Per-seed files: `mc_seed<k>.csv`, `mc_seed<k>.pgm`,
/// `visits_seed<k>.csv`, `bottlenecks_seed<k>_ep<e>.json`, and (with
/// `trace = true`) `trace_seed<k>.csv`; plus one `summary.json`.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let layout = Layout::load(&cfg.layout)?;
    fs::create_dir_all(&cfg.out_dir)?;

    let mut summary = RunSummary {
        layout: cfg.layout.clone(),
        height: layout.height(),
        width: layout.width(),
        p_fail: cfg.p_fail,
        episodes: cfg.episodes,
        seeds: cfg.seeds,
        checkpoint_episodes: checkpoint_episodes(cfg.episodes, cfg.detect_every),
        returns: Vec::new(),
        model_changes: Vec::new(),
        bottlenecks: Vec::new(),
        baseline_bottlenecks: Vec::new(),
        detection_rate: vec![vec![0.0; layout.width()]; layout.height()],
    };

    for seed in 0..cfg.seeds {
        let mut trace_file = if cfg.trace {
            let f = File::create(cfg.out_dir.join(format!("trace_seed{seed}.csv")))?;
            Some(BufWriter::new(f))
        } else {
            None
        };
        let outcome = run_seed(
            &layout,
            cfg,
            seed,
            trace_file.as_mut().map(|w| w as &mut dyn Write),
        )?;
        if let Some(mut w) = trace_file {
            w.flush()?;
        }

        write_grid_csv(&outcome.mc, &cfg.out_dir.join(format!("mc_seed{seed}.csv")))?;
        render_heatmap(&outcome.mc, &cfg.out_dir.join(format!("mc_seed{seed}.pgm")))?;
        write_grid_csv(&outcome.visits, &cfg.out_dir.join(format!("visits_seed{seed}.csv")))?;
        for (episode, mask) in &outcome.checkpoints {
            let cells = cells_json(mask);
            let path = cfg
                .out_dir
                .join(format!("bottlenecks_seed{seed}_ep{episode}.json"));
            fs::write(path, serde_json::to_string(&cells)? + "\n")?;
        }

        for &cell in &outcome.final_mask().cells {
            summary.detection_rate[cell.row][cell.col] += 1.0;
        }
        summary.returns.push(outcome.returns.clone());
        summary.model_changes.push(
            (0..outcome.mc.height())
                .map(|r| (0..outcome.mc.width()).map(|c| outcome.mc[GridPos::new(r, c)]).collect())
                .collect(),
        );
        summary
            .bottlenecks
            .push(outcome.checkpoints.iter().map(|(_, m)| cells_json(m)).collect());
        summary.baseline_bottlenecks.push(cells_json(&outcome.baseline));
    }

    for row in &mut summary.detection_rate {
        for v in row {
            *v /= cfg.seeds as f64;
        }
    }
    fs::write(
        cfg.out_dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    Ok(summary)
}

fn cells_json(mask: &BottleneckMask) -> Vec<[usize; 2]> {
    mask.cells.iter().map(|p| [p.row, p.col]).collect()
}

/// Writes a counter grid as plain CSV, one line per grid row.
pub fn write_grid_csv(grid: &Grid<u64>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for row in 0..grid.height() {
        let line: Vec<String> = (0..grid.width())
            .map(|col| grid[GridPos::new(row, col)].to_string())
            .collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a counter grid written by [`write_grid_csv`].
pub fn read_grid_csv(path: &Path) -> Result<Grid<u64>> {
    let malformed = |reason: String| Error::MalformedFile {
        path: path.to_path_buf(),
        reason,
    };
    let text = fs::read_to_string(path)?;
    let mut rows: Vec<Vec<u64>> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<u64>, _> =
            line.split(',').map(|f| f.trim().parse::<u64>()).collect();
        rows.push(row.map_err(|e| malformed(e.to_string()))?);
    }
    if rows.is_empty() {
        return Err(malformed("no rows".into()));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(malformed("ragged rows".into()));
    }
    Ok(Grid::from_vec(rows.len(), width, rows.concat()))
}

/// Binary 8-bit PGM bytes of a counter grid, linearly scaled so the maximum
/// value maps to 255 (an all-zero grid renders black).
pub fn pgm_bytes(grid: &Grid<u64>) -> Vec<u8> {
    let max = grid.cells().iter().copied().max().unwrap_or(0);
    let mut bytes = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    for row in 0..grid.height() {
        for col in 0..grid.width() {
            let v = grid[GridPos::new(row, col)];
            let pixel = if max == 0 {
                0
            } else {
                (v as f64 * 255.0 / max as f64).round() as u8
            };
            bytes.push(pixel);
        }
    }
    bytes
}

/// Writes [`pgm_bytes`] to a file.
pub fn render_heatmap(grid: &Grid<u64>, path: &Path) -> Result<()> {
    fs::write(path, pgm_bytes(grid))?;
    Ok(())
}
