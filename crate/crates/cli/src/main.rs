//! `subgoals`: run gridworld bottleneck-discovery experiments, re-run
//! detection on saved model-change matrices, and render matrices as PGM
//! heatmaps.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};
use subgoal_core::experiment::{read_grid_csv, render_heatmap, run_experiment, RunConfig};
use subgoal_core::{detect, GridPos};

#[derive(Parser)]
#[command(name = "subgoals", version, about = "Free-energy bottleneck discovery in gridworlds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a multi-seed experiment described by a TOML config file.
    Run {
        /// Path to the TOML config (see configs/ for examples).
        #[arg(long)]
        config: PathBuf,
        /// Override the number of seeds from the config.
        #[arg(long)]
        seeds: Option<u32>,
        /// Override the artifact output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write per-step space-selection traces (trace_seed<k>.csv).
        #[arg(long)]
        trace: bool,
    },
    /// Re-run bottleneck detection (Otsu + non-maximum suppression) on a
    /// saved model-change matrix and print the detected cells as JSON.
    Detect {
        /// Path to a model-change CSV written by `run`.
        #[arg(long)]
        mc: PathBuf,
        /// Also write the JSON list to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a saved counter matrix as an 8-bit grayscale PGM heatmap.
    Render {
        /// Path to a matrix CSV (model changes or visit counts).
        #[arg(long)]
        matrix: PathBuf,
        /// Output PGM path.
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Run {
            config,
            seeds,
            out,
            trace,
        } => {
            let mut cfg = RunConfig::from_path(&config)
                .with_context(|| format!("loading config {}", config.display()))?;
            if let Some(seeds) = seeds {
                cfg.seeds = seeds;
            }
            if let Some(out) = out {
                cfg.out_dir = out;
            }
            if trace {
                cfg.trace = true;
            }
            let summary = run_experiment(&cfg)?;
            println!(
                "{}: {} episodes x {} seeds at p_fail = {}",
                summary.layout, summary.episodes, summary.seeds, summary.p_fail
            );
            for (seed, per_checkpoint) in summary.bottlenecks.iter().enumerate() {
                let last = per_checkpoint.last().expect("at least one checkpoint");
                let cells: Vec<String> =
                    last.iter().map(|&[r, c]| format!("({r}, {c})")).collect();
                println!("seed {seed}: bottlenecks [{}]", cells.join(", "));
            }
            let mut rates: Vec<(GridPos, f64)> = Vec::new();
            for (r, row) in summary.detection_rate.iter().enumerate() {
                for (c, &rate) in row.iter().enumerate() {
                    if rate > 0.0 {
                        rates.push((GridPos::new(r, c), rate));
                    }
                }
            }
            rates.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            println!("detection rate by cell:");
            for (pos, rate) in rates.iter().take(10) {
                println!("  {pos}: {:.0}%", rate * 100.0);
            }
            println!("artifacts written to {}", cfg.out_dir.display());
        }
        Command::Detect { mc, out } => {
            let grid = read_grid_csv(&mc)?;
            let mask = detect(&grid);
            let cells: Vec<[usize; 2]> = mask.cells.iter().map(|p| [p.row, p.col]).collect();
            let json = serde_json::to_string(&cells)?;
            println!("{json}");
            if let Some(out) = out {
                std::fs::write(out, json + "\n")?;
            }
        }
        Command::Render { matrix, out } => {
            let grid = read_grid_csv(&matrix)?;
            render_heatmap(&grid, &out)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}
