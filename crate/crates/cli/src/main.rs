use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::info;

use sdslam_core::dataio::read_poses;
use sdslam_core::pipeline::{kitti_relative_errors, run_dataset, RunConfig};
use sdslam_core::synth::{Scenario, SynthWorld};

#[derive(Parser)]
#[command(name = "sdslam", version, about = "Semantic LiDAR odometry and mapping for dynamic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline on a KITTI-layout sequence.
    Run {
        /// Dataset root containing `sequences/<NN>/velodyne`.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        sequence: String,
        /// TOML file of dotted-key overrides.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        no_loop: bool,
        #[arg(long)]
        export_map: bool,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score an estimated trajectory against ground truth.
    Eval {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Write a synthetic labelled sequence as `<output>/sequences/00`.
    Synth {
        #[arg(long)]
        scenario: Scenario,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            dataset,
            sequence,
            config,
            output,
            no_loop,
            export_map,
            seed,
        } => {
            let mut cfg = match &config {
                Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
                None => RunConfig::default(),
            };
            cfg.dataset = Some(dataset);
            cfg.sequence = sequence;
            if no_loop {
                cfg.loop_closure = false;
            }
            if export_map {
                cfg.export_map = true;
            }
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let (result, outputs) = run_dataset(&cfg, &output)?;
            println!("trajectory {}", outputs.trajectory.display());
            println!("metrics {}", outputs.metrics.display());
            println!("diagnostics {}", outputs.diagnostics.display());
            if let Some(map) = &outputs.map {
                println!("map {}", map.display());
            }
            println!("loop_edges {} corrections {}", result.loop_edges, result.corrections);
            if let Some(e) = result.errors {
                println!("t_rel {:.4} % r_rel {:.4} deg/100m", e.t_rel, e.r_rel_per_100m());
            }
        }
        Command::Eval { est, gt } => {
            let est = read_poses(&est)?;
            let gt = read_poses(&gt)?;
            let e = kitti_relative_errors(&est, &gt)?;
            println!("t_rel {:.4} %", e.t_rel);
            println!("r_rel {:.6} deg/m ({:.4} deg/100m)", e.r_rel, e.r_rel_per_100m());
            println!("segments {}", e.segments);
        }
        Command::Synth { scenario, output, seed } => {
            let world = SynthWorld::generate(scenario, seed);
            info!("{scenario}: {} frames, dynamic share {:.2}", world.params.frames, world.dynamic_fraction());
            let dir = world.write_kitti(&output, "00")?;
            println!("{}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
