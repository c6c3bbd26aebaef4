//! `ssp`: simulate single episodes, run Monte-Carlo sets, render plots.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ssp_core::harness::io::{
    write_belief, write_measurements, write_metrics, write_planner, write_raster, write_text, write_tl_field,
    write_trajectory,
};
use ssp_core::harness::plot::render_dir;
use ssp_core::harness::{run_montecarlo, Experiment, ExperimentConfig, Steering};
use ssp_core::sensing::SensorConfig;
use ssp_core::Result;

#[derive(Parser)]
#[command(
    name = "ssp",
    version,
    about = "Sound-speed field estimation with CTD and transmission-loss sensing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write its tables.
    Simulate {
        /// Experiment configuration (TOML). Defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        sensors: Option<SensorConfig>,
        #[arg(long)]
        steering: Option<Steering>,
        /// Master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Which run of the seeded set to simulate.
        #[arg(long, default_value_t = 0)]
        run_id: usize,
        #[arg(long)]
        steps: Option<usize>,
        /// Also write the final estimate's transmission-loss field.
        #[arg(long)]
        tl_dump: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a set of seeded episodes per configuration and aggregate them.
    Montecarlo {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        /// One or more, comma separated.
        #[arg(long, value_delimiter = ',')]
        sensors: Vec<SensorConfig>,
        /// One or more, comma separated.
        #[arg(long, value_delimiter = ',')]
        steering: Vec<Steering>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        /// Defaults to the configuration's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render SVG plots from the tables in a directory.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn apply(cfg: &mut ExperimentConfig, seed: Option<u64>, steps: Option<usize>, runs: Option<usize>) -> Result<()> {
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    if let Some(n) = steps {
        cfg.run.num_steps = n;
    }
    if let Some(n) = runs {
        cfg.run.num_runs = n;
    }
    cfg.validate()
}

#[allow(clippy::too_many_arguments)]
fn simulate(
    config: Option<&Path>,
    sensors: Option<SensorConfig>,
    steering: Option<Steering>,
    seed: Option<u64>,
    run_id: usize,
    steps: Option<usize>,
    tl_dump: bool,
    out: &Path,
) -> Result<()> {
    let mut cfg = load(config)?;
    apply(&mut cfg, seed, steps, None)?;
    let sensors = sensors.unwrap_or(cfg.run.sensors);
    let steering = steering.unwrap_or(cfg.run.steering);
    cfg.run.sensors = sensors;
    cfg.run.steering = steering;
    cfg.run.output = out.to_path_buf();
    let exp = Experiment::new(cfg)?;
    let rec = exp.run_episode(sensors, steering, run_id)?;

    std::fs::create_dir_all(out)?;
    write_text(&out.join("config.toml"), &exp.config.to_toml_string()?)?;
    write_metrics(&out.join("metrics.csv"), [&rec])?;
    write_trajectory(&out.join("trajectory.csv"), &rec)?;
    write_belief(&out.join("belief.csv"), &rec)?;
    write_measurements(&out.join("measurements.csv"), &rec)?;
    if steering == Steering::Planned {
        write_planner(&out.join("planner.csv"), &rec)?;
    }
    let truth = exp.field(rec.true_theta.clone())?;
    let estimate = exp.field(rec.final_belief.mean.clone())?;
    write_raster(&out.join("field_true.csv"), &exp.raster(&truth)?, "speed")?;
    write_raster(&out.join("field_est.csv"), &exp.raster(&estimate)?, "speed")?;
    if tl_dump {
        write_tl_field(&out.join("tl_field.csv"), &exp.propagation, &estimate, 200, 50)?;
    }
    let last = rec.last();
    println!(
        "{sensors}/{steering} run {run_id}: step {} rrmse {:.4} ssim {:.4} total_variance {:.4e}, {} flagged steps",
        last.step,
        last.rrmse,
        last.ssim,
        last.total_variance,
        rec.flagged_steps()
    );
    Ok(())
}

fn montecarlo(
    config: Option<&Path>,
    runs: Option<usize>,
    sensors: &[SensorConfig],
    steering: &[Steering],
    seed: Option<u64>,
    steps: Option<usize>,
    out: Option<&Path>,
) -> Result<()> {
    let mut cfg = load(config)?;
    apply(&mut cfg, seed, steps, runs)?;
    let sensors = if sensors.is_empty() {
        vec![cfg.run.sensors]
    } else {
        sensors.to_vec()
    };
    let steering = if steering.is_empty() {
        vec![cfg.run.steering]
    } else {
        steering.to_vec()
    };
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.run.output.clone());
    cfg.run.output = out.clone();
    let runs = cfg.run.num_runs;
    let exp = Experiment::new(cfg)?;
    std::fs::create_dir_all(&out)?;
    write_text(&out.join("config.toml"), &exp.config.to_toml_string()?)?;

    let single = sensors.len() * steering.len() == 1;
    let mut failed = 0;
    for s in &sensors {
        for st in &steering {
            let outcome = run_montecarlo(&exp, *s, *st, 0..runs);
            let dir = if single {
                out.clone()
            } else {
                out.join(format!("{s}_{st}"))
            };
            outcome.write(&dir)?;
            failed += outcome.failures.len();
            match outcome.summary.last() {
                Some(last) => println!(
                    "{s}/{st}: {} runs, {} failed; step {} mean rrmse {:.4} mean ssim {:.4}",
                    outcome.records.len(),
                    outcome.failures.len(),
                    last.step,
                    last.mean_rrmse,
                    last.mean_ssim
                ),
                None => println!("{s}/{st}: every run failed"),
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} runs failed and were excluded; see failures.csv");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate {
            config,
            sensors,
            steering,
            seed,
            run_id,
            steps,
            tl_dump,
            out,
        } => simulate(
            config.as_deref(),
            *sensors,
            *steering,
            *seed,
            *run_id,
            *steps,
            *tl_dump,
            out,
        ),
        Command::Montecarlo {
            config,
            runs,
            sensors,
            steering,
            seed,
            steps,
            out,
        } => montecarlo(
            config.as_deref(),
            *runs,
            sensors,
            steering,
            *seed,
            *steps,
            out.as_deref(),
        ),
        Command::Plot { input, out } => render_dir(input, out).map(|files| {
            for f in files {
                println!("{}", f.display());
            }
        }),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
