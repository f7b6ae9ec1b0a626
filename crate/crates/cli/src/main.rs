use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use hybrid_epi::calibration::{grid_search, read_metric_column, runs_to_threshold};
use hybrid_epi::scenario::{
    emit_outputs, run_batch, run_scenario, Mode, ScenarioConfig, ScenarioData,
};
use hybrid_epi::synth::{generate, SynthSpec};

#[derive(Parser)]
#[command(
    name = "hybrid-epi",
    version,
    about = "Hybrid agent-based / continuum epidemic simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Hybrid,
    FullAbm,
}

#[derive(Subcommand)]
enum Command {
    /// Run a batch of simulations and write the CSV outputs.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's mode.
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Grid search over the two-interval infection coefficient.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        /// TOML with `interval1`, `interval2`, `runs` and `parameter`.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Number of runs after which the cumulative mean of a metric settles.
    AnalyzeRuns {
        #[arg(long)]
        metrics: PathBuf,
        /// Relative change in percent.
        #[arg(long)]
        threshold: f64,
        #[arg(long, default_value = "mae")]
        column: String,
    },
    /// Generate a synthetic population, mesh and schedules.
    GenData {
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
}

#[derive(Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
enum GridParameter {
    Pde,
    Abm,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpec {
    interval1: Vec<f64>,
    interval2: Vec<f64>,
    runs: usize,
    parameter: GridParameter,
}

fn load(config: &Path) -> anyhow::Result<(ScenarioConfig, ScenarioData)> {
    let cfg = ScenarioConfig::load(config)?;
    let data = ScenarioData::load(&cfg).context("loading scenario data")?;
    Ok((cfg, data))
}

fn simulate(
    config: &Path,
    mode: Option<ModeArg>,
    runs: Option<usize>,
    seed: Option<u64>,
    out: &Path,
) -> anyhow::Result<()> {
    let mut cfg = ScenarioConfig::load(config)?;
    if let Some(m) = mode {
        cfg.mode = match m {
            ModeArg::Hybrid => Mode::Hybrid,
            ModeArg::FullAbm => Mode::FullAbm,
        };
    }
    let runs = runs.unwrap_or(cfg.runs);
    let seed = seed.unwrap_or(cfg.seed);
    let data = ScenarioData::load(&cfg).context("loading scenario data")?;
    log::info!("{} run(s) of {} days from seed {seed}", runs, cfg.n_days());
    let batch = run_batch(&cfg, &data, runs, seed)?;
    emit_outputs(&batch, out)?;
    for (k, r) in batch.runs.iter().enumerate() {
        match r.mae {
            Some(m) => println!(
                "run {k} seed {} duration {:.2}s mae {m:.4}",
                r.seed, r.duration_s
            ),
            None => println!("run {k} seed {} duration {:.2}s", r.seed, r.duration_s),
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn calibrate(config: &Path, grid: &Path, out: &Path) -> anyhow::Result<()> {
    let (cfg, data) = load(config)?;
    if data.target.is_none() {
        bail!("calibration needs paths.target in the config");
    }
    if cfg.interval_split.is_none() {
        bail!("calibration needs interval_split in the config");
    }
    let text =
        std::fs::read_to_string(grid).with_context(|| format!("reading {}", grid.display()))?;
    let g: GridSpec =
        toml::from_str(&text).with_context(|| format!("parsing {}", grid.display()))?;
    if g.runs == 0 {
        bail!("grid runs must be at least 1");
    }
    let seeds: Vec<u64> = (0..g.runs as u64)
        .map(|i| cfg.seed.wrapping_add(i))
        .collect();
    let result = grid_search(&g.interval1, &g.interval2, &seeds, |b1, b2, seed| {
        let mut c = cfg.clone();
        match g.parameter {
            GridParameter::Pde => c.beta.pde = vec![b1, b2],
            GridParameter::Abm => c.beta.abm = vec![b1, b2],
        }
        let r = run_scenario(&c, &data, seed)?;
        Ok(r.mae.expect("target present"))
    })?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join("calibration_grid.csv");
    std::fs::write(&path, result.to_csv())
        .with_context(|| format!("writing {}", path.display()))?;
    let (b1, b2) = result.best;
    println!("best beta = ({b1}, {b2})");
    println!("wrote {}", path.display());
    Ok(())
}

fn analyze(metrics: &Path, threshold: f64, column: &str) -> anyhow::Result<()> {
    let values = read_metric_column(metrics, column)?;
    let r = runs_to_threshold(&values, threshold)?;
    if r.converged {
        println!("{} runs", r.runs);
    } else {
        println!(
            "{} runs (not converged within {} runs)",
            r.runs,
            values.len()
        );
    }
    Ok(())
}

const SCENARIO_TEMPLATE: &str = r#"preset = "berlin-25pct"

[initial]
scaling = 1.0

[paths]
activity = "activity.csv"
occupancy = "occupancy.csv"
mesh = "inner"
"#;

fn gen_data(spec: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let spec = match spec {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            SynthSpec::from_toml(&text)?
        }
        None => SynthSpec::default(),
    };
    generate(&spec)?.write_to_dir(out)?;
    let cfg = out.join("scenario.toml");
    if !cfg.exists() {
        std::fs::write(&cfg, SCENARIO_TEMPLATE)
            .with_context(|| format!("writing {}", cfg.display()))?;
    }
    println!("wrote {} agents to {}", spec.n_agents, out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Simulate {
            config,
            mode,
            runs,
            seed,
            out,
        } => simulate(config, *mode, *runs, *seed, out),
        Command::Calibrate { config, grid, out } => calibrate(config, grid, out),
        Command::AnalyzeRuns {
            metrics,
            threshold,
            column,
        } => analyze(metrics, *threshold, column),
        Command::GenData { spec, out } => gen_data(spec.as_deref(), out),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
