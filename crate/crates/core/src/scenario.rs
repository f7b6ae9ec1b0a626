//! Scenario configuration, single runs in either mode, batches and the CSV
//! outputs.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use chrono::NaiveDate;
use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abm::plan::{read_events_csv, read_facilities_csv};
use crate::abm::{
    AbmEngine, AbmSettings, ActivitySchedule, BetaSchedule, DayType, HealthState, Population,
    RateSet, WeekPlans,
};
use crate::calibration::{mean_absolute_error, write_run_metrics, RunMetric, TargetSeries};
use crate::coupling::{
    ContinuumSettings, CouplingSettings, ExchangeRecord, HybridSim, OccupancySchedule,
};
use crate::error::{Error, Result};
use crate::geometry::{Point2, Rect};
use crate::landscape::{
    build_histogram, fill_unvisited, histogram_to_potential, initial_distribution_with_offset,
    GridSpec, Potential,
};
use crate::mesh::{parse_triangle_files, TriMesh};
use crate::pde::{
    assemble, DriftForm, FemOperators, PdeOptions, PdeSolver, ReactionScheme, N_COMPARTMENTS,
};
use crate::rng::{stream, Stream};

/// Calibrated constants of the Berlin/Brandenburg 25 % sample; explicit keys
/// in a config override them.
pub const BERLIN_25PCT: &str = r#"
mode = "hybrid"
start = "2020-03-02"
end = "2020-04-28"
school_closure = "2020-03-16"
interval_split = "2020-03-16"
dt = 0.020833333333333332
diffusion = 1e-6
population_label = "25%"
seed = 1
runs = 1

[rates]
sigma = 0.2857142857142857
gamma = 0.5
eta = 0.25
kappa = 1.0
eta_c = 0.047619047619047616
phi_i = 0.25
phi_sy = 0.125
phi_h = 0.07142857142857142
phi_hc = 0.14285714285714285

[beta]
abm = [6.8e-6]
pde = [450.0, 160.0]

[initial]
preset = "calibrated"
exposed = 10.0
infected = 5.0
symptomatic = 0.0
scaling = 20.0

[pde]
drift_form = "conservative"
reaction_scheme = "rk4"
upwind = true
init_offset_fraction = 1.0
landscape = "histogram"
cell_size = 500.0

[coupling]
outflow_enabled = true
remember_reentry_state = false
"#;

pub fn preset(name: &str) -> Option<&'static str> {
    match name {
        "berlin-25pct" => Some(BERLIN_25PCT),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    FullAbm,
    Hybrid,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full-abm" => Ok(Mode::FullAbm),
            "hybrid" => Ok(Mode::Hybrid),
            _ => Err(Error::Config(format!(
                "unknown mode '{s}' (expected hybrid or full-abm)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPreset {
    /// `exposed`, `infected`, `symptomatic` persons (times `scaling`) drawn
    /// uniformly among all agents.
    Calibrated,
    /// Everyone starting inside the continuum region is exposed.
    AllPdeExposed,
    /// Everyone starting outside the continuum region is exposed.
    AllAbmExposed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub preset: InitialPreset,
    pub exposed: f64,
    pub infected: f64,
    pub symptomatic: f64,
    pub scaling: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaConfig {
    /// One value (constant) or two (switching at `interval_split`).
    pub abm: Vec<f64>,
    pub pde: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LandscapeKind {
    /// Built from the hourly positions of the plans.
    Histogram,
    Flat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeConfig {
    pub drift_form: DriftForm,
    pub reaction_scheme: ReactionScheme,
    pub upwind: bool,
    pub init_offset_fraction: f64,
    pub landscape: LandscapeKind,
    /// Histogram cell size (m).
    pub cell_size: f64,
}

/// Input files; relative paths are resolved against the config file's
/// directory, then against `data_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data_dir: PathBuf,
    pub events_weekday: PathBuf,
    pub events_saturday: PathBuf,
    pub events_sunday: PathBuf,
    pub facilities: PathBuf,
    /// Optional; absent means no activity change.
    pub activity: Option<PathBuf>,
    pub target: Option<PathBuf>,
    /// Optional; computed from the plans when absent.
    pub occupancy: Option<PathBuf>,
    /// Triangle files without extension (`.node`, `.ele`, optional `.poly`).
    pub mesh: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data_dir: PathBuf::from("."),
            events_weekday: "events_weekday.csv".into(),
            events_saturday: "events_saturday.csv".into(),
            events_sunday: "events_sunday.csv".into(),
            facilities: "facilities.csv".into(),
            activity: None,
            target: None,
            occupancy: None,
            mesh: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: Mode,
    pub start: NaiveDate,
    /// Last simulated day (inclusive).
    pub end: NaiveDate,
    pub school_closure: Option<NaiveDate>,
    pub interval_split: Option<NaiveDate>,
    pub dt: f64,
    pub diffusion: f64,
    pub population_label: String,
    pub seed: u64,
    pub runs: usize,
    pub rates: RateSet,
    pub beta: BetaConfig,
    pub initial: InitialConfig,
    pub pde: PdeConfig,
    pub coupling: CouplingSettings,
    #[serde(default)]
    pub paths: PathsConfig,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl ScenarioConfig {
    /// Parses a config; a top-level `preset` key names a profile whose values
    /// fill every key the file leaves out.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut user: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("invalid TOML: {e}")))?;
        let mut table = match user.remove("preset") {
            Some(toml::Value::String(name)) => {
                let p = preset(&name)
                    .ok_or_else(|| Error::Config(format!("unknown preset '{name}'")))?;
                p.parse::<toml::Table>().expect("built-in preset parses")
            }
            Some(_) => return Err(Error::Config("preset must be a string".into())),
            None => toml::Table::new(),
        };
        merge(&mut table, user);
        let cfg: ScenarioConfig = table
            .try_into()
            .map_err(|e| Error::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn preset_config(name: &str) -> Result<Self> {
        ScenarioConfig::from_toml(&format!("preset = \"{name}\""))
    }

    /// Reads a config and resolves its paths relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = ScenarioConfig::from_toml(&text)
            .map_err(|e| e.context(format!("config {}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.data_dir = base.join(&cfg.paths.data_dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.start >= self.end {
            return Err(Error::Config(format!(
                "start {} must precede end {}",
                self.start, self.end
            )));
        }
        self.steps_per_day()?;
        if let Some(s) = self.interval_split {
            if s < self.start || s > self.end {
                return Err(Error::Config(format!(
                    "interval split {s} outside [{}, {}]",
                    self.start, self.end
                )));
            }
        }
        for (name, b) in [("abm", &self.beta.abm), ("pde", &self.beta.pde)] {
            if b.is_empty() || b.len() > 2 {
                return Err(Error::Config(format!(
                    "beta.{name} needs one or two values"
                )));
            }
            if b.len() == 2 && self.interval_split.is_none() {
                return Err(Error::Config(format!(
                    "beta.{name} has two values but no interval_split"
                )));
            }
            if b.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::Config(format!("beta.{name} must be non-negative")));
            }
        }
        self.rates.validate().map_err(Error::Config)?;
        if !(self.diffusion >= 0.0) {
            return Err(Error::Config("diffusion must be non-negative".into()));
        }
        if !(self.pde.cell_size > 0.0) || !(self.pde.init_offset_fraction > 0.0) {
            return Err(Error::Config(
                "pde.cell_size and pde.init_offset_fraction must be positive".into(),
            ));
        }
        let i = &self.initial;
        if [i.exposed, i.infected, i.symptomatic, i.scaling]
            .iter()
            .any(|v| !(*v >= 0.0))
        {
            return Err(Error::Config("initial counts must be non-negative".into()));
        }
        Ok(())
    }

    pub fn steps_per_day(&self) -> Result<u32> {
        let spd = (1.0 / self.dt).round();
        if !(self.dt > 0.0) || spd < 1.0 || (spd * self.dt - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "dt = {} does not divide a day evenly",
                self.dt
            )));
        }
        Ok(spd as u32)
    }

    pub fn n_days(&self) -> usize {
        (self.end - self.start).num_days() as usize + 1
    }

    fn schedule(&self, values: &[f64]) -> BetaSchedule {
        match (values, self.interval_split) {
            ([a, b], Some(split)) => BetaSchedule::two_intervals(self.start, *a, split, *b),
            _ => BetaSchedule::constant(values[0]),
        }
    }

    pub fn abm_beta(&self) -> BetaSchedule {
        self.schedule(&self.beta.abm)
    }

    pub fn pde_beta(&self) -> BetaSchedule {
        self.schedule(&self.beta.pde)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        self.paths.data_dir.join(p)
    }
}

/// Loaded inputs shared by all runs of a scenario.
#[derive(Clone)]
pub struct ScenarioData {
    pub population: Arc<Population>,
    pub activity: ActivitySchedule,
    pub target: Option<TargetSeries>,
    pub mesh: Option<Arc<TriMesh>>,
    pub occupancy: OccupancySchedule,
    pub potential: Option<Arc<Potential>>,
    pub operators: Option<Arc<FemOperators>>,
    pub init_dist: Option<Arc<Vec<f64>>>,
}

impl ScenarioData {
    pub fn load(cfg: &ScenarioConfig) -> Result<Self> {
        let p = &cfg.paths;
        let read_events = |f: &Path| {
            let path = cfg.resolve(f);
            read_events_csv(&path).map_err(|e| e.context(format!("events {}", path.display())))
        };
        let plans = WeekPlans::from_events(
            &read_events(&p.events_weekday)?,
            &read_events(&p.events_saturday)?,
            &read_events(&p.events_sunday)?,
        )?;
        let facilities = read_facilities_csv(&cfg.resolve(&p.facilities))?;
        let activity = match &p.activity {
            Some(a) => ActivitySchedule::read_csv(&cfg.resolve(a))?,
            None => ActivitySchedule::flat(cfg.start, cfg.end),
        };
        let target = p
            .target
            .as_ref()
            .map(|t| TargetSeries::read_csv(&cfg.resolve(t)))
            .transpose()?;
        let mesh = match &p.mesh {
            Some(m) => {
                let base = cfg.resolve(m);
                let read = |ext: &str| {
                    let path = base.with_extension(ext);
                    std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))
                };
                let poly = read("poly").ok();
                Some(parse_triangle_files(
                    &read("node")?,
                    &read("ele")?,
                    poly.as_deref(),
                )?)
            }
            None => None,
        };
        let occupancy = match &p.occupancy {
            Some(o) => Some(OccupancySchedule::read_csv(&cfg.resolve(o))?),
            None => None,
        };
        ScenarioData::build(cfg, plans, facilities, activity, target, mesh, occupancy)
    }

    /// Assembles the shared inputs from in-memory data.
    pub fn build(
        cfg: &ScenarioConfig,
        plans: WeekPlans,
        facilities: Vec<crate::abm::Facility>,
        activity: ActivitySchedule,
        target: Option<TargetSeries>,
        mesh: Option<TriMesh>,
        occupancy: Option<OccupancySchedule>,
    ) -> Result<Self> {
        if cfg.mode == Mode::Hybrid && mesh.is_none() {
            return Err(Error::Config("hybrid mode needs paths.mesh".into()));
        }
        let occupancy = match (&occupancy, &mesh) {
            (Some(o), _) => o.clone(),
            (None, Some(m)) => OccupancySchedule::from_plans(&plans, |p| m.contains(p)),
            (None, None) => OccupancySchedule::flat(0.0),
        };
        let (potential, operators, init_dist) = match &mesh {
            Some(m) if cfg.mode == Mode::Hybrid => {
                let potential = match cfg.pde.landscape {
                    LandscapeKind::Flat => Potential::flat(m, cfg.diffusion),
                    LandscapeKind::Histogram => {
                        let pts = plans
                            .days
                            .iter()
                            .flatten()
                            .flatten()
                            .map(|a| a.location)
                            .chain(m.nodes().iter().copied());
                        let bb = Rect::bounding(pts).expect("mesh has nodes");
                        let grid = GridSpec::covering(bb.min, bb.max, cfg.pde.cell_size)?;
                        let h = build_histogram(&plans, grid)?;
                        let v = fill_unvisited(&histogram_to_potential(&h, cfg.diffusion)?)?;
                        Potential::from_raster(v, m, cfg.diffusion)?
                    }
                };
                let ops = assemble(m, &potential.mesh_grad, cfg.diffusion)?;
                let init = initial_distribution_with_offset(
                    &potential.mesh_v,
                    m,
                    cfg.pde.init_offset_fraction,
                )?;
                (
                    Some(Arc::new(potential)),
                    Some(Arc::new(ops)),
                    Some(Arc::new(init)),
                )
            }
            _ => (None, None, None),
        };
        Ok(ScenarioData {
            population: Arc::new(Population::new(plans, facilities)?),
            activity,
            target,
            mesh: mesh.map(Arc::new),
            occupancy,
            potential,
            operators,
            init_dist,
        })
    }
}

/// Everything a single run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub seed: u64,
    pub dates: Vec<NaiveDate>,
    /// Symptomatic persons at the end of each day.
    pub symptomatic_total: Vec<f64>,
    pub symptomatic_abm: Vec<f64>,
    pub symptomatic_pde: Vec<f64>,
    /// Per day: compartment totals of the agent side and the continuum side.
    pub masses_abm: Vec<[f64; N_COMPARTMENTS]>,
    pub masses_pde: Vec<[f64; N_COMPARTMENTS]>,
    pub exchange: Vec<ExchangeRecord>,
    pub duration_s: f64,
    pub mae: Option<f64>,
}

fn initial_states(cfg: &ScenarioConfig, data: &ScenarioData, seed: u64) -> Vec<HealthState> {
    let pop = &data.population;
    let n = pop.n_agents();
    let mut states = vec![HealthState::S; n];
    let inside = |i: usize| {
        let p = pop
            .plans
            .position(DayType::of(cfg.start), i, 0.0)
            .unwrap_or_else(|| Point2::new(f64::NAN, f64::NAN));
        data.mesh.as_ref().is_some_and(|m| m.contains(p))
    };
    match cfg.initial.preset {
        InitialPreset::Calibrated => {
            let s = cfg.initial.scaling;
            let counts = [
                (HealthState::E, (cfg.initial.exposed * s).round() as usize),
                (HealthState::I, (cfg.initial.infected * s).round() as usize),
                (
                    HealthState::SY,
                    (cfg.initial.symptomatic * s).round() as usize,
                ),
            ];
            let total: usize = counts.iter().map(|c| c.1).sum::<usize>().min(n);
            let mut rng = stream(seed, Stream::Initial);
            let mut picked = sample(&mut rng, n, total).into_iter();
            for (h, c) in counts {
                for i in picked.by_ref().take(c) {
                    states[i] = h;
                }
            }
        }
        InitialPreset::AllPdeExposed => {
            for (i, s) in states.iter_mut().enumerate() {
                if inside(i) {
                    *s = HealthState::E;
                }
            }
        }
        InitialPreset::AllAbmExposed => {
            for (i, s) in states.iter_mut().enumerate() {
                if !inside(i) {
                    *s = HealthState::E;
                }
            }
        }
    }
    states
}

fn abm_settings(cfg: &ScenarioConfig, data: &ScenarioData) -> Result<AbmSettings> {
    Ok(AbmSettings {
        start_date: cfg.start,
        dt: 1.0 / cfg.steps_per_day()? as f64,
        school_closure: cfg.school_closure,
        beta: cfg.abm_beta(),
        rates: cfg.rates,
        activity: data.activity.clone(),
    })
}

/// Agent counts per compartment, split by whether the agent is inside the
/// continuum region.
fn agent_counts(
    engine: &AbmEngine,
    mesh: Option<&TriMesh>,
) -> ([f64; N_COMPARTMENTS], [f64; N_COMPARTMENTS]) {
    let mut out = [0.0; N_COMPARTMENTS];
    let mut inside = [0.0; N_COMPARTMENTS];
    for (i, a) in engine.agents().iter().enumerate() {
        if !engine.is_active(i) {
            continue;
        }
        if mesh.is_some_and(|m| m.contains(a.position)) {
            inside[a.health.index()] += 1.0;
        } else {
            out[a.health.index()] += 1.0;
        }
    }
    (out, inside)
}

/// Runs one scenario realization.
pub fn run_scenario(cfg: &ScenarioConfig, data: &ScenarioData, seed: u64) -> Result<RunOutput> {
    let clock = Instant::now();
    let spd = cfg.steps_per_day()? as usize;
    let n_days = cfg.n_days();
    let initial = initial_states(cfg, data, seed);
    let engine = AbmEngine::new(&data.population, abm_settings(cfg, data)?, seed, &initial)
        .map_err(|e| e.context("agent model"))?;
    let mut out = RunOutput {
        seed,
        dates: cfg.start.iter_days().take(n_days).collect(),
        symptomatic_total: Vec::with_capacity(n_days),
        symptomatic_abm: Vec::with_capacity(n_days),
        symptomatic_pde: Vec::with_capacity(n_days),
        masses_abm: Vec::with_capacity(n_days),
        masses_pde: Vec::with_capacity(n_days),
        exchange: Vec::new(),
        duration_s: 0.0,
        mae: None,
    };
    let sy = HealthState::SY.index();
    let mut record = |abm: [f64; N_COMPARTMENTS], pde: [f64; N_COMPARTMENTS]| {
        out.symptomatic_abm.push(abm[sy]);
        out.symptomatic_pde.push(pde[sy]);
        out.symptomatic_total.push(abm[sy] + pde[sy]);
        out.masses_abm.push(abm);
        out.masses_pde.push(pde);
    };
    match cfg.mode {
        Mode::FullAbm => {
            let mut engine = engine;
            let mesh = data.mesh.as_deref();
            for _ in 0..n_days {
                for _ in 0..spd {
                    engine.step().map_err(|e| e.context("agent model"))?;
                }
                let (abm, pde) = agent_counts(&engine, mesh);
                record(abm, pde);
            }
        }
        Mode::Hybrid => {
            let mesh = data.mesh.as_deref().expect("hybrid data has a mesh");
            let ops = data
                .operators
                .as_deref()
                .expect("hybrid data has operators")
                .clone();
            let options = PdeOptions {
                drift_form: cfg.pde.drift_form,
                reaction_scheme: cfg.pde.reaction_scheme,
                upwind: cfg.pde.upwind,
            };
            let solver = PdeSolver::new(ops, 1.0 / spd as f64, options)
                .map_err(|e| e.context("continuum model"))?;
            let settings = ContinuumSettings {
                start_date: cfg.start,
                beta: cfg.pde_beta(),
                rates: cfg.rates,
                activity: data.activity.clone(),
                coupling: cfg.coupling,
            };
            let init = data
                .init_dist
                .as_deref()
                .expect("hybrid data has an initial distribution");
            let mut sim = HybridSim::new(
                engine,
                mesh,
                solver,
                init,
                data.occupancy.clone(),
                settings,
                None,
                seed,
            )?;
            for _ in 0..n_days {
                for _ in 0..spd {
                    sim.step().map_err(|e| e.context("coupling"))?;
                }
                let (abm, _) = agent_counts(sim.abm(), None);
                record(abm, sim.pde_masses());
            }
            out.exchange = sim.exchange_log().to_vec();
        }
    }
    if let Some(t) = &data.target {
        let target = t.window(cfg.start, n_days)?;
        out.mae = Some(mean_absolute_error(&out.symptomatic_total, target)?);
    }
    out.duration_s = clock.elapsed().as_secs_f64();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    pub runs: Vec<RunOutput>,
    pub mean_total: Vec<f64>,
    pub std_total: Vec<f64>,
    pub mean_abm: Vec<f64>,
    pub std_abm: Vec<f64>,
    pub mean_pde: Vec<f64>,
    pub std_pde: Vec<f64>,
}

fn mean_std(series: &[&[f64]], n_days: usize) -> (Vec<f64>, Vec<f64>) {
    let n = series.len();
    let mut mean = vec![0.0; n_days];
    let mut std = vec![0.0; n_days];
    if n == 0 {
        return (mean, std);
    }
    for d in 0..n_days {
        let m = series.iter().map(|s| s[d]).sum::<f64>() / n as f64;
        mean[d] = m;
        if n > 1 {
            std[d] =
                (series.iter().map(|s| (s[d] - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        }
    }
    (mean, std)
}

/// `n_runs` runs with seeds `seed, seed+1, …`, executed in parallel;
/// results are in seed order.
pub fn run_batch(
    cfg: &ScenarioConfig,
    data: &ScenarioData,
    n_runs: usize,
    seed: u64,
) -> Result<BatchOutput> {
    let runs: Vec<RunOutput> = (0..n_runs as u64)
        .into_par_iter()
        .map(|i| run_scenario(cfg, data, seed.wrapping_add(i)))
        .collect::<Result<_>>()?;
    let n_days = cfg.n_days();
    let pick = |f: fn(&RunOutput) -> &[f64]| runs.iter().map(f).collect::<Vec<_>>();
    let (mean_total, std_total) = mean_std(&pick(|r| &r.symptomatic_total), n_days);
    let (mean_abm, std_abm) = mean_std(&pick(|r| &r.symptomatic_abm), n_days);
    let (mean_pde, std_pde) = mean_std(&pick(|r| &r.symptomatic_pde), n_days);
    Ok(BatchOutput {
        runs,
        mean_total,
        std_total,
        mean_abm,
        std_abm,
        mean_pde,
        std_pde,
    })
}

fn writer(dir: &Path, name: &str) -> Result<csv::Writer<std::io::BufWriter<std::fs::File>>> {
    let p = dir.join(name);
    let f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
    Ok(csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(std::io::BufWriter::new(f)))
}

fn finish(mut w: csv::Writer<std::io::BufWriter<std::fs::File>>, name: &str) -> Result<()> {
    w.flush().map_err(|e| Error::io(name, e))
}

fn exchange_header() -> Vec<String> {
    let mut h: Vec<String> = ["step", "time_days", "agents_absorbed", "persons_emitted"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(HealthState::ALL.iter().map(|s| format!("{}_out", s.name())));
    h.push("population_residual".into());
    h
}

fn write_exchange(dir: &Path, name: &str, log: &[ExchangeRecord]) -> Result<()> {
    let mut w = writer(dir, name)?;
    w.write_record(exchange_header())?;
    for r in log {
        let mut row = vec![
            r.step.to_string(),
            r.time_days.to_string(),
            r.agents_absorbed.to_string(),
            r.persons_emitted.to_string(),
        ];
        row.extend(r.emitted.iter().map(u64::to_string));
        row.push(r.population_residual.to_string());
        w.write_record(row)?;
    }
    finish(w, name)
}

/// Writes `symptomatic_daily.csv`, `symptomatic_mean.csv`,
/// `compartment_masses.csv`, `exchange_log.csv` (run 0) and
/// `exchange_log_run_<i>.csv`, `run_metrics.csv` and `run_durations.csv`.
/// Everything except the durations is a pure function of config and seeds.
pub fn emit_outputs(batch: &BatchOutput, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let mut w = writer(dir, "symptomatic_daily.csv")?;
    w.write_record(["run", "date", "total", "abm_region", "pde_region"])?;
    for (k, r) in batch.runs.iter().enumerate() {
        for d in 0..r.dates.len() {
            w.write_record([
                k.to_string(),
                r.dates[d].to_string(),
                r.symptomatic_total[d].to_string(),
                r.symptomatic_abm[d].to_string(),
                r.symptomatic_pde[d].to_string(),
            ])?;
        }
    }
    finish(w, "symptomatic_daily.csv")?;

    let mut w = writer(dir, "symptomatic_mean.csv")?;
    w.write_record([
        "date",
        "mean_total",
        "std_total",
        "mean_abm",
        "std_abm",
        "mean_pde",
        "std_pde",
    ])?;
    if let Some(first) = batch.runs.first() {
        for (d, date) in first.dates.iter().enumerate() {
            w.write_record([
                date.to_string(),
                batch.mean_total[d].to_string(),
                batch.std_total[d].to_string(),
                batch.mean_abm[d].to_string(),
                batch.std_abm[d].to_string(),
                batch.mean_pde[d].to_string(),
                batch.std_pde[d].to_string(),
            ])?;
        }
    }
    finish(w, "symptomatic_mean.csv")?;

    let mut w = writer(dir, "compartment_masses.csv")?;
    let mut header = vec!["run".to_string(), "date".into(), "region".into()];
    header.extend(HealthState::ALL.iter().map(|s| s.name().to_string()));
    w.write_record(&header)?;
    for (k, r) in batch.runs.iter().enumerate() {
        for d in 0..r.dates.len() {
            for (region, m) in [("abm", &r.masses_abm[d]), ("pde", &r.masses_pde[d])] {
                let mut row = vec![k.to_string(), r.dates[d].to_string(), region.to_string()];
                row.extend(m.iter().map(f64::to_string));
                w.write_record(row)?;
            }
        }
    }
    finish(w, "compartment_masses.csv")?;

    let empty = Vec::new();
    write_exchange(
        dir,
        "exchange_log.csv",
        batch.runs.first().map_or(&empty, |r| &r.exchange),
    )?;
    for (k, r) in batch.runs.iter().enumerate().skip(1) {
        write_exchange(dir, &format!("exchange_log_run_{k}.csv"), &r.exchange)?;
    }

    let metrics: Vec<RunMetric> = batch
        .runs
        .iter()
        .enumerate()
        .map(|(k, r)| RunMetric {
            run: k as u32,
            seed: r.seed,
            mae: r.mae.unwrap_or(f64::NAN),
        })
        .collect();
    let p = dir.join("run_metrics.csv");
    let f = std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?;
    write_run_metrics(&metrics, std::io::BufWriter::new(f))?;

    let mut w = writer(dir, "run_durations.csv")?;
    w.write_record(["run", "seed", "duration_s"])?;
    for (k, r) in batch.runs.iter().enumerate() {
        w.write_record([k.to_string(), r.seed.to_string(), r.duration_s.to_string()])?;
    }
    finish(w, "run_durations.csv")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_carries_calibrated_constants() {
        let c = ScenarioConfig::preset_config("berlin-25pct").unwrap();
        assert_eq!(c.steps_per_day().unwrap(), 48);
        assert_eq!(c.n_days(), 58);
        assert_eq!(c.diffusion, 1e-6);
        assert_eq!(c.initial.scaling, 20.0);
        assert_eq!(c.rates, RateSet::calibrated());
        assert_eq!(
            c.pde_beta()
                .value(NaiveDate::from_ymd_opt(2020, 3, 15).unwrap()),
            450.0
        );
        assert_eq!(
            c.pde_beta()
                .value(NaiveDate::from_ymd_opt(2020, 3, 16).unwrap()),
            160.0
        );
        assert_eq!(c.abm_beta().value(c.end), 6.8e-6);
    }

    #[test]
    fn overrides_and_errors() {
        let c = ScenarioConfig::from_toml(
            "preset = \"berlin-25pct\"\nmode = \"full-abm\"\n[beta]\npde = [1.0]\n",
        )
        .unwrap();
        assert_eq!(c.mode, Mode::FullAbm);
        assert_eq!(c.beta.pde, vec![1.0]);
        assert_eq!(c.beta.abm, vec![6.8e-6]);
        for bad in [
            "preset = \"nope\"",
            "preset = \"berlin-25pct\"\ndt = 0.3",
            "preset = \"berlin-25pct\"\nend = \"2020-03-01\"",
            "preset = \"berlin-25pct\"\ninterval_split = \"2021-01-01\"",
            "preset = \"berlin-25pct\"\n[beta]\nabm = [1.0, 2.0, 3.0]",
            "preset = \"berlin-25pct\"\nunknown_key = 1",
            "mode = \"hybrid\"",
        ] {
            assert!(ScenarioConfig::from_toml(bad).is_err(), "{bad}");
        }
        assert!("full-abm".parse::<Mode>().is_ok());
        assert!("both".parse::<Mode>().is_err());
    }

    #[test]
    fn std_of_single_run_is_zero() {
        let a = [1.0, 2.0, 3.0];
        let (m, s) = mean_std(&[&a], 3);
        assert_eq!(m, a.to_vec());
        assert_eq!(s, vec![0.0; 3]);
        let b = [3.0, 2.0, 1.0];
        let (m, s) = mean_std(&[&a, &b], 3);
        assert_eq!(m, vec![2.0; 3]);
        assert!((s[0] - 2f64.sqrt()).abs() < 1e-12);
    }
}
