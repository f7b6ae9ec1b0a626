//! Exchange of individuals between the agent model and the continuum model.
//!
//! Per step: the agent model advances, the PDE advances, agents ending the
//! step inside the mesh become density at their nearest node, and the
//! expected outflow of the continuum region is emitted as agents.

use std::path::Path;

use chrono::NaiveDate;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::abm::{
    plan_position, AbmEngine, ActivitySchedule, AgentMode, BetaSchedule, DayType, HealthState,
    RateSet, WeekPlans,
};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::mesh::TriMesh;
use crate::pde::{
    effective_beta, total_mass, CompartmentField, PdeSolver, PdeStepReport, N_COMPARTMENTS,
};
use crate::rng::{stream, Stream};

/// Density increment equivalent to one person at each node: `3 / fan area`.
pub fn epsilon_weights(mesh: &TriMesh) -> Vec<f64> {
    mesh.lumped_mass().iter().map(|m| 1.0 / m).collect()
}

/// Adds one person in state `state` at the node nearest to `position`.
/// Returns the node.
pub fn agent_to_density(
    field: &mut CompartmentField,
    mesh: &TriMesh,
    state: HealthState,
    position: Point2,
) -> Result<usize> {
    if !mesh.contains(position) {
        return Err(Error::Coupling(format!(
            "agent at ({}, {}) is outside the continuum domain",
            position.x, position.y
        )));
    }
    let node = mesh.nearest_node(position);
    let fan = mesh.fan_area(node)?;
    field.values[state.index()][node] += 3.0 / fan;
    Ok(node)
}

/// Expected number of persons inside the continuum region per hour of each
/// day type.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancySchedule {
    /// `hourly[day_type.index()][hour]`.
    pub hourly: [[f64; 24]; 3],
}

#[derive(Debug, Serialize, Deserialize)]
struct OccupancyRow {
    day_type: DayType,
    hour: u32,
    persons: f64,
}

impl OccupancySchedule {
    pub fn flat(value: f64) -> Self {
        OccupancySchedule {
            hourly: [[value; 24]; 3],
        }
    }

    /// Counts agents whose plan position at each full hour satisfies
    /// `inside`.
    pub fn from_plans(plans: &WeekPlans, inside: impl Fn(Point2) -> bool) -> Self {
        let mut hourly = [[0.0; 24]; 3];
        for dt in DayType::ALL {
            for (i, plan) in plans.day(dt).iter().enumerate() {
                for (h, slot) in hourly[dt.index()].iter_mut().enumerate() {
                    let t = h as f64 * 3600.0;
                    if let Some(p) = plan_position(plan, t).or_else(|| plans.position(dt, i, t)) {
                        if inside(p) {
                            *slot += 1.0;
                        }
                    }
                }
            }
        }
        OccupancySchedule { hourly }
    }

    /// Occupancy at `t` days after `start`, linear between full hours; hour
    /// 24 is hour 0 of the following day.
    pub fn at(&self, start: NaiveDate, t: f64) -> f64 {
        let day = t.floor();
        let hours = (t - day) * 24.0;
        let h0 = (hours.floor() as usize).min(23);
        let frac = hours - h0 as f64;
        let date = start + chrono::Days::new(day.max(0.0) as u64);
        let dt0 = DayType::of(date).index();
        let v0 = self.hourly[dt0][h0];
        let v1 = if h0 == 23 {
            self.hourly[DayType::of(date + chrono::Days::new(1)).index()][0]
        } else {
            self.hourly[dt0][h0 + 1]
        };
        v0 + (v1 - v0) * frac
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let mut s = OccupancySchedule::flat(0.0);
        for row in rdr.deserialize() {
            let r: OccupancyRow = row?;
            if r.hour > 23 {
                return Err(Error::Coupling(format!(
                    "occupancy hour {} out of range",
                    r.hour
                )));
            }
            s.hourly[r.day_type.index()][r.hour as usize] = r.persons;
        }
        Ok(s)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for dt in DayType::ALL {
            for h in 0..24 {
                wtr.serialize(OccupancyRow {
                    day_type: dt,
                    hour: h as u32,
                    persons: self.hourly[dt.index()][h],
                })?;
            }
        }
        wtr.flush().map_err(|e| Error::io("occupancy", e))?;
        Ok(())
    }
}

/// `max(0, occ(t) − occ(t + dt))`.
pub fn expected_outflow(schedule: &OccupancySchedule, start: NaiveDate, t: f64, dt: f64) -> f64 {
    (schedule.at(start, t) - schedule.at(start, t + dt)).max(0.0)
}

/// Removes `n_out` whole persons from the field: compartment `c` gives
/// `floor(n·mass_c/Σmass)`, the remainder comes from S, and each compartment
/// is scaled uniformly by `(mass_c − count_c)/mass_c`. If S lacks the mass
/// for the remainder, the deficit is taken from the compartments with the
/// most remaining mass. The request is capped by the available whole
/// persons. Returns the per-compartment counts.
pub fn density_to_agents(
    field: &mut CompartmentField,
    lumped: &[f64],
    n_out: u64,
) -> [u64; N_COMPARTMENTS] {
    let mut counts = [0u64; N_COMPARTMENTS];
    if n_out == 0 {
        return counts;
    }
    let mass = total_mass(field, lumped);
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return counts;
    }
    let avail: [u64; N_COMPARTMENTS] =
        std::array::from_fn(|c| (mass[c] + 1e-9).max(0.0).floor() as u64);
    let n = n_out.min(avail.iter().sum());
    if n < n_out {
        log::warn!("outflow of {n_out} capped to {n} by available continuum mass");
    }
    for c in 0..N_COMPARTMENTS {
        counts[c] = ((n as f64 * mass[c] / total).floor() as u64).min(avail[c]);
    }
    let assigned: u64 = counts.iter().sum();
    counts[0] += n - assigned;
    if counts[0] > avail[0] {
        let mut deficit = counts[0] - avail[0];
        counts[0] = avail[0];
        log::warn!(
            "susceptible mass short by {deficit} persons; taking them from other compartments"
        );
        while deficit > 0 {
            let c = (1..N_COMPARTMENTS)
                .max_by(|&a, &b| {
                    let ra = mass[a] - counts[a] as f64;
                    let rb = mass[b] - counts[b] as f64;
                    ra.total_cmp(&rb).then(b.cmp(&a))
                })
                .expect("compartments");
            if counts[c] >= avail[c] {
                break;
            }
            counts[c] += 1;
            deficit -= 1;
        }
    }
    for c in 0..N_COMPARTMENTS {
        if counts[c] > 0 {
            let f = ((mass[c] - counts[c] as f64) / mass[c]).max(0.0);
            for v in field.values[c].iter_mut() {
                *v *= f;
            }
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingSettings {
    /// Emit agents from the continuum region according to the occupancy
    /// schedule.
    pub outflow_enabled: bool,
    /// Prefer re-using plan ids whose last absorbed state matches the emitted
    /// compartment.
    pub remember_reentry_state: bool,
}

impl Default for CouplingSettings {
    fn default() -> Self {
        CouplingSettings {
            outflow_enabled: true,
            remember_reentry_state: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeRecord {
    pub step: u64,
    pub time_days: f64,
    pub agents_absorbed: u32,
    pub persons_emitted: u32,
    pub emitted: [u64; N_COMPARTMENTS],
    /// `|agents + Σ mass − N|` after the step.
    pub population_residual: f64,
    pub clipped_mass: f64,
}

/// Pool of deactivated plan ids with O(1) insertion and removal.
#[derive(Debug, Clone, Default)]
struct FreeIds {
    ids: Vec<u32>,
    pos: Vec<u32>,
}

impl FreeIds {
    const NONE: u32 = u32::MAX;

    fn new(n: usize) -> Self {
        FreeIds {
            ids: Vec::new(),
            pos: vec![Self::NONE; n],
        }
    }

    fn insert(&mut self, id: u32) {
        self.pos[id as usize] = self.ids.len() as u32;
        self.ids.push(id);
    }

    fn remove(&mut self, id: u32) {
        let p = self.pos[id as usize] as usize;
        self.ids.swap_remove(p);
        if let Some(&moved) = self.ids.get(p) {
            self.pos[moved as usize] = p as u32;
        }
        self.pos[id as usize] = Self::NONE;
    }

    fn len(&self) -> usize {
        self.ids.len()
    }
}

/// Parameters of the continuum side of a hybrid run.
#[derive(Debug, Clone)]
pub struct ContinuumSettings {
    pub start_date: NaiveDate,
    pub beta: BetaSchedule,
    pub rates: RateSet,
    pub activity: ActivitySchedule,
    pub coupling: CouplingSettings,
}

pub struct HybridSim<'a> {
    abm: AbmEngine<'a>,
    mesh: &'a TriMesh,
    solver: PdeSolver,
    field: CompartmentField,
    lumped: Vec<f64>,
    occupancy: OccupancySchedule,
    settings: ContinuumSettings,
    free: FreeIds,
    remembered: Vec<Option<HealthState>>,
    carry: f64,
    rng: ChaCha8Rng,
    population: f64,
    log: Vec<ExchangeRecord>,
    /// Whether each facility location lies inside the mesh.
    facility_inside: Vec<bool>,
}

impl<'a> HybridSim<'a> {
    /// Wraps an agent engine at time 0: agents starting inside the mesh are
    /// moved into the continuum model, distributed by `init_dist` (unit
    /// integral). `pde_totals` overrides the resulting compartment totals.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mut abm: AbmEngine<'a>,
        mesh: &'a TriMesh,
        solver: PdeSolver,
        init_dist: &[f64],
        occupancy: OccupancySchedule,
        settings: ContinuumSettings,
        pde_totals: Option<[f64; N_COMPARTMENTS]>,
        seed: u64,
    ) -> Result<Self> {
        let n = abm.agents().len();
        let mut free = FreeIds::new(n);
        let mut totals = [0.0; N_COMPARTMENTS];
        let mut remembered = vec![None; n];
        for i in 0..n {
            if abm.is_active(i) && mesh.contains(abm.agents()[i].position) {
                let h = abm.deactivate(i)?;
                totals[h.index()] += 1.0;
                free.insert(i as u32);
                if settings.coupling.remember_reentry_state {
                    remembered[i] = Some(h);
                }
            }
        }
        abm.drain_moved();
        let totals = pde_totals.unwrap_or(totals);
        let field = crate::pde::initialize(mesh, init_dist, totals)?;
        let lumped = mesh.lumped_mass();
        let population = abm.n_active() as f64 + total_mass(&field, &lumped).iter().sum::<f64>();
        let facility_inside = abm
            .population()
            .facilities
            .iter()
            .map(|f| mesh.contains(f.location))
            .collect();
        Ok(HybridSim {
            abm,
            mesh,
            solver,
            field,
            lumped,
            occupancy,
            settings,
            free,
            remembered,
            carry: 0.0,
            rng: stream(seed, Stream::Coupling),
            population,
            log: Vec::new(),
            facility_inside,
        })
    }

    pub fn abm(&self) -> &AbmEngine<'a> {
        &self.abm
    }

    pub fn field(&self) -> &CompartmentField {
        &self.field
    }

    pub fn exchange_log(&self) -> &[ExchangeRecord] {
        &self.log
    }

    /// Total population `N` fixed at construction.
    pub fn population(&self) -> f64 {
        self.population
    }

    pub fn pde_masses(&self) -> [f64; N_COMPARTMENTS] {
        total_mass(&self.field, &self.lumped)
    }

    pub fn n_free(&self) -> usize {
        self.free.len()
    }

    fn date_at(&self, t: f64) -> NaiveDate {
        self.settings.start_date + chrono::Days::new(t.floor().max(0.0) as u64)
    }

    fn eligible(&self, id: u32) -> bool {
        !self.mesh.contains(self.abm.plan_position(id as usize))
    }

    /// Picks a free id, preferring ids whose plan is currently outside the
    /// mesh (and, if enabled, whose remembered state matches `state`).
    fn pick_free_id(&mut self, state: HealthState) -> u32 {
        let remember = self.settings.coupling.remember_reentry_state;
        let n = self.free.len();
        let matches = |s: &Self, id: u32| {
            s.eligible(id) && (!remember || s.remembered[id as usize] == Some(state))
        };
        for _ in 0..64 {
            let id = self.free.ids[self.rng.random_range(0..n)];
            if matches(self, id) {
                return id;
            }
        }
        let pools: [Vec<u32>; 2] = [
            self.free
                .ids
                .iter()
                .copied()
                .filter(|&id| matches(self, id))
                .collect(),
            if remember {
                self.free
                    .ids
                    .iter()
                    .copied()
                    .filter(|&id| self.eligible(id))
                    .collect()
            } else {
                Vec::new()
            },
        ];
        for pool in pools {
            if !pool.is_empty() {
                return pool[self.rng.random_range(0..pool.len())];
            }
        }
        self.free.ids[self.rng.random_range(0..n)]
    }

    pub fn step(&mut self) -> Result<ExchangeRecord> {
        let t0 = self.abm.time();
        let dt = self.abm.dt();
        let step = self.abm.step_index();
        self.abm.step()?;

        let date = self.date_at(t0);
        let pct = if self.settings.activity.days.is_empty() {
            0.0
        } else {
            self.settings.activity.out_of_home(date)?
        };
        let beta = effective_beta(pct, self.settings.beta.value(date));
        let report: PdeStepReport =
            self.solver
                .step(&mut self.field, beta, &self.settings.rates)?;

        let mut absorbed = 0u32;
        let bbox = self.mesh.bbox();
        // Agents that did not move stayed outside since the previous scan.
        for i in self.abm.drain_moved() {
            let i = i as usize;
            let a = &self.abm.agents()[i];
            let p = a.position;
            let inside = match a.mode {
                AgentMode::InPdeDomain => continue,
                AgentMode::InFacility { facility, location }
                    if location == self.abm.population().facilities[facility as usize].location =>
                {
                    self.facility_inside[facility as usize]
                }
                _ => bbox.contains(p) && self.mesh.contains(p),
            };
            if inside {
                let h = self.abm.deactivate(i)?;
                agent_to_density(&mut self.field, self.mesh, h, p)?;
                self.free.insert(i as u32);
                if self.settings.coupling.remember_reentry_state {
                    self.remembered[i] = Some(h);
                }
                absorbed += 1;
            }
        }

        let mut emitted = [0u64; N_COMPARTMENTS];
        if self.settings.coupling.outflow_enabled {
            self.carry += expected_outflow(&self.occupancy, self.settings.start_date, t0, dt);
            let want = self.carry.floor();
            self.carry -= want;
            let n = (want as u64).min(self.free.len() as u64);
            if n < want as u64 {
                log::warn!("step {step}: outflow of {want} capped to {n} by free agent ids");
            }
            emitted = density_to_agents(&mut self.field, &self.lumped, n);
            for h in HealthState::ALL {
                for _ in 0..emitted[h.index()] {
                    let id = self.pick_free_id(h);
                    self.free.remove(id);
                    self.abm.activate(id as usize, h)?;
                }
            }
        }

        let mass: f64 = total_mass(&self.field, &self.lumped).iter().sum();
        let residual = (self.abm.n_active() as f64 + mass - self.population).abs();
        let rec = ExchangeRecord {
            step,
            time_days: self.abm.time(),
            agents_absorbed: absorbed,
            persons_emitted: emitted.iter().sum::<u64>() as u32,
            emitted,
            population_residual: residual,
            clipped_mass: report.clipped_mass,
        };
        self.log.push(rec.clone());
        Ok(rec)
    }
}
