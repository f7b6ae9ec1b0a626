//! Facility-based agent model advanced in fixed steps.
//!
//! Each day the representative plan of the day type is thinned (school
//! closures, activity reductions) and flattened into a time-sorted event
//! queue. Every facility keeps a cumulative hazard clock `Φ_f(t)`, the hazard
//! a susceptible would have accumulated had it been present since the start.
//! A susceptible records `Φ_f` on entry and is infected on exit with
//! probability `1 − exp(−(Φ_f(exit) − Φ_f(entry)))`, which is exactly the
//! per-step re-evaluated co-presence hazard summed over the stay.

use std::collections::HashMap;

use chrono::NaiveDate;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::health::{step_health, BetaSchedule, HealthState, RateSet};
use super::ops::{estimate_room_sizes, Agent, AgentMode};
use super::plan::{
    Activity, ActivitySchedule, Category, DayType, Facility, WeekPlans, SECONDS_PER_DAY,
};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::rng::{stream, Stream};

/// Plans and facilities with dense facility indices: inside a population,
/// `Activity::facility_id` is an index into `facilities`.
#[derive(Debug, Clone)]
pub struct Population {
    pub plans: WeekPlans,
    pub facilities: Vec<Facility>,
}

impl Population {
    /// Remaps plan facility ids to indices, adds facilities referenced only by
    /// events, and estimates room sizes from the three day types.
    pub fn new(mut plans: WeekPlans, facilities: Vec<Facility>) -> Result<Self> {
        let mut facilities = facilities;
        let mut index: HashMap<u32, u32> = HashMap::new();
        for (i, f) in facilities.iter().enumerate() {
            if index.insert(f.id, i as u32).is_some() {
                return Err(Error::Abm(format!("duplicate facility id {}", f.id)));
            }
        }
        for day in plans.days.iter_mut() {
            for plan in day.iter_mut() {
                for a in plan.iter_mut() {
                    let idx = *index.entry(a.facility_id).or_insert_with(|| {
                        facilities.push(Facility {
                            id: a.facility_id,
                            category: a.category,
                            location: a.location,
                            room_size: 1.0,
                        });
                        (facilities.len() - 1) as u32
                    });
                    a.facility_id = idx;
                }
            }
        }
        for f in facilities.iter_mut() {
            f.room_size = 1.0;
        }
        for dt in DayType::ALL {
            for (f, size) in estimate_room_sizes(&plans.events(dt))? {
                let r = &mut facilities[f as usize].room_size;
                *r = r.max(size as f64);
            }
        }
        for (i, _) in plans.agent_ids.iter().enumerate() {
            if DayType::ALL.iter().all(|&d| plans.day(d)[i].is_empty()) {
                return Err(Error::Abm(format!(
                    "agent {} has no activities",
                    plans.agent_ids[i]
                )));
            }
        }
        Ok(Population { plans, facilities })
    }

    pub fn n_agents(&self) -> usize {
        self.plans.n_agents()
    }
}

#[derive(Debug, Clone)]
pub struct AbmSettings {
    pub start_date: NaiveDate,
    /// Step length in days; `1/dt` must be an integer.
    pub dt: f64,
    pub school_closure: Option<NaiveDate>,
    pub beta: BetaSchedule,
    pub rates: RateSet,
    pub activity: ActivitySchedule,
}

impl AbmSettings {
    pub fn steps_per_day(&self) -> Result<u32> {
        let spd = (1.0 / self.dt).round();
        if !(self.dt > 0.0) || (spd * self.dt - 1.0).abs() > 1e-9 || spd < 1.0 {
            return Err(Error::Config(format!(
                "time step {} does not divide a day evenly",
                self.dt
            )));
        }
        Ok(spd as u32)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct FacilityClock {
    n_infectious: u32,
    phi: f64,
    last: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepReport {
    pub infections: u32,
    pub transitions: u32,
}

pub struct AbmEngine<'p> {
    pop: &'p Population,
    settings: AbmSettings,
    steps_per_day: u32,
    step: u64,
    day: i64,
    beta: f64,
    agents: Vec<Agent>,
    active: Vec<bool>,
    n_active: usize,
    /// Active agent indices (order changes on deactivation) and each agent's
    /// slot in it.
    active_list: Vec<u32>,
    slot: Vec<u32>,
    clocks: Vec<FacilityClock>,
    today: Vec<Vec<Activity>>,
    /// `(time, agent, event index)`; event `2k` starts activity `k`, `2k+1`
    /// ends it.
    queue: Vec<(f64, u32, u32)>,
    qpos: usize,
    /// Per day type, all unthinned plan events as `(seconds, agent, event
    /// index)` in queue order.
    base_order: [Vec<(f64, u32, u32)>; 3],
    /// Per day type, index of each agent's first activity in a flat list.
    base_offsets: [Vec<usize>; 3],
    remap: Vec<u32>,
    /// Agents whose position or mode changed since the last `drain_moved`.
    moved: Vec<u32>,
    moved_flag: Vec<bool>,
    rng_activity: ChaCha8Rng,
    rng_infection: ChaCha8Rng,
    rng_health: ChaCha8Rng,
}

impl<'p> AbmEngine<'p> {
    pub fn new(
        pop: &'p Population,
        settings: AbmSettings,
        seed: u64,
        initial: &[HealthState],
    ) -> Result<Self> {
        let n = pop.n_agents();
        if initial.len() != n {
            return Err(Error::Abm(format!(
                "{} initial states for {n} agents",
                initial.len()
            )));
        }
        settings.rates.validate().map_err(Error::Abm)?;
        settings
            .beta
            .validate(settings.start_date)
            .map_err(Error::Abm)?;
        let steps_per_day = settings.steps_per_day()?;
        let agents = (0..n)
            .map(|i| {
                let p = pop
                    .plans
                    .position(DayType::of(settings.start_date), i, 0.0)
                    .unwrap_or_default();
                Agent {
                    id: pop.plans.agent_ids[i],
                    health: initial[i],
                    position: p,
                    mode: AgentMode::Commuting {
                        from: p,
                        to: p,
                        depart: 0.0,
                        arrival: 0.0,
                    },
                    state_entry_time: 0.0,
                    hazard_mark: 0.0,
                }
            })
            .collect();
        let beta = settings.beta.value(settings.start_date);
        let mut base_order: [Vec<(f64, u32, u32)>; 3] = Default::default();
        let mut base_offsets: [Vec<usize>; 3] = Default::default();
        for dt in DayType::ALL {
            let (order, offsets) = (&mut base_order[dt.index()], &mut base_offsets[dt.index()]);
            let mut off = 0;
            for (i, plan) in pop.plans.day(dt).iter().enumerate() {
                offsets.push(off);
                off += plan.len();
                for (k, a) in plan.iter().enumerate() {
                    order.push((a.start_s, i as u32, 2 * k as u32));
                    order.push((a.end_s, i as u32, 2 * k as u32 + 1));
                }
            }
            offsets.push(off);
            order.sort_unstable_by(|a, b| {
                a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
            });
        }
        let mut engine = AbmEngine {
            pop,
            settings,
            steps_per_day,
            step: 0,
            day: -1,
            beta,
            agents,
            active: vec![true; n],
            n_active: n,
            active_list: (0..n as u32).collect(),
            slot: (0..n as u32).collect(),
            clocks: vec![FacilityClock::default(); pop.facilities.len()],
            today: Vec::new(),
            queue: Vec::new(),
            qpos: 0,
            base_order,
            base_offsets,
            remap: Vec::new(),
            moved: Vec::new(),
            moved_flag: vec![false; n],
            rng_activity: stream(seed, Stream::Activity),
            rng_infection: stream(seed, Stream::Infection),
            rng_health: stream(seed, Stream::Health),
        };
        engine.start_day(0)?;
        for i in 0..n {
            let mode = engine.plan_mode(i, 0.0);
            engine.agents[i].mode = mode;
            engine.agents[i].position = mode.position_at(0.0, engine.agents[i].position)?;
        }
        Ok(engine)
    }

    pub fn dt(&self) -> f64 {
        self.settings.dt
    }

    pub fn steps_per_day(&self) -> u32 {
        self.steps_per_day
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    /// Current time in days since the start.
    pub fn time(&self) -> f64 {
        self.step as f64 / self.steps_per_day as f64
    }

    pub fn date(&self) -> NaiveDate {
        self.settings.start_date + chrono::Days::new(self.day.max(0) as u64)
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.active[i]
    }

    pub fn n_active(&self) -> usize {
        self.n_active
    }

    pub fn population(&self) -> &Population {
        self.pop
    }

    pub fn current_beta(&self) -> f64 {
        self.beta
    }

    /// Health-state counts over active agents.
    pub fn counts(&self) -> [u64; 8] {
        let mut c = [0u64; 8];
        for (a, &act) in self.agents.iter().zip(&self.active) {
            if act {
                c[a.health.index()] += 1;
            }
        }
        c
    }

    fn start_day(&mut self, day: i64) -> Result<()> {
        let t = day as f64;
        let date = self.settings.start_date + chrono::Days::new(day as u64);
        let beta = self.settings.beta.value(date);
        if beta != self.beta {
            let n = self.clocks.len();
            for f in 0..n {
                self.flush(f, t);
            }
            self.beta = beta;
        }
        let pct = if self.settings.activity.days.is_empty() {
            0.0
        } else {
            self.settings.activity.out_of_home(date)?
        };
        let closed = self.settings.school_closure.is_some_and(|c| date >= c);
        let p = (-pct / 100.0).min(1.0);
        let dt = DayType::of(date);
        let base = self.pop.plans.day(dt);
        let offsets = &self.base_offsets[dt.index()];
        self.today.resize_with(base.len(), Vec::new);
        self.remap.clear();
        self.remap.resize(offsets[base.len()], u32::MAX);
        // Same draws as closing schools and then thinning each plan.
        for (i, plan) in base.iter().enumerate() {
            let today = &mut self.today[i];
            today.clear();
            for (k, a) in plan.iter().enumerate() {
                if closed && a.category == Category::School {
                    continue;
                }
                if a.category == Category::Home
                    || !(pct < 0.0)
                    || self.rng_activity.random::<f64>() >= p
                {
                    self.remap[offsets[i] + k] = today.len() as u32;
                    today.push(*a);
                }
            }
        }
        self.queue.clear();
        self.qpos = 0;
        for &(s, i, e) in &self.base_order[dt.index()] {
            let k = self.remap[offsets[i as usize] + (e / 2) as usize];
            if k != u32::MAX {
                self.queue.push((t + s / SECONDS_PER_DAY, i, 2 * k + e % 2));
            }
        }
        // Already ordered up to rounding of the day offset; a stable merge sort
        // is close to linear on such input.
        self.queue
            .sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        self.day = day;
        Ok(())
    }

    fn flush(&mut self, f: usize, t: f64) {
        let room = self.pop.facilities[f].room_size;
        let c = &mut self.clocks[f];
        if c.n_infectious > 0 && t > c.last {
            c.phi += self.beta * c.n_infectious as f64 / room * (t - c.last);
        }
        c.last = c.last.max(t);
    }

    fn enter(&mut self, i: usize, f: usize, t: f64) {
        self.flush(f, t);
        let h = self.agents[i].health;
        if h == HealthState::S {
            self.agents[i].hazard_mark = self.clocks[f].phi;
        } else if h.is_infectious() {
            self.clocks[f].n_infectious += 1;
        }
    }

    /// Returns true when a susceptible got infected on leaving.
    fn leave(&mut self, i: usize, f: usize, t: f64) -> bool {
        self.flush(f, t);
        let h = self.agents[i].health;
        if h == HealthState::S {
            let hazard = self.clocks[f].phi - self.agents[i].hazard_mark;
            if hazard > 0.0 {
                let u: f64 = self.rng_infection.random();
                if u < -(-hazard).exp_m1() {
                    self.agents[i].health = HealthState::E;
                    self.agents[i].state_entry_time = t;
                    return true;
                }
            }
        } else if h.is_infectious() {
            self.clocks[f].n_infectious -= 1;
        }
        false
    }

    fn is_processed(&self, ev: (f64, u32, u32)) -> bool {
        match self.queue.get(self.qpos) {
            None => true,
            Some(next) => {
                ev.0.total_cmp(&next.0)
                    .then(ev.1.cmp(&next.1))
                    .then(ev.2.cmp(&next.2))
                    .is_lt()
            }
        }
    }

    /// Where agent `i`'s effective plan puts it at `t`, given the events
    /// processed so far.
    fn plan_mode(&self, i: usize, t: f64) -> AgentMode {
        let day0 = self.day as f64;
        let plan = &self.today[i];
        let mut last_end: Option<usize> = None;
        for (k, a) in plan.iter().enumerate() {
            let start = (day0 + a.start_s / SECONDS_PER_DAY, i as u32, 2 * k as u32);
            let end = (day0 + a.end_s / SECONDS_PER_DAY, i as u32, 2 * k as u32 + 1);
            if !self.is_processed(start) {
                break;
            }
            if !self.is_processed(end) {
                return AgentMode::InFacility {
                    facility: a.facility_id,
                    location: a.location,
                };
            }
            last_end = Some(k);
        }
        match last_end {
            Some(k) => {
                let a = plan[k];
                let depart = day0 + a.end_s / SECONDS_PER_DAY;
                match plan.get(k + 1) {
                    Some(next) => AgentMode::Commuting {
                        from: a.location,
                        to: next.location,
                        depart,
                        arrival: day0 + next.start_s / SECONDS_PER_DAY,
                    },
                    None => AgentMode::Commuting {
                        from: a.location,
                        to: a.location,
                        depart,
                        arrival: depart,
                    },
                }
            }
            None => {
                let p = plan.first().map_or(self.agents[i].position, |a| a.location);
                AgentMode::Commuting {
                    from: p,
                    to: p,
                    depart: t,
                    arrival: t,
                }
            }
        }
    }

    /// Position agent `i` would have at the current time if it were active.
    pub fn plan_position(&self, i: usize) -> Point2 {
        let t = self.time();
        let mode = self.plan_mode(i, t);
        mode.position_at(t, self.agents[i].position)
            .unwrap_or(self.agents[i].position)
    }

    fn mark_moved(&mut self, i: usize) {
        if !self.moved_flag[i] {
            self.moved_flag[i] = true;
            self.moved.push(i as u32);
        }
    }

    /// Agents whose position or mode changed (or that were activated) since
    /// the previous call, in ascending order.
    pub fn drain_moved(&mut self) -> Vec<u32> {
        let mut out = std::mem::take(&mut self.moved);
        for &i in &out {
            self.moved_flag[i as usize] = false;
        }
        out.sort_unstable();
        out
    }

    fn process_event(&mut self, t: f64, i: usize, idx: u32) -> bool {
        if !self.active[i] {
            return false;
        }
        self.mark_moved(i);
        let k = (idx / 2) as usize;
        let a = self.today[i][k];
        let f = a.facility_id as usize;
        if idx.is_multiple_of(2) {
            if let AgentMode::InFacility { facility, .. } = self.agents[i].mode {
                self.leave(i, facility as usize, t);
            }
            self.agents[i].mode = AgentMode::InFacility {
                facility: a.facility_id,
                location: a.location,
            };
            self.agents[i].position = a.location;
            self.enter(i, f, t);
            false
        } else {
            let infected = match self.agents[i].mode {
                AgentMode::InFacility { facility, .. } if facility as usize == f => {
                    self.leave(i, f, t)
                }
                _ => false,
            };
            let day0 = self.day as f64;
            self.agents[i].mode = match self.today[i].get(k + 1) {
                Some(next) => AgentMode::Commuting {
                    from: a.location,
                    to: next.location,
                    depart: t,
                    arrival: (day0 + next.start_s / SECONDS_PER_DAY).max(t),
                },
                None => AgentMode::Commuting {
                    from: a.location,
                    to: a.location,
                    depart: t,
                    arrival: t,
                },
            };
            infected
        }
    }

    /// Advances one step: processes the window's events, then applies
    /// rate-driven health transitions and updates positions at the step end.
    pub fn step(&mut self) -> Result<StepReport> {
        let spd = self.steps_per_day as u64;
        let day = (self.step / spd) as i64;
        if day > self.day {
            self.start_day(day)?;
        }
        let last_of_day = (self.step + 1).is_multiple_of(spd);
        let t_end = (self.step + 1) as f64 / spd as f64;
        let mut report = StepReport::default();
        while let Some(&(t, i, idx)) = self.queue.get(self.qpos) {
            if !(t < t_end || last_of_day) {
                break;
            }
            self.qpos += 1;
            if self.process_event(t, i as usize, idx) {
                report.infections += 1;
            }
        }

        let rates = self.settings.rates;
        let dt = self.settings.dt;
        for idx in 0..self.active_list.len() {
            let i = self.active_list[idx] as usize;
            let from = self.agents[i].health;
            if matches!(from, HealthState::S | HealthState::R) {
                continue;
            }
            if let Some(to) = step_health(from, &rates, dt, &mut self.rng_health) {
                if let AgentMode::InFacility { facility, .. } = self.agents[i].mode {
                    let f = facility as usize;
                    if from.is_infectious() != to.is_infectious() {
                        self.flush(f, t_end);
                        let c = &mut self.clocks[f];
                        if to.is_infectious() {
                            c.n_infectious += 1;
                        } else {
                            c.n_infectious -= 1;
                        }
                    }
                }
                self.agents[i].health = to;
                self.agents[i].state_entry_time = t_end;
                report.transitions += 1;
            }
        }

        self.step += 1;
        for idx in 0..self.active_list.len() {
            let i = self.active_list[idx] as usize;
            let a = &mut self.agents[i];
            let p = a.mode.position_at(t_end, a.position)?;
            if p != a.position {
                a.position = p;
                self.mark_moved(i);
            }
        }
        Ok(report)
    }

    /// Removes agent `i` from the agent model at the current time, resolving
    /// any pending facility exposure first. Returns its health state.
    pub fn deactivate(&mut self, i: usize) -> Result<HealthState> {
        if !self.active[i] {
            return Err(Error::Abm(format!("agent {i} is already inactive")));
        }
        let t = self.time();
        if let AgentMode::InFacility { facility, .. } = self.agents[i].mode {
            self.leave(i, facility as usize, t);
        }
        self.agents[i].mode = AgentMode::InPdeDomain;
        self.active[i] = false;
        self.n_active -= 1;
        let k = self.slot[i] as usize;
        self.active_list.swap_remove(k);
        if let Some(&j) = self.active_list.get(k) {
            self.slot[j as usize] = k as u32;
        }
        self.slot[i] = u32::MAX;
        Ok(self.agents[i].health)
    }

    /// Re-activates agent `i` with the given health state at the position its
    /// plan implies for the current time.
    pub fn activate(&mut self, i: usize, health: HealthState) -> Result<()> {
        if self.active[i] {
            return Err(Error::Abm(format!("agent {i} is already active")));
        }
        let t = self.time();
        let mode = self.plan_mode(i, t);
        let a = &mut self.agents[i];
        a.health = health;
        a.state_entry_time = t;
        a.mode = mode;
        a.position = mode.position_at(t, a.position)?;
        self.active[i] = true;
        self.n_active += 1;
        self.slot[i] = self.active_list.len() as u32;
        self.active_list.push(i as u32);
        self.mark_moved(i);
        if let AgentMode::InFacility { facility, .. } = mode {
            self.enter(i, facility as usize, t);
        }
        Ok(())
    }

    /// Current hazard clock of facility `f` (for diagnostics and tests).
    pub fn facility_hazard(&self, f: usize) -> f64 {
        self.clocks[f].phi
    }

    pub fn facility_infectious(&self, f: usize) -> u32 {
        self.clocks[f].n_infectious
    }
}
