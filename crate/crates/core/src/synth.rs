//! Synthetic populations in the formats the agent model reads: facilities,
//! weekday/Saturday/Sunday plans, the expected occupancy of an inner region
//! and an activity-change template.

use std::path::Path;

use chrono::NaiveDate;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::abm::plan::{write_events_csv, write_facilities_csv};
use crate::abm::{
    Activity, ActivitySchedule, Category, DayType, EventKind, Facility, MobilityEvent,
    SECONDS_PER_DAY,
};
use crate::coupling::OccupancySchedule;
use crate::error::{Error, Result};
use crate::geometry::{Point2, Rect};
use crate::mesh::TriMesh;
use crate::rng::{stream, Stream};

/// Facilities of each out-of-home category per region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FacilityCounts {
    pub work: usize,
    pub school: usize,
    pub leisure: usize,
    pub shopping: usize,
}

impl Default for FacilityCounts {
    fn default() -> Self {
        FacilityCounts {
            work: 20,
            school: 4,
            leisure: 10,
            shopping: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_agents: usize,
    /// Whole study area.
    pub outer: Rect,
    /// Region standing in for the continuum domain; inside `outer`.
    pub inner: Rect,
    /// Share of agents whose home lies in the inner region.
    pub inner_resident_fraction: f64,
    /// Share of agents whose work or school lies in the other region than
    /// their home.
    pub commuting_fraction: f64,
    /// Share of agents attending school rather than work.
    pub school_fraction: f64,
    /// Share of agents with a weekday work or school activity at all.
    pub employed_fraction: f64,
    pub weekday_leisure_prob: f64,
    pub saturday_shopping_prob: f64,
    pub weekend_leisure_prob: f64,
    pub max_household: usize,
    pub facilities_per_region: FacilityCounts,
    /// Uniform jitter (minutes) applied to activity times.
    pub jitter_minutes: f64,
    /// Cells of the inner-region mesh along x and y; the default gives 500 m
    /// cells, the landscape raster resolution.
    pub mesh_cells: (usize, usize),
    pub schedule_start: NaiveDate,
    pub schedule_days: usize,
    /// First day of the activity drop in the template.
    pub drop_date: NaiveDate,
    /// Final out-of-home drop (percent, positive) reached after
    /// `drop_ramp_days`.
    pub drop_pct: f64,
    pub drop_ramp_days: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 1,
            n_agents: 1000,
            outer: Rect::new(0.0, 0.0, 10_000.0, 10_000.0),
            inner: Rect::new(3000.0, 3000.0, 7000.0, 7000.0),
            inner_resident_fraction: 0.5,
            commuting_fraction: 0.2,
            school_fraction: 0.2,
            employed_fraction: 0.8,
            weekday_leisure_prob: 0.3,
            saturday_shopping_prob: 0.6,
            weekend_leisure_prob: 0.4,
            max_household: 4,
            facilities_per_region: FacilityCounts::default(),
            jitter_minutes: 30.0,
            mesh_cells: (8, 8),
            schedule_start: NaiveDate::from_ymd_opt(2020, 3, 2).expect("valid date"),
            schedule_days: 58,
            drop_date: NaiveDate::from_ymd_opt(2020, 3, 16).expect("valid date"),
            drop_pct: 30.0,
            drop_ramp_days: 7,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let frac = [
            ("inner_resident_fraction", self.inner_resident_fraction),
            ("commuting_fraction", self.commuting_fraction),
            ("school_fraction", self.school_fraction),
            ("employed_fraction", self.employed_fraction),
            ("weekday_leisure_prob", self.weekday_leisure_prob),
            ("saturday_shopping_prob", self.saturday_shopping_prob),
            ("weekend_leisure_prob", self.weekend_leisure_prob),
        ];
        for (name, v) in frac {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Synth(format!("{name} = {v} is not in [0, 1]")));
            }
        }
        if self.n_agents == 0 {
            return Err(Error::Synth("n_agents must be at least 1".into()));
        }
        if self.max_household == 0 {
            return Err(Error::Synth("max_household must be at least 1".into()));
        }
        let (o, i) = (self.outer, self.inner);
        if !(o.width() > 0.0 && o.height() > 0.0 && i.width() > 0.0 && i.height() > 0.0) {
            return Err(Error::Synth("regions must have positive extent".into()));
        }
        if !(o.contains(i.min) && o.contains(i.max)) || (i.min == o.min && i.max == o.max) {
            return Err(Error::Synth(
                "inner region must lie strictly inside the outer region".into(),
            ));
        }
        if self.mesh_cells.0 == 0 || self.mesh_cells.1 == 0 {
            return Err(Error::Synth("mesh needs at least one cell per axis".into()));
        }
        if !(self.jitter_minutes >= 0.0 && self.jitter_minutes <= 60.0) {
            return Err(Error::Synth("jitter_minutes must be within [0, 60]".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: SynthSpec =
            toml::from_str(text).map_err(|e| Error::Synth(format!("invalid spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    /// Events of the weekday, Saturday and Sunday plans.
    pub events: [Vec<MobilityEvent>; 3],
    pub facilities: Vec<Facility>,
    pub occupancy: OccupancySchedule,
    pub activity: ActivitySchedule,
    pub mesh: TriMesh,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Region {
    Inner,
    Outer,
}

impl Region {
    fn other(self) -> Region {
        match self {
            Region::Inner => Region::Outer,
            Region::Outer => Region::Inner,
        }
    }
}

struct Builder<'a> {
    spec: &'a SynthSpec,
    rng: ChaCha8Rng,
    facilities: Vec<Facility>,
    by_region: [[Vec<u32>; 4]; 2],
}

const OUT_CATEGORIES: [Category; 4] = [
    Category::Work,
    Category::School,
    Category::Leisure,
    Category::Shopping,
];

impl Builder<'_> {
    fn point_in(&mut self, region: Region) -> Point2 {
        let (o, i) = (self.spec.outer, self.spec.inner);
        match region {
            Region::Inner => Point2::new(
                self.rng.random_range(i.min.x..i.max.x),
                self.rng.random_range(i.min.y..i.max.y),
            ),
            Region::Outer => loop {
                let p = Point2::new(
                    self.rng.random_range(o.min.x..o.max.x),
                    self.rng.random_range(o.min.y..o.max.y),
                );
                if !i.contains(p) {
                    break p;
                }
            },
        }
    }

    fn add_facility(&mut self, category: Category, location: Point2) -> u32 {
        let id = self.facilities.len() as u32;
        self.facilities.push(Facility {
            id,
            category,
            location,
            room_size: 1.0,
        });
        id
    }

    fn region_index(r: Region) -> usize {
        match r {
            Region::Inner => 0,
            Region::Outer => 1,
        }
    }

    fn pick(&mut self, region: Region, cat_idx: usize) -> Option<u32> {
        self.by_region[Self::region_index(region)][cat_idx]
            .choose(&mut self.rng)
            .copied()
    }

    fn jitter(&mut self) -> f64 {
        let j = self.spec.jitter_minutes * 60.0;
        if j > 0.0 {
            self.rng.random_range(-j..=j)
        } else {
            0.0
        }
    }

    fn activity(&self, facility: u32, start_s: f64, end_s: f64) -> Activity {
        let f = &self.facilities[facility as usize];
        Activity {
            facility_id: f.id,
            category: f.category,
            location: f.location,
            start_s: start_s.round(),
            end_s: end_s.round(),
        }
    }

    /// Home, then the given outings (facility, nominal start hour, nominal
    /// duration hours) separated by travel, then home until midnight.
    fn day_plan(&mut self, home: u32, outings: &[(u32, f64, f64)]) -> Vec<Activity> {
        let mut plan = Vec::new();
        let mut t = 0.0;
        for &(fac, hour, dur) in outings {
            let leave = (hour * 3600.0 + self.jitter() - 1800.0).max(t + 600.0);
            plan.push(self.activity(home, t, leave));
            let travel = self.rng.random_range(900.0..2700.0);
            let start = leave + travel;
            let end = (start + dur * 3600.0 + self.jitter().abs()).min(SECONDS_PER_DAY - 7200.0);
            if end <= start + 600.0 {
                break;
            }
            plan.push(self.activity(fac, start, end));
            t = end + self.rng.random_range(900.0..2700.0);
        }
        plan.push(self.activity(home, t.min(SECONDS_PER_DAY - 60.0), SECONDS_PER_DAY));
        plan
    }
}

/// Generates a population from `spec`; the output depends only on the spec.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut b = Builder {
        spec,
        rng: stream(spec.seed, Stream::Initial),
        facilities: Vec::new(),
        by_region: Default::default(),
    };
    let counts = spec.facilities_per_region;
    for region in [Region::Inner, Region::Outer] {
        for (k, (cat, n)) in OUT_CATEGORIES
            .iter()
            .zip([counts.work, counts.school, counts.leisure, counts.shopping])
            .enumerate()
        {
            for _ in 0..n {
                let p = b.point_in(region);
                let id = b.add_facility(*cat, p);
                b.by_region[Builder::region_index(region)][k].push(id);
            }
        }
    }

    let mut events: [Vec<MobilityEvent>; 3] = Default::default();
    let mut agent = 0u32;
    while (agent as usize) < spec.n_agents {
        let region = if b.rng.random::<f64>() < spec.inner_resident_fraction {
            Region::Inner
        } else {
            Region::Outer
        };
        let home_loc = b.point_in(region);
        let home = b.add_facility(Category::Home, home_loc);
        let size = b
            .rng
            .random_range(1..=spec.max_household)
            .min(spec.n_agents - agent as usize);
        for _ in 0..size {
            let employed = b.rng.random::<f64>() < spec.employed_fraction;
            let school = b.rng.random::<f64>() < spec.school_fraction;
            let commute = b.rng.random::<f64>() < spec.commuting_fraction;
            let main_region = if commute { region.other() } else { region };
            let main = if employed {
                b.pick(main_region, usize::from(school))
            } else {
                None
            };
            let leisure = b.pick(region, 2);
            let shop = b.pick(region, 3);

            let mut weekday = Vec::new();
            if let Some(m) = main {
                let (start, dur) = if school { (8.0, 5.5) } else { (8.5, 8.0) };
                weekday.push((m, start, dur));
            }
            if let Some(l) = leisure.filter(|_| b.rng.random::<f64>() < spec.weekday_leisure_prob) {
                weekday.push((l, 18.5, 1.5));
            }
            let mut saturday = Vec::new();
            if let Some(s) = shop.filter(|_| b.rng.random::<f64>() < spec.saturday_shopping_prob) {
                saturday.push((s, 10.5, 1.5));
            }
            if let Some(l) = leisure.filter(|_| b.rng.random::<f64>() < spec.weekend_leisure_prob) {
                saturday.push((l, 15.0, 2.0));
            }
            let mut sunday = Vec::new();
            if let Some(l) = leisure.filter(|_| b.rng.random::<f64>() < spec.weekend_leisure_prob) {
                sunday.push((l, 14.0, 2.5));
            }
            for (d, outings) in [weekday, saturday, sunday].iter().enumerate() {
                let plan = b.day_plan(home, outings);
                for a in plan {
                    events[d].extend(a.events(agent));
                }
            }
            agent += 1;
        }
    }

    let facilities = b.facilities;
    let plans = crate::abm::WeekPlans::from_events(&events[0], &events[1], &events[2])?;
    let inner = spec.inner;
    let occupancy = OccupancySchedule::from_plans(&plans, |p| inner.contains(p));
    let activity = activity_template(spec);
    let mesh = TriMesh::rectangle(spec.inner, spec.mesh_cells.0, spec.mesh_cells.1)?;
    Ok(SynthData {
        events,
        facilities,
        occupancy,
        activity,
        mesh,
    })
}

/// Out-of-home change 0 before the drop date, then a linear ramp to
/// `−drop_pct`; at-home change mirrors half of it.
pub fn activity_template(spec: &SynthSpec) -> ActivitySchedule {
    let mut days = std::collections::BTreeMap::new();
    for date in spec.schedule_start.iter_days().take(spec.schedule_days) {
        let since = (date - spec.drop_date).num_days();
        let out = if since < 0 {
            0.0
        } else {
            let ramp = spec.drop_ramp_days.max(1) as f64;
            -spec.drop_pct * ((since as f64 + 1.0) / ramp).min(1.0)
        };
        days.insert(date, (0.0 - out / 2.0, out));
    }
    ActivitySchedule { days }
}

pub const EVENT_FILES: [&str; 3] = [
    "events_weekday.csv",
    "events_saturday.csv",
    "events_sunday.csv",
];

impl SynthData {
    /// Writes `events_{weekday,saturday,sunday}.csv`, `facilities.csv`,
    /// `occupancy.csv`, `activity.csv` and `inner.{node,ele,poly}`.
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let create = |name: &str| {
            let p = dir.join(name);
            std::fs::File::create(&p)
                .map(std::io::BufWriter::new)
                .map_err(|e| Error::io(&p, e))
        };
        for (d, name) in EVENT_FILES.iter().enumerate() {
            write_events_csv(create(name)?, &self.events[d])?;
        }
        write_facilities_csv(create("facilities.csv")?, &self.facilities)?;
        self.occupancy.write_csv(create("occupancy.csv")?)?;
        self.activity.write_csv(create("activity.csv")?)?;
        for (name, text) in [
            ("inner.node", self.mesh.to_node_text()),
            ("inner.ele", self.mesh.to_ele_text()),
            ("inner.poly", self.mesh.to_poly_text()),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

/// Hourly occupancy of `region` computed straight from an event list:
/// inside a facility from its Start through its End, linear travel between
/// an End and the next Start.
pub fn sweep_occupancy(events: &[MobilityEvent], region: impl Fn(Point2) -> bool) -> [f64; 24] {
    let mut by_agent: std::collections::BTreeMap<u32, Vec<&MobilityEvent>> =
        std::collections::BTreeMap::new();
    for e in events {
        by_agent.entry(e.agent_id).or_default().push(e);
    }
    let mut out = [0.0; 24];
    for evs in by_agent.values() {
        for (h, slot) in out.iter_mut().enumerate() {
            let t = h as f64 * 3600.0;
            let mut pos = evs[0].location;
            for w in evs.windows(2) {
                let (a, b) = (w[0], w[1]);
                if t < a.time_s {
                    break;
                }
                match a.kind {
                    EventKind::Start if t <= b.time_s => {
                        pos = a.location;
                        break;
                    }
                    EventKind::End if t < b.time_s => {
                        pos = a
                            .location
                            .lerp(b.location, (t - a.time_s) / (b.time_s - a.time_s));
                        break;
                    }
                    _ => pos = b.location,
                }
            }
            if region(pos) {
                *slot += 1.0;
            }
        }
    }
    out
}

impl SynthData {
    pub fn day_events(&self, dt: DayType) -> &[MobilityEvent] {
        &self.events[dt.index()]
    }
}
