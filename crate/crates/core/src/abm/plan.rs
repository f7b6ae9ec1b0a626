//! Mobility events, per-agent daily plans, facilities and the activity-change
//! schedule, with their CSV formats.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point2;

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Home,
    Work,
    School,
    Leisure,
    Shopping,
    Other,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Home,
        Category::Work,
        Category::School,
        Category::Leisure,
        Category::Shopping,
        Category::Other,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Start,
    End,
}

/// One row of an agent's plan: the start or end of an activity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MobilityEvent {
    pub agent_id: u32,
    /// Seconds since the start of the plan's day (or of the simulation, for
    /// multi-day event lists).
    pub time_s: f64,
    pub kind: EventKind,
    pub facility_id: u32,
    pub category: Category,
    pub location: Point2,
}

/// A Start/End pair at one facility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Activity {
    pub facility_id: u32,
    pub category: Category,
    pub location: Point2,
    pub start_s: f64,
    pub end_s: f64,
}

impl Activity {
    pub fn events(&self, agent_id: u32) -> [MobilityEvent; 2] {
        let ev = |kind, time_s| MobilityEvent {
            agent_id,
            time_s,
            kind,
            facility_id: self.facility_id,
            category: self.category,
            location: self.location,
        };
        [
            ev(EventKind::Start, self.start_s),
            ev(EventKind::End, self.end_s),
        ]
    }
}

/// Position implied by a time-ordered list of activities: the facility
/// location while inside, straight-line interpolation while travelling,
/// first/last location before/after the plan.
pub fn plan_position(plan: &[Activity], t_s: f64) -> Option<Point2> {
    let first = plan.first()?;
    if t_s <= first.start_s {
        return Some(first.location);
    }
    for (k, a) in plan.iter().enumerate() {
        if t_s <= a.end_s {
            return Some(a.location);
        }
        if let Some(next) = plan.get(k + 1) {
            if t_s < next.start_s {
                let span = next.start_s - a.end_s;
                let frac = if span > 0.0 {
                    (t_s - a.end_s) / span
                } else {
                    1.0
                };
                return Some(a.location.lerp(next.location, frac));
            }
        }
    }
    plan.last().map(|a| a.location)
}

/// Groups events into per-agent activity lists and checks that each agent's
/// events alternate Start/End at one facility and are time-ordered.
pub fn group_into_activities(events: &[MobilityEvent]) -> Result<BTreeMap<u32, Vec<Activity>>> {
    let mut per_agent: BTreeMap<u32, Vec<MobilityEvent>> = BTreeMap::new();
    for e in events {
        per_agent.entry(e.agent_id).or_default().push(*e);
    }
    let mut out = BTreeMap::new();
    for (agent, evs) in per_agent {
        let mut acts = Vec::with_capacity(evs.len() / 2);
        let mut open: Option<MobilityEvent> = None;
        let mut last_t = f64::NEG_INFINITY;
        for e in evs {
            if !e.time_s.is_finite() || e.time_s < last_t {
                return Err(Error::Abm(format!(
                    "agent {agent}: events not time-ordered at t={}s",
                    e.time_s
                )));
            }
            last_t = e.time_s;
            match (e.kind, open.take()) {
                (EventKind::Start, None) => open = Some(e),
                (EventKind::End, Some(s)) if s.facility_id == e.facility_id => {
                    acts.push(Activity {
                        facility_id: s.facility_id,
                        category: s.category,
                        location: s.location,
                        start_s: s.time_s,
                        end_s: e.time_s,
                    })
                }
                (EventKind::End, Some(s)) => {
                    return Err(Error::Abm(format!(
                        "agent {agent}: End at facility {} while inside facility {}",
                        e.facility_id, s.facility_id
                    )))
                }
                (EventKind::End, None) => {
                    return Err(Error::Abm(format!(
                        "agent {agent}: End before Start at t={}s",
                        e.time_s
                    )))
                }
                (EventKind::Start, Some(_)) => {
                    return Err(Error::Abm(format!(
                        "agent {agent}: two Start events in a row at t={}s",
                        e.time_s
                    )))
                }
            }
        }
        if let Some(s) = open {
            return Err(Error::Abm(format!(
                "agent {agent}: Start at t={}s has no End",
                s.time_s
            )));
        }
        out.insert(agent, acts);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DayType {
    Weekday,
    Saturday,
    Sunday,
}

impl DayType {
    pub const ALL: [DayType; 3] = [DayType::Weekday, DayType::Saturday, DayType::Sunday];

    pub fn of(date: NaiveDate) -> DayType {
        match date.weekday() {
            Weekday::Sat => DayType::Saturday,
            Weekday::Sun => DayType::Sunday,
            _ => DayType::Weekday,
        }
    }

    /// Number of days of this type in a week.
    pub fn weekly_weight(self) -> f64 {
        match self {
            DayType::Weekday => 5.0,
            _ => 1.0,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Plans of all agents for the three representative day types. Agents are
/// indexed densely; `agent_ids` maps an index back to the external id.
#[derive(Debug, Clone, Default)]
pub struct WeekPlans {
    pub agent_ids: Vec<u32>,
    /// `days[day_type.index()][agent]`.
    pub days: [Vec<Vec<Activity>>; 3],
}

impl WeekPlans {
    pub fn from_events(
        weekday: &[MobilityEvent],
        saturday: &[MobilityEvent],
        sunday: &[MobilityEvent],
    ) -> Result<Self> {
        let grouped = [
            group_into_activities(weekday)?,
            group_into_activities(saturday)?,
            group_into_activities(sunday)?,
        ];
        let mut ids: Vec<u32> = grouped.iter().flat_map(|g| g.keys().copied()).collect();
        ids.sort_unstable();
        ids.dedup();
        let index: HashMap<u32, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut days: [Vec<Vec<Activity>>; 3] = Default::default();
        for (d, g) in grouped.into_iter().enumerate() {
            days[d] = vec![Vec::new(); ids.len()];
            for (id, acts) in g {
                for a in &acts {
                    if a.start_s < 0.0 || a.end_s > SECONDS_PER_DAY {
                        return Err(Error::Abm(format!(
                            "agent {id}: activity outside the day ({}..{} s)",
                            a.start_s, a.end_s
                        )));
                    }
                }
                days[d][index[&id]] = acts;
            }
        }
        Ok(WeekPlans {
            agent_ids: ids,
            days,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.agent_ids.len()
    }

    pub fn day(&self, dt: DayType) -> &[Vec<Activity>] {
        &self.days[dt.index()]
    }

    pub fn events(&self, dt: DayType) -> Vec<MobilityEvent> {
        let mut out = Vec::new();
        for (i, plan) in self.day(dt).iter().enumerate() {
            for a in plan {
                out.extend(a.events(self.agent_ids[i]));
            }
        }
        out
    }

    /// A position for every agent at time `t_s` of a `dt` day, falling back to
    /// the other day types for agents with an empty plan.
    pub fn position(&self, dt: DayType, agent: usize, t_s: f64) -> Option<Point2> {
        plan_position(&self.day(dt)[agent], t_s).or_else(|| {
            DayType::ALL
                .iter()
                .find_map(|&o| plan_position(&self.day(o)[agent], t_s))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Facility {
    pub id: u32,
    pub category: Category,
    pub location: Point2,
    /// Maximum simultaneous occupancy; at least 1.
    pub room_size: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct EventRow {
    agent_id: u32,
    time_s: f64,
    kind: EventKind,
    facility_id: u32,
    category: Category,
    x: f64,
    y: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct FacilityRow {
    facility_id: u32,
    category: Category,
    x: f64,
    y: f64,
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file))
}

pub fn read_events_csv(path: &Path) -> Result<Vec<MobilityEvent>> {
    let mut rdr = open_reader(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: EventRow = row.map_err(|e| Error::from(e).context(path.display().to_string()))?;
        out.push(MobilityEvent {
            agent_id: r.agent_id,
            time_s: r.time_s,
            kind: r.kind,
            facility_id: r.facility_id,
            category: r.category,
            location: Point2::new(r.x, r.y),
        });
    }
    Ok(out)
}

pub fn write_events_csv<W: std::io::Write>(w: W, events: &[MobilityEvent]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for e in events {
        wtr.serialize(EventRow {
            agent_id: e.agent_id,
            time_s: e.time_s,
            kind: e.kind,
            facility_id: e.facility_id,
            category: e.category,
            x: e.location.x,
            y: e.location.y,
        })?;
    }
    wtr.flush().map_err(|e| Error::io("events", e))?;
    Ok(())
}

pub fn read_facilities_csv(path: &Path) -> Result<Vec<Facility>> {
    let mut rdr = open_reader(path)?;
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let r: FacilityRow = row.map_err(|e| Error::from(e).context(path.display().to_string()))?;
        out.push(Facility {
            id: r.facility_id,
            category: r.category,
            location: Point2::new(r.x, r.y),
            room_size: 1.0,
        });
    }
    Ok(out)
}

pub fn write_facilities_csv<W: std::io::Write>(w: W, facilities: &[Facility]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for f in facilities {
        wtr.serialize(FacilityRow {
            facility_id: f.id,
            category: f.category,
            x: f.location.x,
            y: f.location.y,
        })?;
    }
    wtr.flush().map_err(|e| Error::io("facilities", e))?;
    Ok(())
}

/// Daily percentage changes of at-home and out-of-home activity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActivitySchedule {
    pub days: BTreeMap<NaiveDate, (f64, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ActivityRow {
    date: NaiveDate,
    at_home_pct_change: f64,
    out_of_home_pct_change: f64,
}

impl ActivitySchedule {
    /// Schedule with zero change on every day of `[start, end]`.
    pub fn flat(start: NaiveDate, end: NaiveDate) -> Self {
        let days = start
            .iter_days()
            .take_while(|d| *d <= end)
            .map(|d| (d, (0.0, 0.0)))
            .collect();
        ActivitySchedule { days }
    }

    pub fn out_of_home(&self, date: NaiveDate) -> Result<f64> {
        self.days
            .get(&date)
            .map(|d| d.1)
            .ok_or_else(|| Error::Abm(format!("activity schedule has no entry for {date}")))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = open_reader(path)?;
        let mut days = BTreeMap::new();
        for row in rdr.deserialize() {
            let r: ActivityRow =
                row.map_err(|e| Error::from(e).context(path.display().to_string()))?;
            days.insert(r.date, (r.at_home_pct_change, r.out_of_home_pct_change));
        }
        Ok(ActivitySchedule { days })
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for (&date, &(h, o)) in &self.days {
            wtr.serialize(ActivityRow {
                date,
                at_home_pct_change: h,
                out_of_home_pct_change: o,
            })?;
        }
        wtr.flush().map_err(|e| Error::io("activity", e))?;
        Ok(())
    }
}
