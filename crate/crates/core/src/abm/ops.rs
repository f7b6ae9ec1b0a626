//! Event-list operations: per-step slicing, room-size estimation, activity
//! thinning, school closures, the facility infection hazard and straight-line
//! commuting positions.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;

use super::health::HealthState;
use super::plan::{
    group_into_activities, plan_position, Activity, Category, EventKind, MobilityEvent,
    SECONDS_PER_DAY,
};
use crate::error::{Error, Result};
use crate::geometry::Point2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChunkEvent {
    Real(MobilityEvent),
    /// Carries the position of an agent that has no real event in the window.
    Continuation {
        agent_id: u32,
        time_s: f64,
        location: Point2,
    },
}

impl ChunkEvent {
    pub fn agent_id(&self) -> u32 {
        match self {
            ChunkEvent::Real(e) => e.agent_id,
            ChunkEvent::Continuation { agent_id, .. } => *agent_id,
        }
    }

    pub fn time_s(&self) -> f64 {
        match self {
            ChunkEvent::Real(e) => e.time_s,
            ChunkEvent::Continuation { time_s, .. } => *time_s,
        }
    }

    pub fn is_artificial(&self) -> bool {
        matches!(self, ChunkEvent::Continuation { .. })
    }
}

/// Splits events into windows `[k·dt, (k+1)·dt)`. The number of windows is
/// `max(1, ceil(t_last/dt))`; an event exactly at the end of the last window
/// belongs to it. Agents whose plan spans a window without a real event in it
/// get one continuation event at the window start.
pub fn slice_events(events: &[MobilityEvent], dt_days: f64) -> Result<Vec<Vec<ChunkEvent>>> {
    if !(dt_days > 0.0) {
        return Err(Error::Abm("dt must be positive".into()));
    }
    if events.is_empty() {
        return Ok(Vec::new());
    }
    let plans = group_into_activities(events)?;
    let dt = dt_days * SECONDS_PER_DAY;
    let t_min = events
        .iter()
        .map(|e| e.time_s)
        .fold(f64::INFINITY, f64::min);
    if t_min < 0.0 {
        return Err(Error::Abm(format!("event at negative time {t_min}s")));
    }
    let t_last = events.iter().map(|e| e.time_s).fold(0.0, f64::max);
    let n = ((t_last / dt).ceil() as usize).max(1);
    let window = |t: f64| ((t / dt).floor() as usize).min(n - 1);

    let mut chunks: Vec<Vec<ChunkEvent>> = vec![Vec::new(); n];
    for e in events {
        chunks[window(e.time_s)].push(ChunkEvent::Real(*e));
    }
    for (&agent, plan) in &plans {
        let (Some(first), Some(last)) = (plan.first(), plan.last()) else {
            continue;
        };
        let mut has_event = vec![false; n];
        for a in plan {
            has_event[window(a.start_s)] = true;
            has_event[window(a.end_s)] = true;
        }
        for (k, chunk) in chunks.iter_mut().enumerate() {
            let (w0, w1) = (k as f64 * dt, (k + 1) as f64 * dt);
            if !has_event[k] && first.start_s < w0 && last.end_s >= w1 {
                chunk.push(ChunkEvent::Continuation {
                    agent_id: agent,
                    time_s: w0,
                    location: plan_position(plan, w0).expect("non-empty plan"),
                });
            }
        }
    }
    for chunk in &mut chunks {
        chunk.sort_by(|a, b| {
            a.time_s()
                .total_cmp(&b.time_s())
                .then(a.agent_id().cmp(&b.agent_id()))
                .then(kind_rank(a).cmp(&kind_rank(b)))
        });
    }
    Ok(chunks)
}

fn kind_rank(e: &ChunkEvent) -> u8 {
    match e {
        ChunkEvent::Real(MobilityEvent {
            kind: EventKind::End,
            ..
        }) => 0,
        ChunkEvent::Real(_) => 1,
        ChunkEvent::Continuation { .. } => 2,
    }
}

/// Maximum simultaneous occupancy per facility. Departures at the same instant
/// as arrivals are processed first, so back-to-back visits count once.
pub fn estimate_room_sizes(events: &[MobilityEvent]) -> Result<BTreeMap<u32, u32>> {
    let plans = group_into_activities(events)?;
    let mut sweeps: HashMap<u32, Vec<(f64, i32)>> = HashMap::new();
    for plan in plans.values() {
        for a in plan {
            let s = sweeps.entry(a.facility_id).or_default();
            s.push((a.start_s, 1));
            s.push((a.end_s, -1));
        }
    }
    let mut out = BTreeMap::new();
    for (f, mut s) in sweeps {
        s.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let (mut cur, mut best) = (0i32, 0i32);
        for (_, d) in s {
            cur += d;
            best = best.max(cur);
        }
        out.insert(f, best.max(1) as u32);
    }
    Ok(out)
}

/// Removes each out-of-home activity with probability `−pct/100` when `pct`
/// is negative. Home activities and non-negative rates leave the plan as is.
/// Draws one uniform per out-of-home activity only when `pct < 0`.
pub fn reduce_activities<R: Rng + ?Sized>(plan: &mut Vec<Activity>, pct: f64, rng: &mut R) {
    if !(pct < 0.0) {
        return;
    }
    let p = (-pct / 100.0).min(1.0);
    plan.retain(|a| a.category == Category::Home || rng.random::<f64>() >= p);
}

pub fn close_schools(plan: &mut Vec<Activity>) {
    plan.retain(|a| a.category != Category::School);
}

/// Applies per-day activity reductions to a multi-day event list; day `d`
/// covers `[d·86400, (d+1)·86400)` seconds and an activity belongs to the day
/// it starts in. Days beyond the schedule are left unchanged.
pub fn apply_activity_reduction<R: Rng + ?Sized>(
    events: &[MobilityEvent],
    daily_pct: &[f64],
    rng: &mut R,
) -> Result<Vec<MobilityEvent>> {
    let plans = group_into_activities(events)?;
    let mut out = Vec::with_capacity(events.len());
    for (&agent, plan) in &plans {
        for a in plan {
            let day = (a.start_s / SECONDS_PER_DAY).floor() as usize;
            let pct = daily_pct.get(day).copied().unwrap_or(0.0);
            let keep = a.category == Category::Home
                || !(pct < 0.0)
                || rng.random::<f64>() >= (-pct / 100.0).min(1.0);
            if keep {
                out.extend(a.events(agent));
            }
        }
    }
    Ok(out)
}

/// Drops school activities starting on or after `closure_day` (days since the
/// start of the event list).
pub fn apply_school_closures(
    events: &[MobilityEvent],
    closure_day: u32,
) -> Result<Vec<MobilityEvent>> {
    let cutoff = closure_day as f64 * SECONDS_PER_DAY;
    let plans = group_into_activities(events)?;
    let mut out = Vec::with_capacity(events.len());
    for (&agent, plan) in &plans {
        for a in plan {
            if !(a.category == Category::School && a.start_s >= cutoff) {
                out.extend(a.events(agent));
            }
        }
    }
    Ok(out)
}

/// Hazard accumulated by a susceptible sharing a facility with
/// `co_present_infectious` infectious agents for `overlap_days`.
pub fn infection_hazard(
    co_present_infectious: u32,
    room_size: f64,
    overlap_days: f64,
    beta_const: f64,
) -> Result<f64> {
    if overlap_days < 0.0 {
        return Err(Error::Abm(format!("negative overlap {overlap_days}")));
    }
    Ok(beta_const * co_present_infectious as f64 / room_size.max(1.0) * overlap_days)
}

/// Probability of infection at facility exit for an accumulated hazard.
pub fn infection_probability(hazard: f64) -> f64 {
    -(-hazard).exp_m1()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AgentMode {
    InFacility {
        facility: u32,
        location: Point2,
    },
    /// Times in days since the simulation start.
    Commuting {
        from: Point2,
        to: Point2,
        depart: f64,
        arrival: f64,
    },
    InPdeDomain,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agent {
    pub id: u32,
    pub health: HealthState,
    pub position: Point2,
    pub mode: AgentMode,
    pub state_entry_time: f64,
    /// Facility hazard clock value when a susceptible entered its current
    /// facility.
    pub hazard_mark: f64,
}

impl AgentMode {
    pub fn position_at(&self, t: f64, fallback: Point2) -> Result<Point2> {
        Ok(match *self {
            AgentMode::InFacility { location, .. } => location,
            AgentMode::Commuting {
                from,
                to,
                depart,
                arrival,
            } => {
                if arrival < depart {
                    return Err(Error::Abm(format!(
                        "arrival {arrival} before departure {depart}"
                    )));
                }
                if arrival == depart || t >= arrival {
                    to
                } else if t <= depart {
                    from
                } else {
                    from.lerp(to, (t - depart) / (arrival - depart))
                }
            }
            AgentMode::InPdeDomain => fallback,
        })
    }
}

/// Sets every agent's position to its location at `t_end`.
pub fn advance_positions(agents: &mut [Agent], t_end: f64) -> Result<()> {
    for a in agents {
        a.position = a.mode.position_at(t_end, a.position)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn act(fac: u32, cat: Category, s: f64, e: f64) -> Activity {
        Activity {
            facility_id: fac,
            category: cat,
            location: Point2::new(fac as f64, 0.0),
            start_s: s,
            end_s: e,
        }
    }

    fn events(agent: u32, acts: &[Activity]) -> Vec<MobilityEvent> {
        acts.iter().flat_map(|a| a.events(agent)).collect()
    }

    #[test]
    fn slicing_counts_windows_and_continuations() {
        let evs = events(0, &[act(0, Category::Home, 0.0, 36_000.0)]);
        let chunks = slice_events(&evs, 0.5 / 24.0).unwrap();
        assert_eq!(chunks.len(), 20);
        assert!(chunks[0].iter().all(|e| !e.is_artificial()));
        for (k, c) in chunks.iter().enumerate().take(19).skip(1) {
            assert_eq!(c.len(), 1, "chunk {k}");
            assert!(c[0].is_artificial());
        }
        assert_eq!(chunks[19].len(), 1);
        assert!(!chunks[19][0].is_artificial());

        assert!(slice_events(&[], 0.1).unwrap().is_empty());
        let one = events(0, &[act(0, Category::Home, 0.0, 60.0)]);
        let chunks = slice_events(&one, 1.0 / 48.0).unwrap();
        assert_eq!(chunks.len(), 1);
        assert!(chunks[0].iter().all(|e| !e.is_artificial()));
    }

    #[test]
    fn continuation_carries_commuting_position() {
        let evs = events(
            4,
            &[
                act(0, Category::Home, 0.0, 1000.0),
                act(10, Category::Work, 3000.0, 4000.0),
            ],
        );
        let chunks = slice_events(&evs, 1000.0 / SECONDS_PER_DAY).unwrap();
        assert_eq!(chunks.len(), 4);
        assert!(!chunks[1][0].is_artificial());
        // The End at 1000 s falls into window 1, so window 2 is event-less.
        match chunks[2][0] {
            ChunkEvent::Continuation { location, .. } => assert_relative_eq!(location.x, 5.0),
            ChunkEvent::Real(_) => panic!("expected continuation"),
        }
    }

    #[test]
    fn room_sizes_by_sweep() {
        let h = 3600.0;
        let mut evs = Vec::new();
        for a in 0..3 {
            evs.extend(events(a, &[act(1, Category::Work, 9.0 * h, 10.0 * h)]));
        }
        assert_eq!(estimate_room_sizes(&evs).unwrap()[&1], 3);

        let seq: Vec<_> = (0..3)
            .flat_map(|a| {
                events(
                    a,
                    &[act(1, Category::Work, a as f64 * h, (a + 1) as f64 * h)],
                )
            })
            .collect();
        assert_eq!(estimate_room_sizes(&seq).unwrap()[&1], 1);

        // Intervals (hours): [0,4) [1,3) [2,6) [2.5,5) [3.5,7) [5,8).
        // Occupancy peaks at 4 during [3.5, 4) and [2.5, 3).
        let spans = [
            (0.0, 4.0),
            (1.0, 3.0),
            (2.0, 6.0),
            (2.5, 5.0),
            (3.5, 7.0),
            (5.0, 8.0),
        ];
        let stag: Vec<_> = spans
            .iter()
            .enumerate()
            .flat_map(|(a, &(s, e))| events(a as u32, &[act(2, Category::Leisure, s * h, e * h)]))
            .collect();
        assert_eq!(estimate_room_sizes(&stag).unwrap()[&2], 4);
    }

    #[test]
    fn room_size_rejects_end_before_start() {
        let mut evs = events(0, &[act(1, Category::Work, 0.0, 10.0)]);
        evs.swap(0, 1);
        assert!(estimate_room_sizes(&evs).is_err());
    }

    #[test]
    fn activity_reduction_extremes_and_rate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let day: Vec<Activity> = vec![
            act(0, Category::Home, 0.0, 100.0),
            act(1, Category::Work, 200.0, 300.0),
            act(0, Category::Home, 400.0, 500.0),
        ];
        let evs = events(0, &day);
        assert_eq!(
            apply_activity_reduction(&evs, &[0.0], &mut rng).unwrap(),
            evs
        );
        assert_eq!(
            apply_activity_reduction(&evs, &[15.0], &mut rng).unwrap(),
            evs
        );
        let all_gone = apply_activity_reduction(&evs, &[-100.0], &mut rng).unwrap();
        assert_eq!(all_gone, events(0, &[day[0], day[2]]));

        let many: Vec<_> = (0..10_000u32)
            .flat_map(|a| events(a, &[act(1, Category::Leisure, 10.0, 20.0)]))
            .collect();
        let kept = apply_activity_reduction(&many, &[-50.0], &mut rng)
            .unwrap()
            .len()
            / 2;
        let removed = 1.0 - kept as f64 / 10_000.0;
        assert!((removed - 0.5).abs() < 0.02, "removed {removed}");
    }

    #[test]
    fn school_closure_filter() {
        let d = SECONDS_PER_DAY;
        let mut evs = events(
            0,
            &[
                act(5, Category::School, 100.0, 200.0),
                act(6, Category::Work, 300.0, 400.0),
            ],
        );
        evs.extend(events(0, &[act(5, Category::School, d + 100.0, d + 200.0)]));
        evs.extend(events(
            1,
            &[act(5, Category::School, 2.0 * d, 2.0 * d + 10.0)],
        ));
        let out = apply_school_closures(&evs, 1).unwrap();
        let expect: Vec<_> = events(
            0,
            &[
                act(5, Category::School, 100.0, 200.0),
                act(6, Category::Work, 300.0, 400.0),
            ],
        );
        assert_eq!(out, expect);

        let no_school = events(0, &[act(6, Category::Work, 300.0, 400.0)]);
        assert_eq!(apply_school_closures(&no_school, 0).unwrap(), no_school);
        let only_school = events(0, &[act(5, Category::School, 300.0, 400.0)]);
        assert!(apply_school_closures(&only_school, 0).unwrap().is_empty());
    }

    #[test]
    fn hazard_formula() {
        let beta = 0.4 * 1.7e-5;
        let h = infection_hazard(1, 4.0, 0.25, beta).unwrap();
        assert_relative_eq!(h, 4.25e-7, max_relative = 1e-12);
        assert_relative_eq!(
            infection_probability(h),
            1.0 - (-4.25e-7f64).exp(),
            max_relative = 1e-9
        );
        assert_eq!(infection_hazard(0, 4.0, 1.0, 5.0).unwrap(), 0.0);
        assert_eq!(infection_hazard(3, 4.0, 1.0, 0.0).unwrap(), 0.0);
        assert!(infection_hazard(1, 4.0, -0.1, 1.0).is_err());
    }

    #[test]
    fn commuting_interpolation() {
        let mode = AgentMode::Commuting {
            from: Point2::new(0.0, 0.0),
            to: Point2::new(10.0, 4.0),
            depart: 1.0,
            arrival: 2.0,
        };
        assert_eq!(
            mode.position_at(1.5, Point2::default()).unwrap(),
            Point2::new(5.0, 2.0)
        );
        assert_eq!(
            mode.position_at(2.0, Point2::default()).unwrap(),
            Point2::new(10.0, 4.0)
        );
        let bad = AgentMode::Commuting {
            from: Point2::default(),
            to: Point2::default(),
            depart: 2.0,
            arrival: 1.0,
        };
        assert!(bad.position_at(1.5, Point2::default()).is_err());
    }

    #[test]
    fn three_leg_plan_positions() {
        // home (0,0) until 8h, work (8000,0) 9h-17h, leisure (8000,6000)
        // 18h-20h, home from 21h.
        let h = 3600.0;
        let home = Point2::new(0.0, 0.0);
        let work = Point2::new(8000.0, 0.0);
        let leisure = Point2::new(8000.0, 6000.0);
        let mk = |fac, cat, loc, s: f64, e: f64| Activity {
            facility_id: fac,
            category: cat,
            location: loc,
            start_s: s * h,
            end_s: e * h,
        };
        let plan = [
            mk(0, Category::Home, home, 0.0, 8.0),
            mk(1, Category::Work, work, 9.0, 17.0),
            mk(2, Category::Leisure, leisure, 18.0, 20.0),
            mk(0, Category::Home, home, 21.0, 24.0),
        ];
        let expect = [
            (4.0, Point2::new(0.0, 0.0)),
            (8.5, Point2::new(4000.0, 0.0)),
            (12.0, work),
            (17.25, Point2::new(8000.0, 1500.0)),
            (19.0, leisure),
            (20.5, Point2::new(4000.0, 3000.0)),
            (22.0, home),
        ];
        for (t, p) in expect {
            let got = plan_position(&plan, t * h).unwrap();
            assert_relative_eq!(got.x, p.x, epsilon = 1e-9);
            assert_relative_eq!(got.y, p.y, epsilon = 1e-9);
        }
    }
}
