//! The eight-state health model and stochastic transition sampling.

use chrono::NaiveDate;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HealthState {
    S,
    E,
    I,
    SY,
    H,
    C,
    HC,
    R,
}

impl HealthState {
    pub const ALL: [HealthState; 8] = [
        HealthState::S,
        HealthState::E,
        HealthState::I,
        HealthState::SY,
        HealthState::H,
        HealthState::C,
        HealthState::HC,
        HealthState::R,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            HealthState::S => "S",
            HealthState::E => "E",
            HealthState::I => "I",
            HealthState::SY => "SY",
            HealthState::H => "H",
            HealthState::C => "C",
            HealthState::HC => "HC",
            HealthState::R => "R",
        }
    }

    /// I and SY transmit.
    pub fn is_infectious(self) -> bool {
        matches!(self, HealthState::I | HealthState::SY)
    }

    /// Destinations reachable in one transition. S→E is driven by contacts,
    /// not by a fixed rate.
    pub fn successors(self) -> &'static [HealthState] {
        use HealthState::*;
        match self {
            S => &[E],
            E => &[I],
            I => &[SY, R],
            SY => &[H, R],
            H => &[C, R],
            C => &[HC],
            HC => &[R],
            R => &[],
        }
    }
}

/// Transition rates in 1/day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSet {
    pub sigma: f64,
    pub gamma: f64,
    pub eta: f64,
    pub kappa: f64,
    pub eta_c: f64,
    pub phi_i: f64,
    pub phi_sy: f64,
    pub phi_h: f64,
    pub phi_hc: f64,
}

impl RateSet {
    /// Rates of the calibrated Berlin/Brandenburg runs.
    pub fn calibrated() -> Self {
        RateSet {
            sigma: 1.0 / 3.5,
            gamma: 1.0 / 2.0,
            eta: 1.0 / 4.0,
            kappa: 1.0,
            eta_c: 1.0 / 21.0,
            phi_i: 1.0 / 4.0,
            phi_sy: 1.0 / 8.0,
            phi_h: 1.0 / 14.0,
            phi_hc: 1.0 / 7.0,
        }
    }

    pub fn zero() -> Self {
        RateSet {
            sigma: 0.0,
            gamma: 0.0,
            eta: 0.0,
            kappa: 0.0,
            eta_c: 0.0,
            phi_i: 0.0,
            phi_sy: 0.0,
            phi_h: 0.0,
            phi_hc: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = [
            self.sigma,
            self.gamma,
            self.eta,
            self.kappa,
            self.eta_c,
            self.phi_i,
            self.phi_sy,
            self.phi_h,
            self.phi_hc,
        ];
        if all.iter().all(|r| r.is_finite() && *r >= 0.0) {
            Ok(())
        } else {
            Err("transition rates must be finite and non-negative".into())
        }
    }

    /// Rate of the rule `from → to`; zero for pairs that are not rules and for
    /// the contact-driven S→E.
    pub fn rate(&self, from: HealthState, to: HealthState) -> f64 {
        use HealthState::*;
        match (from, to) {
            (E, I) => self.sigma,
            (I, SY) => self.gamma,
            (I, R) => self.phi_i,
            (SY, H) => self.eta,
            (SY, R) => self.phi_sy,
            (H, C) => self.kappa,
            (H, R) => self.phi_h,
            (C, HC) => self.eta_c,
            (HC, R) => self.phi_hc,
            _ => 0.0,
        }
    }

    /// Total outgoing rate of a non-susceptible state.
    pub fn total_out(&self, from: HealthState) -> f64 {
        from.successors()
            .iter()
            .map(|&to| self.rate(from, to))
            .sum()
    }
}

/// Piecewise-constant infection constant: each interval applies from its
/// start date until the next interval starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub intervals: Vec<BetaInterval>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaInterval {
    pub start: NaiveDate,
    pub value: f64,
}

impl BetaSchedule {
    pub fn constant(value: f64) -> Self {
        BetaSchedule {
            intervals: vec![BetaInterval {
                start: NaiveDate::MIN,
                value,
            }],
        }
    }

    pub fn two_intervals(start: NaiveDate, first: f64, split: NaiveDate, second: f64) -> Self {
        BetaSchedule {
            intervals: vec![
                BetaInterval {
                    start,
                    value: first,
                },
                BetaInterval {
                    start: split,
                    value: second,
                },
            ],
        }
    }

    /// Checks ordering, non-negativity and that `sim_start` is covered.
    pub fn validate(&self, sim_start: NaiveDate) -> Result<(), String> {
        let first = self.intervals.first().ok_or("beta schedule is empty")?;
        if first.start > sim_start {
            return Err(format!(
                "beta schedule starts {} after the simulation start {sim_start}",
                first.start
            ));
        }
        for w in self.intervals.windows(2) {
            if w[1].start <= w[0].start {
                return Err("beta intervals must have strictly increasing start dates".into());
            }
        }
        if self
            .intervals
            .iter()
            .any(|i| !(i.value >= 0.0) || !i.value.is_finite())
        {
            return Err("beta values must be finite and non-negative".into());
        }
        Ok(())
    }

    pub fn value(&self, date: NaiveDate) -> f64 {
        self.intervals
            .iter()
            .rev()
            .find(|i| i.start <= date)
            .or(self.intervals.first())
            .map_or(0.0, |i| i.value)
    }
}

/// Samples a transition given competing rules with the given rates: with
/// probability `1 − exp(−Λ·dt)` one rule fires, chosen with probability
/// `λ_r / Λ`. A single uniform draw decides both.
pub fn sample_competing<R: Rng + ?Sized>(
    rates: &[(HealthState, f64)],
    dt: f64,
    rng: &mut R,
) -> Option<HealthState> {
    let total: f64 = rates.iter().map(|r| r.1).sum();
    if !(total > 0.0) {
        return None;
    }
    let p = -(-total * dt).exp_m1();
    let u: f64 = rng.random();
    if u >= p {
        return None;
    }
    let target = u / p * total;
    let mut acc = 0.0;
    for &(to, r) in rates {
        acc += r;
        if target < acc {
            return Some(to);
        }
    }
    rates.iter().rev().find(|r| r.1 > 0.0).map(|r| r.0)
}

/// One rate-driven transition attempt for an agent in `state` (S is left to
/// the contact model).
pub fn step_health<R: Rng + ?Sized>(
    state: HealthState,
    rates: &RateSet,
    dt: f64,
    rng: &mut R,
) -> Option<HealthState> {
    if state == HealthState::S {
        return None;
    }
    let succ = state.successors();
    let mut buf = [(HealthState::S, 0.0); 2];
    for (slot, &to) in buf.iter_mut().zip(succ) {
        *slot = (to, rates.rate(state, to));
    }
    sample_competing(&buf[..succ.len()], dt, rng)
}

/// Applies [`step_health`] to every state in order and returns the
/// transitions as `(index, from, to)`.
pub fn step_health_states<R: Rng + ?Sized>(
    states: &mut [HealthState],
    rates: &RateSet,
    dt: f64,
    rng: &mut R,
) -> Vec<(usize, HealthState, HealthState)> {
    let mut changes = Vec::new();
    for (i, s) in states.iter_mut().enumerate() {
        if let Some(to) = step_health(*s, rates, dt, rng) {
            changes.push((i, *s, to));
            *s = to;
        }
    }
    changes
}
