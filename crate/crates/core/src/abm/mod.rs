//! Trajectory-driven agent model: plans, facilities, health states and the
//! stepping engine.

pub mod engine;
pub mod health;
pub mod ops;
pub mod plan;

pub use engine::{AbmEngine, AbmSettings, Population, StepReport};
pub use health::{
    step_health, step_health_states, BetaInterval, BetaSchedule, HealthState, RateSet,
};
pub use ops::{
    advance_positions, apply_activity_reduction, apply_school_closures, estimate_room_sizes,
    infection_hazard, infection_probability, slice_events, Agent, AgentMode, ChunkEvent,
};
pub use plan::{
    plan_position, Activity, ActivitySchedule, Category, DayType, EventKind, Facility,
    MobilityEvent, WeekPlans, SECONDS_PER_DAY,
};
