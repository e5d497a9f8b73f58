//! Deterministic scenario generation: zones of pixels with resident phones,
//! background signal loss, injected incidents, and a virtual or paced clock.

mod config;
mod run;
mod world;

use thiserror::Error;

pub use config::{
    ClockMode, IncidentConfig, QueryMode, QuerySettings, ScenarioConfig, StartTime, ZoneConfig,
};
pub use run::{
    effective_query, log_header, parse_log_header, pixel_stream, replay, run_scenario,
    ReplayOptions, ReplayOutput, RunSinks, ScenarioOutput, LOG_HEADER_PREFIX, RESULTS_HEADER,
};
pub use world::{
    plan_incidents, plan_pixels, sleep_time_for_density, EventSource, IncidentPlan, PixelPlan,
};

use crate::engine::EngineError;
use crate::model::NTriplesError;
use crate::query::QueryError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("event log: {0}")]
    Log(#[from] NTriplesError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SimError {
    /// Whether the error comes from the scenario or query definition rather
    /// than from running it.
    pub fn is_config_error(&self) -> bool {
        matches!(self, SimError::Parse(_) | SimError::Config { .. } | SimError::Query(_))
    }
}
