//! Pad emulator and experiment scenarios.

pub mod pad;
pub mod scenario;

use thiserror::Error;

pub use pad::{measure, step_pad, PadInput, PadParams, PadReading, PadState};
pub use scenario::{run_scenario, Scenario, ScenarioName, ScenarioParams, SessionData, PRESSURE_RATE_HZ};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid parameters: {0}")]
    BadParams(String),
    #[error("non-finite input to the pad model")]
    NonFiniteInput,
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
}
