//! Spectrum coexistence between terrestrial 5G macro base stations and a
//! fixed-satellite-service receiver in the 12.2–12.7 GHz band.
//!
//! The crate is layered bottom-up:
//!
//! - [`geo`]: coordinates, ENU projection, buildings and line of sight.
//! - [`propagation`]: UMa path loss, shadow fading and rain attenuation.
//! - [`antenna`]: MBS beam and FSS dish gain patterns.
//! - [`scenario`]: scenario files, validation and UE drops.
//! - [`iet`]: the interference evaluation tool.
//! - [`context`]: the context broker and its providers.
//! - [`policy`]: thresholds, priority scores and policy files.
//! - [`dsaf`]: the exclusion-zone feedback loop.
//! - [`store`]: the persistent record log.

// `!(x > 0.0)` is the NaN-rejecting form used throughout input validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod antenna;
pub mod context;
pub mod dsaf;
pub mod geo;
pub mod iet;
pub mod policy;
pub mod propagation;
pub mod scenario;
pub mod store;

pub use context::{ContextBroker, ContextError, ContextKind, ContextSnapshot, WeatherKind};
pub use dsaf::{
    de_exclusion_check, run_feedback_loop, single_step, sweep_ez, DsaDecision, DsaError, FeedbackOutcome,
    RevocationReason, StepControls, StepOutcome, Verdict,
};
pub use geo::{EnuPoint, GeoPoint};
pub use iet::{evaluate, noise_floor, InterferenceReport, RadioParams, World};
pub use policy::{PolicySet, SecondaryUser};
pub use scenario::{load_scenario, Scenario, ScenarioError};
pub use store::{Record, RecordKind, Store, StoreError};
