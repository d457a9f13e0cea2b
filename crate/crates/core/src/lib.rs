//! Retargeted policy learning from observational data.
//!
//! The pipeline is: fit nuisances ([`nuisance`]) → build per-action scores
//! ([`scores`]) → reweight rows by retargeting weights ([`retarget`]) →
//! optimize a linear policy ([`policyopt`]) → evaluate regret ([`value`]).
//! [`simulate`] runs that pipeline over a synthetic benchmark.

pub mod data;
pub mod error;
pub mod model;
pub mod nuisance;
pub mod policy;
pub mod policyopt;
pub mod retarget;
pub mod scores;
pub mod seed;
pub mod simulate;
pub mod value;

pub use data::ObservationSet;
pub use error::{Error, Result};
pub use model::{NuisanceModel, NuisanceTable, OutcomeModel};
pub use policy::{LinearPolicy, Policy};
