//! Inter-animal transform classes (IATC): fitting candidate transform
//! classes between neural response profiles, scoring them for cross-subject
//! predictivity and area-identification specificity, correcting for trial
//! noise, and simulating populations that exhibit the zippering effect.

pub mod data;
pub mod error;
pub mod glm;
pub mod metrics;
pub mod noise;
pub mod pipeline;
pub mod power;
pub mod rng;
pub mod simulator;
pub mod stats;
pub mod transforms;

pub use error::{IatcError, Result};
