//! Occluded-pedestrian feature pipeline on a synthetic part-structured
//! feature world: prototype construction, correlation-based occlusion
//! modeling, copy-paste completion with adversarial refinement, and
//! miss-rate evaluation.

pub mod completion;
pub mod config;
pub mod container;
pub mod error;
pub mod eval;
pub mod feature;
pub mod ndnum;
pub mod occlusion;
pub mod par;
pub mod pipeline;
pub mod prototypes;
pub mod synth;

pub use error::{Error, Result};
pub use feature::{CellGrid, FeatureMap, OcclusionMask};
