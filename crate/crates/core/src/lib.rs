//! Guideline-driven target-volume delineation: binary masks on voxel grids,
//! morphological operations, a tool-call plan language, a planning loop over
//! chat-completion backends, plan execution, evaluation metrics and a
//! synthetic phantom generator.

pub mod case;
pub mod engine;
pub mod geometry;
pub mod metrics;
pub mod nrrd;
pub mod phantom;
pub mod plan;
pub mod planner;
pub mod report;
pub mod volume;
