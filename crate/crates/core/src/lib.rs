//! Demonstration-to-plan pipeline for contact-rich manipulation.
//!
//! A demonstration (tactile vector fields, a six-axis wrench trace and
//! symbolic scene annotations) is segmented into object-status events,
//! reasoned into a skill sequence over a PDDL domain, grounded with
//! force/torque thresholds, and generalized to new scene configurations.
//! The [`sim`] module closes the loop with a resistance-profile executor
//! and the evaluation metrics.

pub mod analyzer;
pub mod ftsig;
pub mod pddl;
pub mod planner;
pub mod sim;
pub mod skill_model;
pub mod tactile;

pub use skill_model::{ConditionExpr, ObjectStatus, ParamValue, Skill, SkillLibrary, SkillReturn};
