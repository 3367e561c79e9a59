//! Hierarchical task planning for a mobile manipulator: a reasoning policy
//! chooses thoughts, perception queries and skills; skills decompose into
//! low-level commands run against a simulated household world; failures are
//! explained by retrieval over past failures.

pub mod context;
pub mod execution;
pub mod explainer;
pub mod grammar;
pub mod harness;
pub mod perception;
pub mod planner;
pub mod policy;
pub mod scenario;
pub mod skills;
pub mod world;
