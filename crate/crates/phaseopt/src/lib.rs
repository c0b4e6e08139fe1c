//! Phase-based trajectory optimization for legged robots (build in progress).
pub mod bezier;
pub mod dynamics;
pub mod model;
pub mod nlp;
pub mod phase;
pub mod scenarios;
pub mod solver;
