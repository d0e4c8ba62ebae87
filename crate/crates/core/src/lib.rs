//! Deterministic multi-agent simulator for teams of small UAS organised in
//! operational, tactical and strategic layers, with a lossy ad-hoc network
//! between agents and a live ground-control gateway.

pub mod control;
pub mod engine;
pub mod geometry;
pub mod ids;
pub mod network;
pub mod perception;
pub mod policy;
pub mod scenario;
pub mod world;
