//! Deterministic grid-world simulator for a cooperative block-assembly
//! scenario, together with a complete heuristic agent team: relative-frame
//! belief bases, an encounter-handshake messaging protocol, centralized task
//! planning, and a lockstep match engine with replayable output.
//!
//! The crate is `no_std + alloc`; all IO, file formats and the CLI live in
//! the companion `gridbots-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod agent;
pub mod beliefs;
pub mod comms;
pub mod controller;
pub mod grid;
pub mod heuristics;
pub mod planner;
pub mod runner;
pub mod world;

pub use grid::{AgentId, BlockId, BlockType, Direction, Rotation, Team, Terrain, Vec2};
