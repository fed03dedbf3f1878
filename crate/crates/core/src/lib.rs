//! Deterministic harness for running interchangeable autonomous driving
//! agents against a simulated world.
//!
//! Layering, bottom up: [`model`] and [`geometry`] hold plain types,
//! [`route`] turns keypoint files into dense and geodetic routes, [`sim`]
//! owns the world, [`sensors`] samples it, [`agents`] consume the samples,
//! [`harness`] binds the pieces together and [`wire`] splits client from
//! world across a socket.

pub mod agents;
pub mod codec;
pub mod geometry;
pub mod harness;
pub mod model;
pub mod route;
pub mod sensors;
pub mod sim;
pub mod wire;

pub use agents::{resolve_agent, AgentRegistry};
pub use harness::{replay, run_scenario, Harness, HarnessConfig, LocalClient, RunResult, WorldClient};
