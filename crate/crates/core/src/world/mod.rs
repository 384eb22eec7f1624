//! Synthetic world: procedural maps and scripted expert demonstrations.

mod dataset;
pub mod map;
pub mod sim;
mod spec;

pub use dataset::{generate_scene, generate_scenes, scene_seed, write_dataset};
pub use map::build_map;
pub use sim::{simulate_scene, Scenario, SimulatedScene};
pub use spec::{ExpertParams, MapStyle, WorldSpec};
