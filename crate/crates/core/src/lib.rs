//! Iterative local voting: geometry, voter models, the update engine,
//! reference oracles, an experiment harness and an election service.

pub mod behavior;
pub mod election;
pub mod engine;
pub mod experiment;
pub mod geometry;
pub mod oracles;
pub mod population;
pub mod utility;

pub use behavior::{BehaviorModel, VoterResponse};
pub use engine::{run_ilv, IlvConfig, Trajectory};
pub use geometry::{FeasibleRegion, NormOrder, Point};
pub use population::{PopulationSpec, VoterStream};
pub use utility::UtilityModel;
