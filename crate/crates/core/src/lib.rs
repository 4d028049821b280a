//! Three-phase distribution-market clearing for an independent distribution system operator.

pub mod der;
pub mod error;
pub mod feeder;
pub mod generate;
pub mod lindistflow;
pub mod lp;
pub mod network;
pub mod phase;
pub mod pipeline;
pub mod polygon;
pub mod retail;
pub mod scenario;
pub mod tdopf;

pub use der::{Der, DerPopulation, Side};
pub use error::{Error, Result};
pub use feeder::{load_network, FeederDocument};
pub use network::{Network, NetworkSettings};
pub use phase::{Phase, PhaseSet};
pub use tdopf::{TdopfParams, TdopfProblem, TdopfSolution};
pub use generate::GenerationSpec;
pub use pipeline::{run_case, CaseKind, CaseResult, LmpSource};
pub use retail::RetailSignal;
pub use scenario::{run_scenario, ScenarioConfig};
