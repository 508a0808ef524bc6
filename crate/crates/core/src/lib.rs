//! Transmission-distribution-DER co-simulation.

pub mod cosim;
pub mod der;
pub mod derms;
pub mod dnet;
pub mod msgbus;
pub mod tsnet;

pub use cosim::{run_scenario, Mode, RunOptions, RunReport, Scenario, SimError};
pub use der::{DerDevice, DerMode, DroopParams};
pub use derms::{AgcSignal, Registry, SetpointCommand, WeightBasis};
pub use dnet::{Feeder, FeederGroup, FeederSolution, PhaseModel};
pub use msgbus::{Broker, BusClient, BusError, Envelope, Payload, Topic, TopicFilter};
pub use tsnet::TransmissionSystem;
