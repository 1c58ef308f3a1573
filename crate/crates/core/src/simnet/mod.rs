//! Synthetic responder fleets with known alias topology.

pub mod generate;
pub mod server;
pub mod spec;

pub use generate::{generate_fleet, FleetParams};
pub use server::{launch_fleet, AddressMap, Fleet, SimnetError};
pub use spec::{
    ground_truth_sets, observable_identifier, BgpBehavior, BgpProfile, CapabilitySpec,
    ConfusionCase, FleetSpec, FleetSpecError, GroundTruth, HostSpec, PrefixSpec, SshBehavior,
    SshProfile,
};
