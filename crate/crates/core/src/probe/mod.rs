//! Active probing: target planning, per-protocol sessions and the paced
//! scan loop.

pub mod plan;
pub mod scan;
pub mod session;

pub use plan::{parse_target_list, plan_targets, PlanError, PortConfig, DEFAULT_MAX_PREFIX_HOSTS};
pub use scan::{
    min_same_address_gap, run_scan, Dispatch, ScanConfig, ScanConfigError, ScanOutcome, ScanSummary,
};
pub use session::{
    probe_bgp_stream, probe_ssh_stream, AddressResolver, BoxFuture, DirectResolver, NetworkProber,
    Prober, Timeouts,
};
