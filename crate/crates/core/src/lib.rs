//! Multi-protocol alias resolution and dual-stack inference.
//!
//! SSH and BGP servers answer an unsolicited connection with host-wide
//! configuration: the SSH banner, algorithm preference lists and host key,
//! or the fields of a BGP OPEN. Addresses that present the same composite
//! identifier are interfaces of one device. This crate probes those
//! services, derives identifiers, groups addresses into alias and
//! dual-stack sets, cross-validates protocols and produces AS-level
//! summaries. [`simnet`] provides a loopback responder fleet with known
//! ground truth for end-to-end checks.

pub mod alias;
pub mod asn;
pub mod cli;
pub mod identity;
pub mod ingest;
pub mod probe;
pub mod record;
pub mod simnet;
pub mod validation;
pub mod wire;

pub use record::{ProbeTarget, Protocol, ScanRecord, ScanStatus, Source};
