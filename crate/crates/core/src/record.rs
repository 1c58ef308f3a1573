//! Scan records: one probe outcome per (address, port, protocol).
//!
//! This is the unit stored in the JSONL record files. The layout is
//! versioned by [`SCAN_RECORD_SCHEMA_VERSION`].

use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::wire::{BgpNotification, BgpOpen, SshBanner, SshHostKey, SshKexInit};

pub const SCAN_RECORD_SCHEMA_VERSION: u32 = 1;

pub const DEFAULT_SSH_PORT: u16 = 22;
pub const DEFAULT_BGP_PORT: u16 = 179;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Ssh,
    Bgp,
}

impl Protocol {
    pub fn default_port(self) -> u16 {
        match self {
            Protocol::Ssh => DEFAULT_SSH_PORT,
            Protocol::Bgp => DEFAULT_BGP_PORT,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Ssh => "ssh",
            Protocol::Bgp => "bgp",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ssh" => Ok(Protocol::Ssh),
            "bgp" => Ok(Protocol::Bgp),
            other => Err(format!("unknown protocol {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ProbeTarget {
    pub address: IpAddr,
    pub port: u16,
    pub protocol: Protocol,
}

impl ProbeTarget {
    pub fn new(address: IpAddr, protocol: Protocol) -> Self {
        ProbeTarget {
            address,
            port: protocol.default_port(),
            protocol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanStatus {
    NoConnect,
    ConnectOnly,
    BannerOnly,
    FullHandshake,
    ImmediateClose,
    Timeout,
}

impl ScanStatus {
    pub const ALL: [ScanStatus; 6] = [
        ScanStatus::NoConnect,
        ScanStatus::ConnectOnly,
        ScanStatus::BannerOnly,
        ScanStatus::FullHandshake,
        ScanStatus::ImmediateClose,
        ScanStatus::Timeout,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScanStatus::NoConnect => "no_connect",
            ScanStatus::ConnectOnly => "connect_only",
            ScanStatus::BannerOnly => "banner_only",
            ScanStatus::FullHandshake => "full_handshake",
            ScanStatus::ImmediateClose => "immediate_close",
            ScanStatus::Timeout => "timeout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Active,
    Imported,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Active => "active",
            Source::Imported => "imported",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SshArtifacts {
    pub banner: SshBanner,
    #[serde(default)]
    pub kexinit: Option<SshKexInit>,
    #[serde(default)]
    pub hostkey: Option<SshHostKey>,
    /// Set when the server could not be taken to the ECDH reply (for
    /// example it does not offer curve25519-sha256).
    #[serde(default)]
    pub hostkey_unavailable: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BgpArtifacts {
    #[serde(default)]
    pub open: Option<BgpOpen>,
    #[serde(default)]
    pub notification: Option<BgpNotification>,
    /// Bytes received, kept when they could not be fully decoded.
    #[serde(
        with = "crate::wire::hex_bytes",
        default,
        skip_serializing_if = "Vec::is_empty"
    )]
    pub raw: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScanRecord {
    pub schema_version: u32,
    pub target: ProbeTarget,
    pub status: ScanStatus,
    /// UTC seconds.
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssh: Option<SshArtifacts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bgp: Option<BgpArtifacts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub source: Source,
}

impl ScanRecord {
    /// A record with no artifacts yet.
    pub fn empty(target: ProbeTarget, status: ScanStatus, timestamp: u64, source: Source) -> Self {
        ScanRecord {
            schema_version: SCAN_RECORD_SCHEMA_VERSION,
            target,
            status,
            timestamp,
            ssh: None,
            bgp: None,
            error: None,
            source,
        }
    }

    pub fn with_error(mut self, err: impl fmt::Display) -> Self {
        self.error = Some(err.to_string());
        self
    }

    pub fn address(&self) -> IpAddr {
        self.target.address
    }

    pub fn protocol(&self) -> Protocol {
        self.target.protocol
    }

    /// Whether the host answered with service data that can feed an
    /// identifier: an SSH banner or a BGP OPEN.
    pub fn is_responsive(&self) -> bool {
        match self.protocol() {
            Protocol::Ssh => self.ssh.is_some(),
            Protocol::Bgp => self.bgp.as_ref().is_some_and(|b| b.open.is_some()),
        }
    }

    /// Checks the structural invariants of a record.
    pub fn validate(&self) -> Result<(), String> {
        if self.schema_version != SCAN_RECORD_SCHEMA_VERSION {
            return Err(format!(
                "unsupported schema_version {}",
                self.schema_version
            ));
        }
        match self.protocol() {
            Protocol::Ssh if self.bgp.is_some() => {
                return Err("ssh record carries bgp artifacts".into())
            }
            Protocol::Bgp if self.ssh.is_some() => {
                return Err("bgp record carries ssh artifacts".into())
            }
            _ => {}
        }
        if self.protocol() == Protocol::Ssh && self.status == ScanStatus::FullHandshake {
            match &self.ssh {
                Some(ssh) if ssh.kexinit.is_some() => {}
                _ => return Err("full_handshake ssh record lacks banner or kexinit".into()),
            }
        }
        Ok(())
    }
}

pub fn now_utc_seconds() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
