//! Fleet descriptions and the alias sets they imply.
//!
//! A fleet file is TOML:
//!
//! ```toml
//! [[host]]
//! id = "edge-1"
//! interfaces = ["192.0.2.1", "2001:db8::1"]
//!
//! [host.ssh]
//! banner = "SSH-2.0-OpenSSH_9.3"
//! key_seed = "edge-1"           # optional, defaults to the host id
//! behavior = "normal"           # normal | banner_then_silent | kexinit_twice | no_curve | immediate_close
//! # kex_algorithms, host_key_algorithms, encryption, mac, compression: optional name lists
//!
//! [host.bgp]
//! my_as = 23456
//! hold_time = 90
//! bgp_identifier = "148.170.0.33"
//! capabilities = [{ code = 128 }, { code = 2 }]
//! behavior = "open_then_notify" # open_then_notify | immediate_close | silent
//!
//! [[prefix]]                    # optional prefix-to-AS entries for the fleet
//! prefix = "192.0.2.0/24"
//! asn = 64500
//! ```
//!
//! Every interface of a host serves the host's profiles. Addresses are
//! virtual: the fleet listens on loopback and publishes an address map.

use std::collections::{BTreeMap, BTreeSet};
use std::net::{IpAddr, Ipv4Addr};
use std::path::Path;

use ipnet::IpNet;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::alias::{DisjointSets, DualStackHistogram};
use crate::asn::PrefixTable;
use crate::identity::{bgp_canonical, ssh_canonical, SshListMode};
use crate::record::Protocol;
use crate::wire::kex::SUPPORTED_KEX;
use crate::wire::{parse_ssh_banner, BgpOpen, Capability, SshBanner, SshHostKey, SshKexInit};

#[derive(Debug, Error)]
pub enum FleetSpecError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        source: std::io::Error,
    },
    #[error("fleet spec: {0}")]
    Parse(String),
    #[error("address {0} appears on more than one interface")]
    DuplicateAddress(IpAddr),
    #[error("host {0:?} has no interfaces")]
    NoInterfaces(String),
    #[error("host id {0:?} used twice")]
    DuplicateHost(String),
    #[error("host {host:?}: {message}")]
    BadProfile { host: String, message: String },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SshBehavior {
    #[default]
    Normal,
    BannerThenSilent,
    KexinitTwice,
    NoCurve,
    ImmediateClose,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BgpBehavior {
    #[default]
    OpenThenNotify,
    ImmediateClose,
    Silent,
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

fn default_kex() -> Vec<String> {
    let mut v = names(&SUPPORTED_KEX);
    v.extend(names(&[
        "ecdh-sha2-nistp256",
        "diffie-hellman-group14-sha256",
    ]));
    v
}
fn default_hostkey_algs() -> Vec<String> {
    names(&["ssh-ed25519"])
}
fn default_encryption() -> Vec<String> {
    names(&["chacha20-poly1305@openssh.com", "aes128-ctr", "aes256-ctr"])
}
fn default_mac() -> Vec<String> {
    names(&["hmac-sha2-256", "hmac-sha1"])
}
fn default_compression() -> Vec<String> {
    names(&["none"])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SshProfile {
    pub banner: String,
    #[serde(default)]
    pub key_seed: Option<String>,
    #[serde(default = "default_kex")]
    pub kex_algorithms: Vec<String>,
    #[serde(default = "default_hostkey_algs")]
    pub host_key_algorithms: Vec<String>,
    #[serde(default = "default_encryption")]
    pub encryption: Vec<String>,
    #[serde(default = "default_mac")]
    pub mac: Vec<String>,
    #[serde(default = "default_compression")]
    pub compression: Vec<String>,
    #[serde(default)]
    pub behavior: SshBehavior,
}

impl SshProfile {
    pub fn new(banner: impl Into<String>) -> Self {
        SshProfile {
            banner: banner.into(),
            key_seed: None,
            kex_algorithms: default_kex(),
            host_key_algorithms: default_hostkey_algs(),
            encryption: default_encryption(),
            mac: default_mac(),
            compression: default_compression(),
            behavior: SshBehavior::Normal,
        }
    }

    fn seed<'a>(&'a self, host_id: &'a str) -> &'a str {
        self.key_seed.as_deref().unwrap_or(host_id)
    }

    /// Public half of the planted ed25519 host key.
    pub fn host_public_key(&self, host_id: &str) -> [u8; 32] {
        Sha256::digest(format!("simnet-hostkey:{}", self.seed(host_id)).as_bytes()).into()
    }

    pub fn host_key(&self, host_id: &str) -> SshHostKey {
        SshHostKey::ed25519(&self.host_public_key(host_id))
    }

    /// The KEXINIT every interface of the host sends. Both directions
    /// carry the same lists.
    pub fn kexinit(&self, host_id: &str) -> SshKexInit {
        let digest: [u8; 32] =
            Sha256::digest(format!("simnet-cookie:{}", self.seed(host_id)).as_bytes()).into();
        let mut cookie = [0u8; 16];
        cookie.copy_from_slice(&digest[..16]);
        let kex = match self.behavior {
            SshBehavior::NoCurve => self
                .kex_algorithms
                .iter()
                .filter(|k| !SUPPORTED_KEX.contains(&k.as_str()))
                .cloned()
                .collect(),
            _ => self.kex_algorithms.clone(),
        };
        SshKexInit {
            cookie,
            kex_algorithms: kex,
            server_host_key_algorithms: self.host_key_algorithms.clone(),
            encryption_c2s: self.encryption.clone(),
            encryption_s2c: self.encryption.clone(),
            mac_c2s: self.mac.clone(),
            mac_s2c: self.mac.clone(),
            compression_c2s: self.compression.clone(),
            compression_s2c: self.compression.clone(),
            languages_c2s: vec![],
            languages_s2c: vec![],
            first_kex_packet_follows: false,
            reserved: 0,
        }
    }

    pub fn parsed_banner(&self) -> Result<SshBanner, String> {
        parse_ssh_banner(self.banner.as_bytes()).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapabilitySpec {
    pub code: u8,
    /// Hex-encoded value; empty by default.
    #[serde(default)]
    pub value: String,
}

fn default_version() -> u8 {
    4
}
fn default_hold() -> u16 {
    90
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BgpProfile {
    #[serde(default = "default_version")]
    pub version: u8,
    pub my_as: u16,
    #[serde(default = "default_hold")]
    pub hold_time: u16,
    pub bgp_identifier: Ipv4Addr,
    #[serde(default)]
    pub capabilities: Vec<CapabilitySpec>,
    #[serde(default)]
    pub behavior: BgpBehavior,
}

impl BgpProfile {
    pub fn open(&self) -> Result<BgpOpen, String> {
        let caps = self
            .capabilities
            .iter()
            .map(|c| {
                hex::decode(&c.value)
                    .map(|v| Capability::new(c.code, v))
                    .map_err(|e| format!("capability {} value: {e}", c.code))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BgpOpen::new(
            self.version,
            self.my_as,
            self.hold_time,
            self.bgp_identifier,
            caps,
            vec![],
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HostSpec {
    pub id: String,
    pub interfaces: Vec<IpAddr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ssh: Option<SshProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bgp: Option<BgpProfile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrefixSpec {
    pub prefix: IpNet,
    pub asn: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetSpec {
    #[serde(default, rename = "host")]
    pub hosts: Vec<HostSpec>,
    #[serde(default, rename = "prefix", skip_serializing_if = "Vec::is_empty")]
    pub prefixes: Vec<PrefixSpec>,
}

impl FleetSpec {
    pub fn from_toml(text: &str) -> Result<FleetSpec, FleetSpecError> {
        let spec: FleetSpec =
            toml::from_str(text).map_err(|e| FleetSpecError::Parse(e.to_string()))?;
        spec.check()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<FleetSpec, FleetSpecError> {
        let text = std::fs::read_to_string(path).map_err(|source| FleetSpecError::Unreadable {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("fleet spec serializes")
    }

    pub fn check(&self) -> Result<(), FleetSpecError> {
        let mut ids = BTreeSet::new();
        let mut seen = BTreeSet::new();
        for h in &self.hosts {
            if !ids.insert(&h.id) {
                return Err(FleetSpecError::DuplicateHost(h.id.clone()));
            }
            if h.interfaces.is_empty() {
                return Err(FleetSpecError::NoInterfaces(h.id.clone()));
            }
            for a in &h.interfaces {
                if !seen.insert(*a) {
                    return Err(FleetSpecError::DuplicateAddress(*a));
                }
            }
            let bad = |message: String| FleetSpecError::BadProfile {
                host: h.id.clone(),
                message,
            };
            if let Some(ssh) = &h.ssh {
                ssh.parsed_banner().map_err(bad)?;
            }
            if let Some(bgp) = &h.bgp {
                bgp.open().map_err(bad)?;
            }
        }
        Ok(())
    }

    pub fn listener_count(&self) -> usize {
        self.hosts
            .iter()
            .map(|h| h.interfaces.len() * (h.ssh.is_some() as usize + h.bgp.is_some() as usize))
            .sum()
    }

    /// Every (address, protocol) the fleet serves.
    pub fn endpoints(&self) -> Vec<(IpAddr, Protocol)> {
        let mut out = Vec::new();
        for h in &self.hosts {
            for a in &h.interfaces {
                if h.ssh.is_some() {
                    out.push((*a, Protocol::Ssh));
                }
                if h.bgp.is_some() {
                    out.push((*a, Protocol::Bgp));
                }
            }
        }
        out
    }

    pub fn all_addresses(&self) -> Vec<IpAddr> {
        self.hosts
            .iter()
            .flat_map(|h| h.interfaces.iter().copied())
            .collect()
    }

    pub fn prefix_table(&self) -> PrefixTable {
        let mut t = PrefixTable::new();
        for p in &self.prefixes {
            t.insert(p.prefix, p.asn);
        }
        t.provenance = "fleet spec".into();
        t
    }
}

/// What a prober can learn from a host over one protocol, as the
/// canonical identifier string it would produce. `None` when the host
/// yields no identifier for that protocol.
pub fn observable_identifier(
    host: &HostSpec,
    protocol: Protocol,
    mode: SshListMode,
) -> Option<String> {
    match protocol {
        Protocol::Ssh => {
            let ssh = host.ssh.as_ref()?;
            let banner = ssh.parsed_banner().ok()?;
            match ssh.behavior {
                SshBehavior::ImmediateClose => None,
                SshBehavior::BannerThenSilent => Some(ssh_canonical(&banner, None, None, mode)),
                SshBehavior::Normal => Some(ssh_canonical(
                    &banner,
                    Some(&ssh.kexinit(&host.id)),
                    Some(&ssh.host_key(&host.id)),
                    mode,
                )),
                SshBehavior::KexinitTwice | SshBehavior::NoCurve => Some(ssh_canonical(
                    &banner,
                    Some(&ssh.kexinit(&host.id)),
                    None,
                    mode,
                )),
            }
        }
        Protocol::Bgp => {
            let bgp = host.bgp.as_ref()?;
            match bgp.behavior {
                BgpBehavior::OpenThenNotify => bgp.open().ok().map(|o| bgp_canonical(&o)),
                BgpBehavior::ImmediateClose | BgpBehavior::Silent => None,
            }
        }
    }
}

/// Hosts whose observable identifiers coincide and therefore cannot be
/// told apart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionCase {
    pub hosts: Vec<String>,
    pub addresses: BTreeSet<IpAddr>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct GroundTruth {
    /// One set per host that exposes at least one identifier.
    pub host_sets: Vec<BTreeSet<IpAddr>>,
    /// What identifier-based grouping should produce: host sets joined
    /// wherever hosts share an identifier.
    pub expected_sets: Vec<BTreeSet<IpAddr>>,
    pub expected_dual_stack: Vec<BTreeSet<IpAddr>>,
    pub dual_stack_histogram: DualStackHistogram,
    pub confusion: Vec<ConfusionCase>,
    /// Per host id: addresses and the protocols that identify it.
    pub identified_by: BTreeMap<String, BTreeSet<Protocol>>,
}

pub fn ground_truth_sets(spec: &FleetSpec, mode: SshListMode) -> GroundTruth {
    let mut truth = GroundTruth::default();
    let visible: Vec<(usize, BTreeSet<Protocol>)> = spec
        .hosts
        .iter()
        .enumerate()
        .filter_map(|(i, h)| {
            let protos: BTreeSet<Protocol> = [Protocol::Ssh, Protocol::Bgp]
                .into_iter()
                .filter(|p| observable_identifier(h, *p, mode).is_some())
                .collect();
            (!protos.is_empty()).then_some((i, protos))
        })
        .collect();

    let mut uf = DisjointSets::new(visible.len());
    let mut owner: BTreeMap<(Protocol, String), usize> = BTreeMap::new();
    for (slot, (i, protos)) in visible.iter().enumerate() {
        let host = &spec.hosts[*i];
        truth.identified_by.insert(host.id.clone(), protos.clone());
        truth
            .host_sets
            .push(host.interfaces.iter().copied().collect());
        for p in protos {
            let id = observable_identifier(host, *p, mode).expect("visible");
            match owner.get(&(*p, id.clone())) {
                Some(&other) => {
                    uf.union(slot, other);
                }
                None => {
                    owner.insert((*p, id), slot);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for slot in 0..visible.len() {
        groups.entry(uf.find(slot)).or_default().push(slot);
    }
    for members in groups.values() {
        let addrs: BTreeSet<IpAddr> = members
            .iter()
            .flat_map(|&s| spec.hosts[visible[s].0].interfaces.iter().copied())
            .collect();
        if members.len() > 1 {
            truth.confusion.push(ConfusionCase {
                hosts: members
                    .iter()
                    .map(|&s| spec.hosts[visible[s].0].id.clone())
                    .collect(),
                addresses: addrs.clone(),
            });
        }
        let v4 = addrs.iter().filter(|a| a.is_ipv4()).count();
        let v6 = addrs.len() - v4;
        if v4 > 0 && v6 > 0 {
            truth.dual_stack_histogram.add(v4, v6);
            truth.expected_dual_stack.push(addrs.clone());
        }
        truth.expected_sets.push(addrs);
    }
    truth.host_sets.sort();
    truth.expected_sets.sort();
    truth.expected_dual_stack.sort();
    truth
}
