//! Composite host identifiers and their digests.
//!
//! An identifier is a canonical string built from host-wide handshake
//! fields, plus its digest. Addresses with equal digests are grouped.
//!
//! Canonical layouts (fields separated by `|`):
//!
//! ```text
//! ssh|<banner>|<kex>|<hostkey algs>|<enc s2c>|<mac s2c>|<comp s2c>|<key>
//! ssh+c2s|<banner>|<kex>|<hostkey algs>|<enc s2c>|<mac s2c>|<comp s2c>|<enc c2s>|<mac c2s>|<comp c2s>|<key>
//! ssh|<banner>|nokex|<key>                       (banner only)
//! bgp|<length>|<version>|<my_as>|<hold>|<bgp id>|<opt len>|<caps>|<opaque params hex>
//! external|<label>|<digest>
//! ```
//!
//! Text is escaped byte-wise: `%`, `|`, `,`, `:`, control bytes and bytes
//! above 0x7e become `%XX`. Every name in a list is followed by `,`; `<key>`
//! is `<type>:<blob hex>` or `absent`; each capability is `code:len:hex,`.
//! Escaping makes the delimiters unambiguous, so distinct field tuples give
//! distinct strings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::net::IpAddr;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::ingest::ExternalIdentifierRecord;
use crate::record::{Protocol, ScanRecord, Source};
use crate::wire::{BgpOpen, SshBanner, SshHostKey, SshKexInit};

pub const IDENTIFIER_DUMP_SCHEMA_VERSION: u32 = 1;

/// Addresses per identifier above which the identifier is flagged as a
/// possible factory-default key.
pub const DEFAULT_KEY_SUSPECT_THRESHOLD: usize = 256;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdentityError {
    #[error("insufficient artifacts: {0}")]
    InsufficientArtifacts(&'static str),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProtocolLabel {
    Ssh,
    Bgp,
    External(String),
}

impl From<Protocol> for ProtocolLabel {
    fn from(p: Protocol) -> Self {
        match p {
            Protocol::Ssh => ProtocolLabel::Ssh,
            Protocol::Bgp => ProtocolLabel::Bgp,
        }
    }
}

impl fmt::Display for ProtocolLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtocolLabel::Ssh => f.write_str("ssh"),
            ProtocolLabel::Bgp => f.write_str("bgp"),
            ProtocolLabel::External(l) => write!(f, "external:{l}"),
        }
    }
}

impl FromStr for ProtocolLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ssh" => Ok(ProtocolLabel::Ssh),
            "bgp" => Ok(ProtocolLabel::Bgp),
            other => match other.strip_prefix("external:") {
                Some(label) if !label.is_empty() => Ok(ProtocolLabel::External(label.to_string())),
                _ => Err(format!("unknown protocol label {other:?}")),
            },
        }
    }
}

impl Serialize for ProtocolLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ProtocolLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

/// SHA-256 of a canonical identifier string.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub fn of(canonical: &str) -> Digest {
        Digest(Sha256::digest(canonical.as_bytes()).into())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &hex::encode(self.0)[..12])
    }
}

impl FromStr for Digest {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s).map_err(|e| format!("digest: {e}"))?;
        let arr: [u8; 32] = bytes
            .try_into()
            .map_err(|_| "digest must be 32 bytes".to_string())?;
        Ok(Digest(arr))
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Completeness {
    Full,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HostIdentifier {
    pub protocol_label: ProtocolLabel,
    pub canonical_string: String,
    pub digest: Digest,
    pub completeness: Completeness,
}

impl HostIdentifier {
    fn new(label: ProtocolLabel, canonical: String, completeness: Completeness) -> Self {
        HostIdentifier {
            protocol_label: label,
            digest: Digest::of(&canonical),
            canonical_string: canonical,
            completeness,
        }
    }
}

/// Which SSH algorithm lists enter the identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SshListMode {
    /// Server-to-client lists only.
    #[default]
    ServerToClient,
    /// Server-to-client followed by client-to-server lists.
    BothDirections,
}

fn escape_into(out: &mut String, bytes: &[u8]) {
    for &b in bytes {
        if matches!(b, b'%' | b'|' | b',' | b':') || !(0x20..=0x7e).contains(&b) {
            out.push_str(&format!("%{b:02X}"));
        } else {
            out.push(b as char);
        }
    }
}

fn push_list(out: &mut String, names: &[String]) {
    out.push('|');
    for name in names {
        escape_into(out, name.as_bytes());
        out.push(',');
    }
}

/// The algorithm-list part of an SSH identifier.
fn ssh_capability_fields(kexinit: &SshKexInit, mode: SshListMode) -> String {
    let mut out = String::new();
    push_list(&mut out, &kexinit.kex_algorithms);
    push_list(&mut out, &kexinit.server_host_key_algorithms);
    push_list(&mut out, &kexinit.encryption_s2c);
    push_list(&mut out, &kexinit.mac_s2c);
    push_list(&mut out, &kexinit.compression_s2c);
    if mode == SshListMode::BothDirections {
        push_list(&mut out, &kexinit.encryption_c2s);
        push_list(&mut out, &kexinit.mac_c2s);
        push_list(&mut out, &kexinit.compression_c2s);
    }
    out
}

/// Canonical SSH identifier string from its parts.
pub fn ssh_canonical(
    banner: &SshBanner,
    kexinit: Option<&SshKexInit>,
    hostkey: Option<&SshHostKey>,
    mode: SshListMode,
) -> String {
    let mut out = String::from(match mode {
        SshListMode::ServerToClient => "ssh|",
        SshListMode::BothDirections => "ssh+c2s|",
    });
    escape_into(&mut out, &banner.raw_line);
    match kexinit {
        Some(k) => out.push_str(&ssh_capability_fields(k, mode)),
        None => out.push_str("|nokex"),
    }
    out.push('|');
    match hostkey {
        Some(key) => {
            escape_into(&mut out, key.key_type.as_bytes());
            out.push(':');
            out.push_str(&hex::encode(&key.key_blob));
        }
        None => out.push_str("absent"),
    }
    out
}

pub fn build_ssh_identifier(
    record: &ScanRecord,
    mode: SshListMode,
) -> Result<HostIdentifier, IdentityError> {
    if record.protocol() != Protocol::Ssh {
        return Err(IdentityError::InsufficientArtifacts("not an ssh record"));
    }
    let ssh = record
        .ssh
        .as_ref()
        .ok_or(IdentityError::InsufficientArtifacts("no ssh banner"))?;
    let canonical = ssh_canonical(
        &ssh.banner,
        ssh.kexinit.as_ref(),
        ssh.hostkey.as_ref(),
        mode,
    );
    let completeness = if ssh.kexinit.is_some() && ssh.hostkey.is_some() {
        Completeness::Full
    } else {
        Completeness::Partial
    };
    Ok(HostIdentifier::new(
        ProtocolLabel::Ssh,
        canonical,
        completeness,
    ))
}

pub fn bgp_canonical(open: &BgpOpen) -> String {
    let mut out = format!(
        "bgp|{}|{}|{}|{}|{}|{}|",
        open.length,
        open.version,
        open.my_as,
        open.hold_time,
        open.bgp_identifier,
        open.opt_params_length
    );
    for cap in &open.capabilities {
        out.push_str(&format!(
            "{}:{}:{},",
            cap.code,
            cap.length,
            hex::encode(&cap.value)
        ));
    }
    out.push('|');
    out.push_str(&hex::encode(&open.raw_optional_params));
    out
}

/// BGP identifier from the OPEN fields. NOTIFICATION content is a
/// connection outcome and does not take part.
pub fn build_bgp_identifier(record: &ScanRecord) -> Result<HostIdentifier, IdentityError> {
    let open = record
        .bgp
        .as_ref()
        .and_then(|b| b.open.as_ref())
        .ok_or(IdentityError::InsufficientArtifacts("no BGP OPEN"))?;
    Ok(HostIdentifier::new(
        ProtocolLabel::Bgp,
        bgp_canonical(open),
        Completeness::Full,
    ))
}

pub fn build_external_identifier(rec: &ExternalIdentifierRecord) -> HostIdentifier {
    let mut canonical = String::from("external|");
    escape_into(&mut canonical, rec.protocol_label.as_bytes());
    canonical.push('|');
    escape_into(&mut canonical, rec.digest.as_bytes());
    HostIdentifier::new(
        ProtocolLabel::External(rec.protocol_label.clone()),
        canonical,
        Completeness::Full,
    )
}

/// One (address, identifier) pair: a row of the identifier dump.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mapping {
    pub address: IpAddr,
    pub protocol_label: ProtocolLabel,
    pub digest: Digest,
    pub completeness: Completeness,
    /// Not part of the dump; known only when mappings come from records.
    #[serde(skip)]
    pub sources: BTreeSet<Source>,
}

impl Mapping {
    pub fn new(address: IpAddr, label: ProtocolLabel, digest: Digest) -> Self {
        Mapping {
            address,
            protocol_label: label,
            digest,
            completeness: Completeness::Full,
            sources: BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExtractionConfig {
    pub ssh_mode: SshListMode,
    pub default_key_threshold: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        ExtractionConfig {
            ssh_mode: SshListMode::ServerToClient,
            default_key_threshold: DEFAULT_KEY_SUSPECT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CompletenessCounts {
    pub full: usize,
    pub partial: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DefaultKeySuspect {
    pub protocol_label: ProtocolLabel,
    pub digest: Digest,
    pub addresses: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ExtractionReport {
    pub records_seen: usize,
    pub records_without_identifier: usize,
    /// Distinct (address, identifier) mappings by protocol label.
    pub by_protocol: BTreeMap<String, CompletenessCounts>,
    /// SSH host keys seen on two or more addresses.
    pub shared_key_hosts: usize,
    /// Of those, keys whose addresses advertise differing algorithm lists.
    pub shared_key_hosts_with_differing_capabilities: usize,
    pub differing_capabilities_fraction: f64,
    pub default_key_suspects: Vec<DefaultKeySuspect>,
    /// Addresses carrying more than one identifier for the same protocol.
    pub unstable_addresses: Vec<IpAddr>,
}

#[derive(Debug, Clone, Default)]
pub struct Extraction {
    pub identifiers: Vec<(IpAddr, HostIdentifier)>,
    pub mappings: Vec<Mapping>,
    pub report: ExtractionReport,
}

/// Maps every record that carries identifier artifacts, plus external
/// identifier rows, to (address, identifier) pairs.
pub fn extract_identifiers(
    records: &[ScanRecord],
    external: &[ExternalIdentifierRecord],
    cfg: &ExtractionConfig,
) -> Extraction {
    let mut report = ExtractionReport {
        records_seen: records.len() + external.len(),
        ..Default::default()
    };
    let mut by_key: BTreeMap<(IpAddr, ProtocolLabel, Digest), (HostIdentifier, BTreeSet<Source>)> =
        BTreeMap::new();
    // host key -> (addresses, capability strings)
    let mut keys: BTreeMap<&SshHostKey, (BTreeSet<IpAddr>, BTreeSet<String>)> = BTreeMap::new();

    for rec in records {
        let built = match rec.protocol() {
            Protocol::Ssh => build_ssh_identifier(rec, cfg.ssh_mode),
            Protocol::Bgp => build_bgp_identifier(rec),
        };
        let Ok(id) = built else {
            report.records_without_identifier += 1;
            continue;
        };
        if let Some(ssh) = &rec.ssh {
            if let (Some(key), Some(kex)) = (&ssh.hostkey, &ssh.kexinit) {
                let entry = keys.entry(key).or_default();
                entry.0.insert(rec.address());
                entry.1.insert(ssh_capability_fields(kex, cfg.ssh_mode));
            }
        }
        by_key
            .entry((rec.address(), id.protocol_label.clone(), id.digest))
            .or_insert_with(|| (id, BTreeSet::new()))
            .1
            .insert(rec.source);
    }
    for ext in external {
        let id = build_external_identifier(ext);
        by_key
            .entry((ext.address, id.protocol_label.clone(), id.digest))
            .or_insert_with(|| (id, BTreeSet::new()))
            .1
            .insert(Source::Imported);
    }

    let shared: Vec<_> = keys
        .values()
        .filter(|(addrs, _)| addrs.len() >= 2)
        .collect();
    report.shared_key_hosts = shared.len();
    report.shared_key_hosts_with_differing_capabilities =
        shared.iter().filter(|(_, caps)| caps.len() > 1).count();
    report.differing_capabilities_fraction = if shared.is_empty() {
        0.0
    } else {
        report.shared_key_hosts_with_differing_capabilities as f64 / shared.len() as f64
    };

    let mut per_digest: BTreeMap<(&ProtocolLabel, Digest), usize> = BTreeMap::new();
    let mut per_addr_proto: BTreeMap<(IpAddr, &ProtocolLabel), usize> = BTreeMap::new();
    for ((addr, label, digest), (id, _)) in &by_key {
        *per_digest.entry((label, *digest)).or_default() += 1;
        *per_addr_proto.entry((*addr, label)).or_default() += 1;
        let counts = report.by_protocol.entry(label.to_string()).or_default();
        match id.completeness {
            Completeness::Full => counts.full += 1,
            Completeness::Partial => counts.partial += 1,
        }
    }
    report.default_key_suspects = per_digest
        .iter()
        .filter(|(_, n)| **n > cfg.default_key_threshold)
        .map(|((label, digest), n)| DefaultKeySuspect {
            protocol_label: (*label).clone(),
            digest: *digest,
            addresses: *n,
        })
        .collect();
    let unstable: BTreeSet<IpAddr> = per_addr_proto
        .iter()
        .filter(|(_, n)| **n > 1)
        .map(|((addr, _), _)| *addr)
        .collect();
    report.unstable_addresses = unstable.into_iter().collect();

    let mut identifiers = Vec::with_capacity(by_key.len());
    let mut mappings = Vec::with_capacity(by_key.len());
    for ((addr, _, _), (id, sources)) in by_key {
        mappings.push(Mapping {
            address: addr,
            protocol_label: id.protocol_label.clone(),
            digest: id.digest,
            completeness: id.completeness,
            sources,
        });
        identifiers.push((addr, id));
    }
    Extraction {
        identifiers,
        mappings,
        report,
    }
}

/// Writes the `address,protocol_label,digest,completeness` dump in the
/// order given.
pub fn write_identifier_dump<W: Write>(out: W, mappings: &[Mapping]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for m in mappings {
        w.serialize(m)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_identifier_dump<R: Read>(input: R) -> csv::Result<Vec<Mapping>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    rdr.deserialize().collect()
}
