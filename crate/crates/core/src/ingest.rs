//! Loading and normalising record inputs.
//!
//! Three kinds of input end up in one [`RecordStore`]:
//!
//! * our own scan records (JSONL, one [`ScanRecord`] per line);
//! * external service snapshots, a declared subset of a Censys-like JSON
//!   layout (see [`ExternalServiceRecord`]), converted to records tagged
//!   [`Source::Imported`];
//! * external identifier CSV files (`address,protocol_label,digest,source`)
//!   produced by other alias techniques such as SNMPv3 engine IDs.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{IpAddr, Ipv4Addr};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asn::PrefixTable;
use crate::record::{
    BgpArtifacts, ProbeTarget, Protocol, ScanRecord, ScanStatus, Source, SshArtifacts,
};
use crate::wire::{parse_ssh_banner, BgpOpen, Capability, SshHostKey, SshKexInit};

/// Version of the external service subset accepted by [`import_external_services`].
pub const EXTERNAL_SERVICE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Unreadable { path: String, source: io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// A problem with one input line. Lines are 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineError {
    pub line: usize,
    pub message: String,
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(|source| IngestError::Unreadable {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Default)]
pub struct LoadReport {
    pub records: Vec<ScanRecord>,
    pub malformed: Vec<LineError>,
}

pub fn load_scan_records(path: &Path) -> Result<LoadReport, IngestError> {
    let file = open(path)?;
    read_scan_records(BufReader::new(file)).map_err(|source| IngestError::Unreadable {
        path: path.display().to_string(),
        source,
    })
}

/// Reads JSONL scan records. Unknown fields are ignored; lines that fail to
/// parse or violate record invariants are skipped and reported.
pub fn read_scan_records<R: BufRead>(reader: R) -> io::Result<LoadReport> {
    let mut report = LoadReport::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed = serde_json::from_str::<ScanRecord>(&line)
            .map_err(|e| e.to_string())
            .and_then(|rec| rec.validate().map(|_| rec));
        match parsed {
            Ok(rec) => report.records.push(rec),
            Err(message) => report.malformed.push(LineError {
                line: idx + 1,
                message,
            }),
        }
    }
    Ok(report)
}

pub fn write_scan_record<W: Write>(mut out: W, record: &ScanRecord) -> io::Result<()> {
    serde_json::to_writer(&mut out, record)?;
    out.write_all(b"\n")
}

pub fn write_scan_records<'a, W: Write>(
    mut out: W,
    records: impl IntoIterator<Item = &'a ScanRecord>,
) -> io::Result<()> {
    for rec in records {
        write_scan_record(&mut out, rec)?;
    }
    out.flush()
}

/// Records deduplicated by full content, in insertion order.
#[derive(Debug, Default, Clone)]
pub struct RecordStore {
    records: Vec<ScanRecord>,
    seen: HashSet<ScanRecord>,
}

impl RecordStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns false when an identical record is already stored.
    pub fn insert(&mut self, record: ScanRecord) -> bool {
        if self.seen.contains(&record) {
            return false;
        }
        self.seen.insert(record.clone());
        self.records.push(record);
        true
    }

    pub fn extend(&mut self, records: impl IntoIterator<Item = ScanRecord>) -> usize {
        records
            .into_iter()
            .filter(|r| self.insert(r.clone()))
            .count()
    }

    pub fn records(&self) -> &[ScanRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl FromIterator<ScanRecord> for RecordStore {
    fn from_iter<T: IntoIterator<Item = ScanRecord>>(iter: T) -> Self {
        let mut store = RecordStore::new();
        store.extend(iter);
        store
    }
}

// ---------------------------------------------------------------------------
// External service snapshots

/// One line of an external service snapshot. Only this subset is read;
/// anything else on the line is ignored.
#[derive(Debug, Clone, Deserialize)]
pub struct ExternalServiceRecord {
    pub ip: IpAddr,
    pub port: u16,
    pub service_name: String,
    #[serde(default)]
    pub snapshot_date: Option<String>,
    #[serde(default)]
    pub ssh: Option<ExternalSsh>,
    #[serde(default)]
    pub bgp: Option<ExternalBgp>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ExternalSsh {
    pub banner: String,
    #[serde(default)]
    pub kex_init: Option<ExternalKexInit>,
    #[serde(default)]
    pub host_key: Option<ExternalHostKey>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct ExternalKexInit {
    pub kex_algorithms: Vec<String>,
    pub host_key_algorithms: Vec<String>,
    pub encryption_client_to_server: Vec<String>,
    pub encryption_server_to_client: Vec<String>,
    pub mac_client_to_server: Vec<String>,
    pub mac_server_to_client: Vec<String>,
    pub compression_client_to_server: Vec<String>,
    pub compression_server_to_client: Vec<String>,
    pub languages_client_to_server: Vec<String>,
    pub languages_server_to_client: Vec<String>,
    pub first_kex_follows: bool,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ExternalHostKey {
    /// Full wire-format public key blob, hex.
    pub key_blob_hex: String,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ExternalBgp {
    #[serde(default)]
    pub open: Option<ExternalOpen>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ExternalOpen {
    pub version: u8,
    pub my_as: u16,
    pub hold_time: u16,
    pub bgp_identifier: Ipv4Addr,
    #[serde(default)]
    pub length: Option<u16>,
    #[serde(default)]
    pub opt_params_length: Option<u8>,
    #[serde(default)]
    pub capabilities: Vec<ExternalCapability>,
    #[serde(default)]
    pub raw_optional_params_hex: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ExternalCapability {
    pub code: u8,
    #[serde(default)]
    pub value_hex: String,
}

#[derive(Debug, Clone, Copy)]
pub struct ImportOptions {
    /// Drop records not on port 22 (SSH) or 179 (BGP).
    pub port_filter: bool,
    /// IPv6 snapshot data is opt-in.
    pub allow_ipv6: bool,
}

impl Default for ImportOptions {
    fn default() -> Self {
        ImportOptions {
            port_filter: true,
            allow_ipv6: false,
        }
    }
}

#[derive(Debug, Default)]
pub struct ImportReport {
    pub records: Vec<ScanRecord>,
    pub dropped_port: usize,
    pub dropped_ipv6: usize,
    pub schema_mismatch: Vec<LineError>,
}

pub fn import_external_services(
    path: &Path,
    opts: ImportOptions,
) -> Result<ImportReport, IngestError> {
    let file = open(path)?;
    read_external_services(BufReader::new(file), opts).map_err(|source| IngestError::Unreadable {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_external_services<R: BufRead>(
    reader: R,
    opts: ImportOptions,
) -> io::Result<ImportReport> {
    let mut report = ImportReport::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mismatch = |message: String| LineError {
            line: idx + 1,
            message,
        };
        let ext: ExternalServiceRecord = match serde_json::from_str(&line) {
            Ok(e) => e,
            Err(e) => {
                report.schema_mismatch.push(mismatch(e.to_string()));
                continue;
            }
        };
        let protocol: Protocol = match ext.service_name.parse() {
            Ok(p) => p,
            Err(e) => {
                report.schema_mismatch.push(mismatch(e));
                continue;
            }
        };
        if opts.port_filter && ext.port != protocol.default_port() {
            report.dropped_port += 1;
            continue;
        }
        if ext.ip.is_ipv6() && !opts.allow_ipv6 {
            report.dropped_ipv6 += 1;
            continue;
        }
        match convert_external(&ext, protocol) {
            Ok(rec) => report.records.push(rec),
            Err(message) => report.schema_mismatch.push(mismatch(message)),
        }
    }
    Ok(report)
}

fn snapshot_timestamp(date: Option<&str>) -> Result<u64, String> {
    let Some(date) = date else { return Ok(0) };
    let day = chrono::NaiveDate::parse_from_str(date, "%Y-%m-%d")
        .map_err(|e| format!("snapshot_date {date:?}: {e}"))?;
    let secs = day
        .and_hms_opt(0, 0, 0)
        .expect("midnight exists")
        .and_utc()
        .timestamp();
    u64::try_from(secs).map_err(|_| format!("snapshot_date {date:?} before 1970"))
}

fn convert_external(ext: &ExternalServiceRecord, protocol: Protocol) -> Result<ScanRecord, String> {
    let target = ProbeTarget {
        address: ext.ip,
        port: ext.port,
        protocol,
    };
    let ts = snapshot_timestamp(ext.snapshot_date.as_deref())?;
    match protocol {
        Protocol::Ssh => {
            let ssh = ext.ssh.as_ref().ok_or("ssh service without ssh object")?;
            let banner = parse_ssh_banner(ssh.banner.as_bytes()).map_err(|e| e.to_string())?;
            let kexinit = ssh.kex_init.as_ref().map(|k| SshKexInit {
                cookie: [0; 16],
                kex_algorithms: k.kex_algorithms.clone(),
                server_host_key_algorithms: k.host_key_algorithms.clone(),
                encryption_c2s: k.encryption_client_to_server.clone(),
                encryption_s2c: k.encryption_server_to_client.clone(),
                mac_c2s: k.mac_client_to_server.clone(),
                mac_s2c: k.mac_server_to_client.clone(),
                compression_c2s: k.compression_client_to_server.clone(),
                compression_s2c: k.compression_server_to_client.clone(),
                languages_c2s: k.languages_client_to_server.clone(),
                languages_s2c: k.languages_server_to_client.clone(),
                first_kex_packet_follows: k.first_kex_follows,
                reserved: 0,
            });
            let hostkey = match &ssh.host_key {
                Some(hk) => {
                    let blob =
                        hex::decode(&hk.key_blob_hex).map_err(|e| format!("host key hex: {e}"))?;
                    Some(SshHostKey::from_blob(&blob).map_err(|e| e.to_string())?)
                }
                None => None,
            };
            let status = if kexinit.is_some() && hostkey.is_some() {
                ScanStatus::FullHandshake
            } else {
                ScanStatus::BannerOnly
            };
            let mut rec = ScanRecord::empty(target, status, ts, Source::Imported);
            rec.ssh = Some(SshArtifacts {
                banner,
                kexinit,
                hostkey_unavailable: hostkey.is_none(),
                hostkey,
            });
            Ok(rec)
        }
        Protocol::Bgp => {
            let open = ext
                .bgp
                .as_ref()
                .and_then(|b| b.open.as_ref())
                .ok_or("bgp service without OPEN fields")?;
            let caps = open
                .capabilities
                .iter()
                .map(|c| {
                    hex::decode(&c.value_hex)
                        .map(|v| Capability::new(c.code, v))
                        .map_err(|e| format!("capability hex: {e}"))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let raw = match &open.raw_optional_params_hex {
                Some(h) => hex::decode(h).map_err(|e| format!("optional params hex: {e}"))?,
                None => Vec::new(),
            };
            let mut decoded = BgpOpen::new(
                open.version,
                open.my_as,
                open.hold_time,
                open.bgp_identifier,
                caps,
                raw,
            );
            // observed lengths win over the recomputed layout
            if let Some(len) = open.length {
                decoded.length = len;
            }
            if let Some(len) = open.opt_params_length {
                decoded.opt_params_length = len;
            }
            let mut rec =
                ScanRecord::empty(target, ScanStatus::FullHandshake, ts, Source::Imported);
            rec.bgp = Some(BgpArtifacts {
                open: Some(decoded),
                notification: None,
                raw: Vec::new(),
            });
            Ok(rec)
        }
    }
}

// ---------------------------------------------------------------------------
// External identifier records

/// An identifier produced by another technique (the SNMPv3 bridge).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExternalIdentifierRecord {
    pub address: IpAddr,
    pub protocol_label: String,
    pub digest: String,
    pub source: String,
}

#[derive(Debug, Default)]
pub struct ExternalIdentifierLoad {
    pub records: Vec<ExternalIdentifierRecord>,
    pub rejected: Vec<LineError>,
}

pub fn load_external_identifiers(path: &Path) -> Result<ExternalIdentifierLoad, IngestError> {
    read_external_identifiers(open(path)?)
}

pub fn read_external_identifiers<R: Read>(
    reader: R,
) -> Result<ExternalIdentifierLoad, IngestError> {
    let mut out = ExternalIdentifierLoad::default();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    for (idx, row) in rdr.deserialize::<ExternalIdentifierRecord>().enumerate() {
        // header is line 1
        let line = idx + 2;
        match row {
            Ok(rec) if rec.digest.is_empty() => out.rejected.push(LineError {
                line,
                message: "empty digest".into(),
            }),
            Ok(rec) if rec.protocol_label.is_empty() => out.rejected.push(LineError {
                line,
                message: "empty protocol_label".into(),
            }),
            Ok(rec) => out.records.push(rec),
            Err(e) => out.rejected.push(LineError {
                line,
                message: e.to_string(),
            }),
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Source merging

/// One row of the dataset overview: responsive addresses per source.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapRow {
    /// `ssh`, `bgp` or `union`.
    pub protocol: String,
    /// `ipv4` or `ipv6`.
    pub family: String,
    pub active_ips: usize,
    pub imported_ips: usize,
    pub union_ips: usize,
    pub overlap_ips: usize,
    pub active_asns: Option<usize>,
    pub imported_asns: Option<usize>,
    pub union_asns: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct OverlapStats {
    pub rows: Vec<OverlapRow>,
}

impl OverlapStats {
    pub fn row(&self, protocol: &str, family: &str) -> Option<&OverlapRow> {
        self.rows
            .iter()
            .find(|r| r.protocol == protocol && r.family == family)
    }
}

pub fn family_name(addr: &IpAddr) -> &'static str {
    if addr.is_ipv4() {
        "ipv4"
    } else {
        "ipv6"
    }
}

/// Unions active and imported observations. Both observations of an
/// address are kept; identical records collapse.
pub fn merge_sources(
    active: impl IntoIterator<Item = ScanRecord>,
    imported: impl IntoIterator<Item = ScanRecord>,
    table: Option<&PrefixTable>,
) -> (RecordStore, OverlapStats) {
    let mut store = RecordStore::new();
    store.extend(active);
    store.extend(imported);
    let stats = overlap_stats(store.records(), table);
    (store, stats)
}

pub fn overlap_stats(records: &[ScanRecord], table: Option<&PrefixTable>) -> OverlapStats {
    // (protocol, family, source) -> responsive addresses
    let mut seen: BTreeMap<(&str, &str, Source), BTreeSet<IpAddr>> = BTreeMap::new();
    for rec in records.iter().filter(|r| r.is_responsive()) {
        let fam = family_name(&rec.address());
        for proto in [rec.protocol().as_str(), "union"] {
            seen.entry((proto, fam, rec.source))
                .or_default()
                .insert(rec.address());
        }
    }
    let asns = |addrs: &BTreeSet<IpAddr>| {
        table.map(|t| {
            addrs
                .iter()
                .filter_map(|a| t.lookup(*a))
                .collect::<BTreeSet<u32>>()
                .len()
        })
    };
    let empty = BTreeSet::new();
    let mut rows = Vec::new();
    for fam in ["ipv4", "ipv6"] {
        for proto in ["ssh", "bgp", "union"] {
            let act = seen.get(&(proto, fam, Source::Active)).unwrap_or(&empty);
            let imp = seen.get(&(proto, fam, Source::Imported)).unwrap_or(&empty);
            let union: BTreeSet<IpAddr> = act.union(imp).copied().collect();
            rows.push(OverlapRow {
                protocol: proto.into(),
                family: fam.into(),
                active_ips: act.len(),
                imported_ips: imp.len(),
                union_ips: union.len(),
                overlap_ips: act.intersection(imp).count(),
                active_asns: asns(act),
                imported_asns: asns(imp),
                union_asns: asns(&union),
            });
        }
    }
    OverlapStats { rows }
}
