//! Alias sets: addresses grouped by shared identifier, merged across
//! protocols, and the dual-stack view of the result.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, BufRead, Write};
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use crate::identity::{
    Completeness, Digest, Mapping, ProtocolLabel, DEFAULT_KEY_SUSPECT_THRESHOLD,
};
use crate::record::Source;

pub const ALIAS_SET_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetFlag {
    Singleton,
    /// Some address carries two identifiers for the same protocol.
    UnstableIdentifier,
    /// Some identifier was built without a host key.
    PartialIdentifier,
    /// Some identifier is shared by suspiciously many addresses.
    DefaultKeySuspect,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliasSet {
    pub set_id: u64,
    pub addresses: BTreeSet<IpAddr>,
    #[serde(default)]
    pub protocols: BTreeSet<ProtocolLabel>,
    #[serde(default)]
    pub digests: BTreeSet<Digest>,
    #[serde(default)]
    pub flags: BTreeSet<SetFlag>,
    #[serde(skip)]
    pub sources: BTreeSet<Source>,
}

impl AliasSet {
    pub fn len(&self) -> usize {
        self.addresses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.addresses.is_empty()
    }

    pub fn is_singleton(&self) -> bool {
        self.addresses.len() < 2
    }

    pub fn v4_count(&self) -> usize {
        self.addresses.iter().filter(|a| a.is_ipv4()).count()
    }

    pub fn v6_count(&self) -> usize {
        self.addresses.iter().filter(|a| a.is_ipv6()).count()
    }

    pub fn is_dual_stack(&self) -> bool {
        self.v4_count() > 0 && self.v6_count() > 0
    }

    fn first_address(&self) -> Option<IpAddr> {
        self.addresses.iter().next().copied()
    }
}

/// Sorts sets by smallest address (then digests) and numbers them from 0.
fn assign_ids(sets: &mut [AliasSet]) {
    sets.sort_by(|a, b| {
        (a.first_address(), &a.digests, &a.addresses).cmp(&(
            b.first_address(),
            &b.digests,
            &b.addresses,
        ))
    });
    for (i, s) in sets.iter_mut().enumerate() {
        s.set_id = i as u64;
        s.flags.remove(&SetFlag::Singleton);
        if s.is_singleton() {
            s.flags.insert(SetFlag::Singleton);
        }
    }
}

/// One set per (protocol label, digest). Mappings may mix labels; sets
/// never span labels here.
pub fn group_by_identifier(mappings: &[Mapping]) -> Vec<AliasSet> {
    let mut groups: BTreeMap<(&ProtocolLabel, Digest), AliasSet> = BTreeMap::new();
    for m in mappings {
        let set = groups
            .entry((&m.protocol_label, m.digest))
            .or_insert_with(|| AliasSet {
                set_id: 0,
                addresses: BTreeSet::new(),
                protocols: BTreeSet::from([m.protocol_label.clone()]),
                digests: BTreeSet::from([m.digest]),
                flags: BTreeSet::new(),
                sources: BTreeSet::new(),
            });
        set.addresses.insert(m.address);
        set.sources.extend(m.sources.iter().copied());
        if m.completeness == Completeness::Partial {
            set.flags.insert(SetFlag::PartialIdentifier);
        }
    }
    let mut sets: Vec<AliasSet> = groups.into_values().collect();
    assign_ids(&mut sets);
    sets
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSets {
    pub fn new(n: usize) -> Self {
        DisjointSets {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> usize {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return ra;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        ra
    }
}

/// Merges sets that share at least one address, transitively.
pub fn merge_cross_protocol(sets: &[AliasSet]) -> Vec<AliasSet> {
    let mut uf = DisjointSets::new(sets.len());
    let mut owner: BTreeMap<IpAddr, usize> = BTreeMap::new();
    for (i, set) in sets.iter().enumerate() {
        for addr in &set.addresses {
            match owner.get(addr) {
                Some(&j) => {
                    uf.union(i, j);
                }
                None => {
                    owner.insert(*addr, i);
                }
            }
        }
    }
    let mut merged: BTreeMap<usize, AliasSet> = BTreeMap::new();
    for (i, set) in sets.iter().enumerate() {
        let root = uf.find(i);
        let out = merged.entry(root).or_insert_with(|| AliasSet {
            set_id: 0,
            addresses: BTreeSet::new(),
            protocols: BTreeSet::new(),
            digests: BTreeSet::new(),
            flags: BTreeSet::new(),
            sources: BTreeSet::new(),
        });
        out.addresses.extend(set.addresses.iter().copied());
        out.protocols.extend(set.protocols.iter().cloned());
        out.digests.extend(set.digests.iter().copied());
        out.flags.extend(set.flags.iter().copied());
        out.sources.extend(set.sources.iter().copied());
    }
    let mut out: Vec<AliasSet> = merged.into_values().collect();
    assign_ids(&mut out);
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MergeReport {
    pub addresses: usize,
    /// Addresses that carry an identifier for exactly one protocol.
    pub single_service_addresses: usize,
    pub multi_service_addresses: usize,
    pub single_service_fraction: f64,
    /// Per protocol: addresses whose only identifier is from that protocol.
    pub addresses_only_via: BTreeMap<String, usize>,
    /// Per protocol: non-singleton merged sets bound only by that protocol.
    pub sets_only_via: BTreeMap<String, usize>,
    /// Non-singleton merged sets by protocol combination (`ssh+bgp`).
    pub sets_by_combination: BTreeMap<String, usize>,
    pub non_singleton_sets: usize,
    pub multi_protocol_sets: usize,
}

pub fn protocol_combination(protocols: &BTreeSet<ProtocolLabel>) -> String {
    protocols
        .iter()
        .map(|p| p.to_string())
        .collect::<Vec<_>>()
        .join("+")
}

pub fn merge_report(mappings: &[Mapping], merged: &[AliasSet]) -> MergeReport {
    let mut per_addr: BTreeMap<IpAddr, BTreeSet<&ProtocolLabel>> = BTreeMap::new();
    for m in mappings {
        per_addr
            .entry(m.address)
            .or_default()
            .insert(&m.protocol_label);
    }
    let mut report = MergeReport {
        addresses: per_addr.len(),
        ..Default::default()
    };
    for labels in per_addr.values() {
        if labels.len() == 1 {
            report.single_service_addresses += 1;
            let only = labels.iter().next().expect("non-empty").to_string();
            *report.addresses_only_via.entry(only).or_default() += 1;
        } else {
            report.multi_service_addresses += 1;
        }
    }
    report.single_service_fraction = fraction(report.single_service_addresses, report.addresses);
    for set in merged.iter().filter(|s| !s.is_singleton()) {
        report.non_singleton_sets += 1;
        *report
            .sets_by_combination
            .entry(protocol_combination(&set.protocols))
            .or_default() += 1;
        if set.protocols.len() == 1 {
            let only = set.protocols.iter().next().expect("non-empty").to_string();
            *report.sets_only_via.entry(only).or_default() += 1;
        } else {
            report.multi_protocol_sets += 1;
        }
    }
    report
}

pub(crate) fn fraction(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

#[derive(Debug, Clone)]
pub struct ResolveConfig {
    pub default_key_threshold: usize,
}

impl Default for ResolveConfig {
    fn default() -> Self {
        ResolveConfig {
            default_key_threshold: DEFAULT_KEY_SUSPECT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Resolution {
    pub per_protocol: BTreeMap<ProtocolLabel, Vec<AliasSet>>,
    pub merged: Vec<AliasSet>,
    pub report: MergeReport,
}

/// Grouping, flagging and cross-protocol merging in one pass.
pub fn resolve(mappings: &[Mapping], cfg: &ResolveConfig) -> Resolution {
    let mut digests_per_addr: BTreeMap<(IpAddr, &ProtocolLabel), BTreeSet<Digest>> =
        BTreeMap::new();
    for m in mappings {
        digests_per_addr
            .entry((m.address, &m.protocol_label))
            .or_default()
            .insert(m.digest);
    }
    let unstable: BTreeSet<IpAddr> = digests_per_addr
        .iter()
        .filter(|(_, d)| d.len() > 1)
        .map(|((addr, _), _)| *addr)
        .collect();

    let mut by_label: BTreeMap<ProtocolLabel, Vec<Mapping>> = BTreeMap::new();
    for m in mappings {
        by_label
            .entry(m.protocol_label.clone())
            .or_default()
            .push(m.clone());
    }
    let mut per_protocol = BTreeMap::new();
    let mut all = Vec::new();
    for (label, ms) in by_label {
        let mut sets = group_by_identifier(&ms);
        for set in &mut sets {
            if set.addresses.iter().any(|a| unstable.contains(a)) {
                set.flags.insert(SetFlag::UnstableIdentifier);
            }
            if set.len() > cfg.default_key_threshold {
                set.flags.insert(SetFlag::DefaultKeySuspect);
            }
        }
        all.extend(sets.iter().cloned());
        per_protocol.insert(label, sets);
    }
    let merged = merge_cross_protocol(&all);
    let report = merge_report(mappings, &merged);
    Resolution {
        per_protocol,
        merged,
        report,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DualStackHistogram {
    /// One IPv4 and one IPv6 address.
    pub one_plus_one: usize,
    /// Three to ten addresses.
    pub two_to_ten: usize,
    /// More than ten addresses.
    pub over_ten: usize,
}

impl DualStackHistogram {
    pub fn add(&mut self, v4: usize, v6: usize) {
        match v4 + v6 {
            2 => self.one_plus_one += 1,
            3..=10 => self.two_to_ten += 1,
            _ => self.over_ten += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.one_plus_one + self.two_to_ten + self.over_ten
    }

    pub fn as_tuple(&self) -> (usize, usize, usize) {
        (self.one_plus_one, self.two_to_ten, self.over_ten)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DualStackSet {
    pub set_id: u64,
    pub v4_count: usize,
    pub v6_count: usize,
    pub protocols: BTreeSet<ProtocolLabel>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DualStackReport {
    pub sets: Vec<DualStackSet>,
    pub histogram: DualStackHistogram,
    /// Histogram restricted to sets bound by each protocol label.
    pub by_protocol: BTreeMap<String, DualStackHistogram>,
}

pub fn derive_dual_stack(sets: &[AliasSet]) -> DualStackReport {
    let mut report = DualStackReport::default();
    for set in sets.iter().filter(|s| s.is_dual_stack()) {
        let (v4, v6) = (set.v4_count(), set.v6_count());
        report.histogram.add(v4, v6);
        for p in &set.protocols {
            report
                .by_protocol
                .entry(p.to_string())
                .or_default()
                .add(v4, v6);
        }
        report.sets.push(DualStackSet {
            set_id: set.set_id,
            v4_count: v4,
            v6_count: v6,
            protocols: set.protocols.clone(),
        });
    }
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CdfPoint {
    pub value: usize,
    pub count: usize,
    pub cumulative_fraction: f64,
}

/// Empirical CDF: one point per distinct value.
pub fn cdf<I: IntoIterator<Item = usize>>(values: I) -> Vec<CdfPoint> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for v in values {
        *counts.entry(v).or_default() += 1;
    }
    let total: usize = counts.values().sum();
    let mut running = 0;
    counts
        .into_iter()
        .map(|(value, count)| {
            running += count;
            CdfPoint {
                value,
                count,
                cumulative_fraction: running as f64 / total as f64,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum FamilyView {
    All,
    V4,
    V6,
}

impl FamilyView {
    pub fn as_str(self) -> &'static str {
        match self {
            FamilyView::All => "all",
            FamilyView::V4 => "ipv4",
            FamilyView::V6 => "ipv6",
        }
    }

    pub fn project(self, set: &AliasSet) -> Vec<IpAddr> {
        set.addresses
            .iter()
            .filter(|a| match self {
                FamilyView::All => true,
                FamilyView::V4 => a.is_ipv4(),
                FamilyView::V6 => a.is_ipv6(),
            })
            .copied()
            .collect()
    }
}

/// Set sizes as seen in one address family, keeping sets with at least two
/// addresses of that family.
pub fn family_sizes(sets: &[AliasSet], view: FamilyView) -> Vec<usize> {
    sets.iter()
        .map(|s| view.project(s).len())
        .filter(|&n| n >= 2)
        .collect()
}

pub fn set_size_distribution(sets: &[AliasSet], view: FamilyView) -> Vec<CdfPoint> {
    cdf(family_sizes(sets, view))
}

pub fn write_alias_sets<W: Write>(mut out: W, sets: &[AliasSet]) -> io::Result<()> {
    for set in sets {
        serde_json::to_writer(&mut out, set)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_alias_sets<R: BufRead>(reader: R) -> io::Result<Vec<AliasSet>> {
    let mut sets = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let set: AliasSet = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", idx + 1))
        })?;
        if set.addresses.is_empty() {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("line {}: alias set without addresses", idx + 1),
            ));
        }
        sets.push(set);
    }
    Ok(sets)
}
