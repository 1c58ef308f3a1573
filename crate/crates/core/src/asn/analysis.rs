//! Per-set ASN counts and per-AS set counts.
//!
//! Analyses take address groups: a set's addresses as seen in one view
//! (one family, or dual-stack sets). A set spanning several ASes is
//! attributed to each of them.

use std::collections::{BTreeMap, BTreeSet};
use std::net::IpAddr;

use serde::Serialize;

use crate::alias::{cdf, fraction, AliasSet, CdfPoint, FamilyView};

use super::PrefixTable;

/// Address groups of the sets that have at least two addresses in `view`.
pub fn view_groups(sets: &[AliasSet], view: FamilyView) -> Vec<Vec<IpAddr>> {
    sets.iter()
        .map(|s| view.project(s))
        .filter(|g| g.len() >= 2)
        .collect()
}

/// Address groups of the dual-stack sets, both families included.
pub fn dual_stack_groups(sets: &[AliasSet]) -> Vec<Vec<IpAddr>> {
    sets.iter()
        .filter(|s| s.is_dual_stack())
        .map(|s| s.addresses.iter().copied().collect())
        .collect()
}

fn asns_of(group: &[IpAddr], table: &PrefixTable) -> BTreeSet<u32> {
    group.iter().filter_map(|a| table.lookup(*a)).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AsnPerSet {
    pub sets: usize,
    /// Sets with no mapped address, left out of the distribution.
    pub unmapped_sets: usize,
    pub addresses: usize,
    pub unmapped_addresses: usize,
    pub address_coverage: f64,
    pub multi_as_sets: usize,
    /// Multi-AS sets over sets with at least one mapped address.
    pub multi_as_fraction: f64,
    /// Distinct-ASN count per mapped set, in input order.
    pub counts: Vec<usize>,
    pub cdf: Vec<CdfPoint>,
}

pub fn asn_per_set(groups: &[Vec<IpAddr>], table: &PrefixTable) -> AsnPerSet {
    let mut out = AsnPerSet {
        sets: groups.len(),
        ..Default::default()
    };
    for group in groups {
        out.addresses += group.len();
        out.unmapped_addresses += group.iter().filter(|a| table.lookup(**a).is_none()).count();
        match asns_of(group, table).len() {
            0 => out.unmapped_sets += 1,
            n => out.counts.push(n),
        }
    }
    out.multi_as_sets = out.counts.iter().filter(|&&n| n > 1).count();
    out.multi_as_fraction = fraction(out.multi_as_sets, out.counts.len());
    out.address_coverage = fraction(out.addresses - out.unmapped_addresses, out.addresses);
    out.cdf = cdf(out.counts.iter().copied());
    out
}

/// Number of sets attributed to each ASN.
pub fn sets_per_as(groups: &[Vec<IpAddr>], table: &PrefixTable) -> BTreeMap<u32, usize> {
    let mut counts = BTreeMap::new();
    for group in groups {
        for asn in asns_of(group, table) {
            *counts.entry(asn).or_default() += 1;
        }
    }
    counts
}

/// Largest counts first; ties broken by the smaller ASN.
pub fn top_n(counts: &BTreeMap<u32, usize>, n: usize) -> Vec<(u32, usize)> {
    let mut rows: Vec<(u32, usize)> = counts.iter().map(|(a, c)| (*a, *c)).collect();
    rows.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
    rows.truncate(n);
    rows
}

#[cfg(test)]
mod tests {
    use super::*;
    use ipnet::IpNet;

    fn table() -> PrefixTable {
        let mut t = PrefixTable::new();
        t.insert("10.0.0.0/16".parse::<IpNet>().unwrap(), 64500);
        t.insert("10.1.0.0/16".parse::<IpNet>().unwrap(), 64501);
        t.insert("2001:db8::/32".parse::<IpNet>().unwrap(), 64500);
        t
    }

    fn g(addrs: &[&str]) -> Vec<IpAddr> {
        addrs.iter().map(|a| a.parse().unwrap()).collect()
    }

    #[test]
    fn two_as_set() {
        let r = asn_per_set(&[g(&["10.0.0.1", "10.1.0.1"])], &table());
        assert_eq!(r.counts, vec![2]);
        assert_eq!(r.multi_as_fraction, 1.0);
    }

    #[test]
    fn unmapped_set_excluded() {
        let r = asn_per_set(
            &[g(&["192.0.2.1", "192.0.2.2"]), g(&["10.0.0.1", "10.0.0.2"])],
            &table(),
        );
        assert_eq!(r.unmapped_sets, 1);
        assert_eq!(r.counts, vec![1]);
        assert_eq!(r.unmapped_addresses, 2);
        assert!((r.address_coverage - 0.5).abs() < 1e-12);
        assert_eq!(r.multi_as_fraction, 0.0);
    }

    #[test]
    fn single_as_top() {
        let groups = vec![
            g(&["10.0.0.1", "10.0.0.2"]),
            g(&["10.0.1.1", "10.0.1.2"]),
            g(&["10.0.2.1", "2001:db8::2"]),
        ];
        assert_eq!(top_n(&sets_per_as(&groups, &table()), 1), vec![(64500, 3)]);
    }

    #[test]
    fn multi_as_set_counted_in_each() {
        let groups = vec![g(&["10.0.0.1", "10.1.0.1"]), g(&["10.1.0.2", "10.1.0.3"])];
        let counts = sets_per_as(&groups, &table());
        assert_eq!(counts[&64500], 1);
        assert_eq!(counts[&64501], 2);
        assert!(counts.values().sum::<usize>() >= groups.len());
        // tie-break by ASN
        let tie = BTreeMap::from([(7, 2), (3, 2), (9, 5)]);
        assert_eq!(top_n(&tie, 3), vec![(9, 5), (3, 2), (7, 2)]);
    }
}
