//! The report bundle: CSV tables, CDF files and a JSON summary.
//!
//! | file | content |
//! |------|---------|
//! | `datasets.csv` | responsive addresses (and ASNs) per protocol, family and source |
//! | `alias_sets.csv` | non-singleton sets and the addresses they cover, per scope and family |
//! | `dual_stack.csv` | dual-stack sets and their addresses per scope |
//! | `dual_stack_composition.csv` | dual-stack sets per size bucket |
//! | `top_ases_ipv4.csv` | top ASes by IPv4 set count |
//! | `top_ases_ipv6_dualstack.csv` | top ASes by IPv6 and dual-stack set count |
//! | `set_size_cdf_ipv4.csv`, `set_size_cdf_ipv6.csv` | CDF of addresses per set |
//! | `asn_per_set_cdf.csv` | CDF of distinct ASNs per IPv4 set |
//! | `sets_per_as.csv` | raw IPv4 set count per AS |
//! | `merge_breakdown.csv` | single- vs multi-protocol addresses and sets |
//! | `summary.json` | headline numbers and metadata |
//!
//! A scope is a protocol label (`ssh`, `bgp`, `external:<label>`) for sets
//! bound by that protocol alone, or `union` for merged sets. Output is a
//! pure function of the inputs.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::Serialize;

use crate::alias::{
    derive_dual_stack, merge_report, set_size_distribution, AliasSet, CdfPoint, DualStackHistogram,
    FamilyView, MergeReport,
};
use crate::identity::{Mapping, ProtocolLabel};
use crate::ingest::overlap_stats;
use crate::record::ScanRecord;

use super::analysis::{asn_per_set, dual_stack_groups, sets_per_as, top_n, view_groups};
use super::PrefixTable;

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_TOP_N: usize = 10;
pub const ATTRIBUTION_RULE: &str = "a set spanning several ASes counts once in each of them";
pub const MERGE_RULE: &str =
    "sets from different protocols merge when they share an address, transitively";

pub const REPORT_FILES: [&str; 12] = [
    "datasets.csv",
    "alias_sets.csv",
    "dual_stack.csv",
    "dual_stack_composition.csv",
    "top_ases_ipv4.csv",
    "top_ases_ipv6_dualstack.csv",
    "set_size_cdf_ipv4.csv",
    "set_size_cdf_ipv6.csv",
    "asn_per_set_cdf.csv",
    "sets_per_as.csv",
    "merge_breakdown.csv",
    "summary.json",
];

pub struct ReportInputs<'a> {
    pub merged: &'a [AliasSet],
    /// Per-protocol sets; empty when only merged sets are known.
    pub per_protocol: &'a BTreeMap<ProtocolLabel, Vec<AliasSet>>,
    pub mappings: Option<&'a [Mapping]>,
    pub records: Option<&'a [ScanRecord]>,
    pub table: Option<&'a PrefixTable>,
    pub top_n: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportBundle {
    pub files: BTreeMap<String, Vec<u8>>,
}

impl ReportBundle {
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes)?;
        }
        Ok(())
    }

    pub fn text(&self, name: &str) -> Option<&str> {
        self.files
            .get(name)
            .and_then(|b| std::str::from_utf8(b).ok())
    }
}

struct Csv(csv::Writer<Vec<u8>>);

impl Csv {
    fn new(header: &[&str]) -> Self {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory write");
        Csv(w)
    }

    fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) {
        self.0
            .write_record(fields.into_iter().collect::<Vec<_>>())
            .expect("in-memory write");
    }

    fn finish(self) -> Vec<u8> {
        self.0.into_inner().expect("in-memory flush")
    }
}

fn f6(x: f64) -> String {
    format!("{x:.6}")
}

fn opt(x: Option<usize>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

#[derive(Debug, Serialize)]
struct ScopeSummary {
    non_singleton_sets_ipv4: usize,
    non_singleton_sets_ipv6: usize,
    dual_stack: DualStackHistogram,
    #[serde(skip_serializing_if = "Option::is_none")]
    multi_as_fraction_ipv4: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    address_coverage_ipv4: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    unmapped_sets_ipv4: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Summary {
    schema_version: u32,
    as_attribution: &'static str,
    merge_rule: &'static str,
    prefix_table: Option<String>,
    top_n: usize,
    merged_sets: usize,
    scopes: BTreeMap<String, ScopeSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    merge: Option<MergeReport>,
    files: Vec<&'static str>,
}

fn write_cdf(out: &mut Csv, scope: &str, points: &[CdfPoint]) {
    for p in points {
        out.row([
            scope.to_string(),
            p.value.to_string(),
            p.count.to_string(),
            f6(p.cumulative_fraction),
        ]);
    }
}

pub fn build_report(inputs: &ReportInputs<'_>) -> ReportBundle {
    let mut scopes: Vec<(String, &[AliasSet])> = inputs
        .per_protocol
        .iter()
        .map(|(label, sets)| (label.to_string(), sets.as_slice()))
        .collect();
    scopes.push(("union".to_string(), inputs.merged));

    let mut files = BTreeMap::new();

    let mut datasets = Csv::new(&[
        "protocol",
        "family",
        "active_ips",
        "imported_ips",
        "union_ips",
        "overlap_ips",
        "active_asns",
        "imported_asns",
        "union_asns",
    ]);
    if let Some(records) = inputs.records {
        for r in overlap_stats(records, inputs.table).rows {
            datasets.row([
                r.protocol,
                r.family,
                r.active_ips.to_string(),
                r.imported_ips.to_string(),
                r.union_ips.to_string(),
                r.overlap_ips.to_string(),
                opt(r.active_asns),
                opt(r.imported_asns),
                opt(r.union_asns),
            ]);
        }
    }
    files.insert("datasets.csv".into(), datasets.finish());

    let mut alias_sets = Csv::new(&["scope", "family", "non_singleton_sets", "addresses"]);
    let mut dual_stack = Csv::new(&[
        "scope",
        "dual_stack_sets",
        "ipv4_addresses",
        "ipv6_addresses",
    ]);
    let mut comp = Csv::new(&["scope", "bucket", "sets", "fraction"]);
    let mut top_v4 = Csv::new(&["scope", "rank", "asn", "sets"]);
    let mut top_v6 = Csv::new(&["view", "scope", "rank", "asn", "sets"]);
    let mut size_v4 = Csv::new(&["scope", "size", "sets", "cumulative_fraction"]);
    let mut size_v6 = Csv::new(&["scope", "size", "sets", "cumulative_fraction"]);
    let mut asn_cdf = Csv::new(&["scope", "asns", "sets", "cumulative_fraction"]);
    let mut per_as_csv = Csv::new(&["scope", "asn", "sets"]);
    let mut summaries = BTreeMap::new();

    for (scope, sets) in &scopes {
        let mut family_counts = [0usize; 2];
        for (i, view) in [FamilyView::V4, FamilyView::V6].into_iter().enumerate() {
            let groups = view_groups(sets, view);
            family_counts[i] = groups.len();
            let covered: usize = groups.iter().map(Vec::len).sum();
            alias_sets.row([
                scope.clone(),
                view.as_str().into(),
                groups.len().to_string(),
                covered.to_string(),
            ]);
        }

        let ds = derive_dual_stack(sets);
        let v4: usize = ds.sets.iter().map(|s| s.v4_count).sum();
        let v6: usize = ds.sets.iter().map(|s| s.v6_count).sum();
        dual_stack.row([
            scope.clone(),
            ds.sets.len().to_string(),
            v4.to_string(),
            v6.to_string(),
        ]);
        let h = ds.histogram;
        for (bucket, n) in [
            ("1+1", h.one_plus_one),
            ("2-10", h.two_to_ten),
            (">10", h.over_ten),
        ] {
            let frac = if h.total() == 0 {
                0.0
            } else {
                n as f64 / h.total() as f64
            };
            comp.row([scope.clone(), bucket.into(), n.to_string(), f6(frac)]);
        }

        write_cdf(
            &mut size_v4,
            scope,
            &set_size_distribution(sets, FamilyView::V4),
        );
        write_cdf(
            &mut size_v6,
            scope,
            &set_size_distribution(sets, FamilyView::V6),
        );

        let mut summary = ScopeSummary {
            non_singleton_sets_ipv4: family_counts[0],
            non_singleton_sets_ipv6: family_counts[1],
            dual_stack: h,
            multi_as_fraction_ipv4: None,
            address_coverage_ipv4: None,
            unmapped_sets_ipv4: None,
        };

        if let Some(table) = inputs.table {
            let v4_groups = view_groups(sets, FamilyView::V4);
            let per_set = asn_per_set(&v4_groups, table);
            write_cdf(&mut asn_cdf, scope, &per_set.cdf);
            summary.multi_as_fraction_ipv4 = Some(per_set.multi_as_fraction);
            summary.address_coverage_ipv4 = Some(per_set.address_coverage);
            summary.unmapped_sets_ipv4 = Some(per_set.unmapped_sets);

            let per_as = sets_per_as(&v4_groups, table);
            for (asn, n) in &per_as {
                per_as_csv.row([scope.clone(), asn.to_string(), n.to_string()]);
            }
            for (rank, (asn, n)) in top_n(&per_as, inputs.top_n).into_iter().enumerate() {
                top_v4.row([
                    scope.clone(),
                    (rank + 1).to_string(),
                    asn.to_string(),
                    n.to_string(),
                ]);
            }
            for (view, groups) in [
                ("ipv6", view_groups(sets, FamilyView::V6)),
                ("dual_stack", dual_stack_groups(sets)),
            ] {
                let top = top_n(&sets_per_as(&groups, table), inputs.top_n);
                for (rank, (asn, n)) in top.into_iter().enumerate() {
                    top_v6.row([
                        view.into(),
                        scope.clone(),
                        (rank + 1).to_string(),
                        asn.to_string(),
                        n.to_string(),
                    ]);
                }
            }
        }
        summaries.insert(scope.clone(), summary);
    }

    let merge = inputs.mappings.map(|m| merge_report(m, inputs.merged));
    let mut mb = Csv::new(&["category", "key", "count"]);
    if let Some(m) = &merge {
        mb.row([
            "addresses".into(),
            "single_service".into(),
            m.single_service_addresses.to_string(),
        ]);
        mb.row([
            "addresses".into(),
            "multi_service".into(),
            m.multi_service_addresses.to_string(),
        ]);
        for (k, n) in &m.addresses_only_via {
            mb.row(["addresses_only_via".into(), k.clone(), n.to_string()]);
        }
        for (k, n) in &m.sets_only_via {
            mb.row(["sets_only_via".into(), k.clone(), n.to_string()]);
        }
        for (k, n) in &m.sets_by_combination {
            mb.row(["sets_by_combination".into(), k.clone(), n.to_string()]);
        }
    }

    files.insert("alias_sets.csv".into(), alias_sets.finish());
    files.insert("dual_stack.csv".into(), dual_stack.finish());
    files.insert("dual_stack_composition.csv".into(), comp.finish());
    files.insert("top_ases_ipv4.csv".into(), top_v4.finish());
    files.insert("top_ases_ipv6_dualstack.csv".into(), top_v6.finish());
    files.insert("set_size_cdf_ipv4.csv".into(), size_v4.finish());
    files.insert("set_size_cdf_ipv6.csv".into(), size_v6.finish());
    files.insert("asn_per_set_cdf.csv".into(), asn_cdf.finish());
    files.insert("sets_per_as.csv".into(), per_as_csv.finish());
    files.insert("merge_breakdown.csv".into(), mb.finish());

    let summary = Summary {
        schema_version: REPORT_SCHEMA_VERSION,
        as_attribution: ATTRIBUTION_RULE,
        merge_rule: MERGE_RULE,
        prefix_table: inputs.table.map(|t| t.provenance.clone()),
        top_n: inputs.top_n,
        merged_sets: inputs.merged.len(),
        scopes: summaries,
        merge,
        files: REPORT_FILES.to_vec(),
    };
    let mut json = serde_json::to_vec_pretty(&summary).expect("summary serializes");
    json.push(b'\n');
    files.insert("summary.json".into(), json);
    ReportBundle { files }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alias::{resolve, ResolveConfig};
    use crate::identity::Digest;
    use ipnet::IpNet;

    fn mappings() -> Vec<Mapping> {
        let mut out = Vec::new();
        let mut add = |a: &str, l: ProtocolLabel, d: u8| {
            out.push(Mapping::new(a.parse().unwrap(), l, Digest([d; 32])))
        };
        add("10.0.0.1", ProtocolLabel::Ssh, 1);
        add("10.0.0.2", ProtocolLabel::Ssh, 1);
        add("2001:db8::1", ProtocolLabel::Ssh, 1);
        add("10.1.0.1", ProtocolLabel::Bgp, 2);
        add("10.2.0.1", ProtocolLabel::Bgp, 2);
        add("10.0.0.2", ProtocolLabel::Bgp, 3);
        out
    }

    fn table() -> PrefixTable {
        let mut t = PrefixTable::new();
        t.insert("10.0.0.0/16".parse::<IpNet>().unwrap(), 64500);
        t.insert("10.1.0.0/16".parse::<IpNet>().unwrap(), 64501);
        t.insert("10.2.0.0/16".parse::<IpNet>().unwrap(), 64502);
        t
    }

    fn bundle(table: Option<&PrefixTable>, m: &[Mapping]) -> ReportBundle {
        let res = resolve(m, &ResolveConfig::default());
        build_report(&ReportInputs {
            merged: &res.merged,
            per_protocol: &res.per_protocol,
            mappings: Some(m),
            records: Some(&[]),
            table,
            top_n: DEFAULT_TOP_N,
        })
    }

    #[test]
    fn all_files_present() {
        let t = table();
        let b = bundle(Some(&t), &mappings());
        for f in REPORT_FILES {
            assert!(b.files.contains_key(f), "{f}");
        }
        assert_eq!(b.files.len(), REPORT_FILES.len());
        let alias_sets = b.text("alias_sets.csv").unwrap();
        assert!(alias_sets.contains("ssh,ipv4,1,2\n"));
        assert!(alias_sets.contains("bgp,ipv4,1,2\n"));
        assert!(alias_sets.contains("union,ipv4,2,4\n"));
        let top_v4 = b.text("top_ases_ipv4.csv").unwrap();
        assert!(top_v4.contains("union,1,64500,1\n"));
        let asn_cdf = b.text("asn_per_set_cdf.csv").unwrap();
        assert!(asn_cdf.contains("bgp,2,1,1.000000\n"));
        let comp = b.text("dual_stack_composition.csv").unwrap();
        assert!(comp.contains("ssh,2-10,1,1.000000\n"));
    }

    #[test]
    fn empty_inputs_give_headers_only() {
        let b = bundle(None, &[]);
        assert_eq!(
            b.text("top_ases_ipv4.csv").unwrap(),
            "scope,rank,asn,sets\n"
        );
        assert_eq!(
            b.text("set_size_cdf_ipv4.csv").unwrap(),
            "scope,size,sets,cumulative_fraction\n"
        );
        assert!(b
            .text("datasets.csv")
            .unwrap()
            .starts_with("protocol,family,"));
    }

    #[test]
    fn rerun_is_identical() {
        let t = table();
        assert_eq!(bundle(Some(&t), &mappings()), bundle(Some(&t), &mappings()));
        let mut reversed = mappings();
        reversed.reverse();
        assert_eq!(bundle(Some(&t), &mappings()), bundle(Some(&t), &reversed));
    }
}
