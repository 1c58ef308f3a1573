//! Prefix-to-ASN mapping and the AS-level views of alias sets.

pub mod analysis;
pub mod prefix;
pub mod report;

pub use analysis::{asn_per_set, dual_stack_groups, sets_per_as, top_n, view_groups, AsnPerSet};
pub use prefix::{
    load_prefix_table, read_prefix_table, PrefixLoadStats, PrefixTable, PrefixTableError,
};
pub use report::{build_report, ReportBundle, ReportInputs, REPORT_FILES};
