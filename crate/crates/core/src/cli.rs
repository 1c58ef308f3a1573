//! Command-line entry point. Every stage reads and writes files, so stages
//! can be run one at a time.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, LazyLock};
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::alias::{
    derive_dual_stack, group_by_identifier, read_alias_sets, resolve, write_alias_sets, AliasSet,
    ResolveConfig, ALIAS_SET_SCHEMA_VERSION,
};
use crate::asn::report::{build_report, ReportInputs, DEFAULT_TOP_N, REPORT_SCHEMA_VERSION};
use crate::asn::{load_prefix_table, PrefixTable};
use crate::identity::{
    extract_identifiers, read_identifier_dump, write_identifier_dump, ExtractionConfig, Mapping,
    ProtocolLabel, SshListMode, DEFAULT_KEY_SUSPECT_THRESHOLD, IDENTIFIER_DUMP_SCHEMA_VERSION,
};
use crate::ingest::{
    import_external_services, load_external_identifiers, load_scan_records, write_scan_record,
    write_scan_records, ImportOptions, EXTERNAL_SERVICE_SCHEMA_VERSION,
};
use crate::probe::{
    parse_target_list, plan_targets, run_scan, AddressResolver, DirectResolver, NetworkProber,
    PortConfig, ScanConfig, Timeouts, DEFAULT_MAX_PREFIX_HOSTS,
};
use crate::record::{Protocol, ScanRecord, SCAN_RECORD_SCHEMA_VERSION};
use crate::simnet::{
    generate_fleet, ground_truth_sets, launch_fleet, AddressMap, FleetParams, FleetSpec,
};
use crate::validation::{
    cross_protocol_agreement, sample_sets, ValidationReport, ValidationRow,
    VALIDATION_REPORT_SCHEMA_VERSION,
};

static LONG_VERSION: LazyLock<String> = LazyLock::new(|| {
    format!(
        "{}\nscan records: {}\nexternal services: {}\nidentifier dump: {}\nalias sets: {}\nvalidation report: {}\nreport bundle: {}",
        env!("CARGO_PKG_VERSION"),
        SCAN_RECORD_SCHEMA_VERSION,
        EXTERNAL_SERVICE_SCHEMA_VERSION,
        IDENTIFIER_DUMP_SCHEMA_VERSION,
        ALIAS_SET_SCHEMA_VERSION,
        VALIDATION_REPORT_SCHEMA_VERSION,
        REPORT_SCHEMA_VERSION,
    )
});

#[derive(Debug, Parser)]
#[command(
    name = "aliasprobe",
    version,
    long_version = LONG_VERSION.as_str(),
    about = "Find IP aliases and dual-stack hosts from SSH and BGP handshakes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Probe targets and write scan records (JSONL)
    Scan(ScanArgs),
    /// Convert an external service snapshot into scan records
    Import(ImportArgs),
    /// Build host identifiers from scan records and external identifiers
    Identify(IdentifyArgs),
    /// Group identifiers into alias sets and merge across protocols
    Resolve(ResolveArgs),
    /// Compare alias sets from two sources
    Validate(ValidateArgs),
    /// Write the report bundle
    Report(ReportArgs),
    /// Generate, describe or serve a synthetic fleet
    Simnet(SimnetArgs),
}

fn parse_rate(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("rate must be greater than 0, got {s}"))
    }
}

fn parse_secs(s: &str) -> Result<Duration, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v.is_finite() && v >= 0.0 {
        Ok(Duration::from_secs_f64(v))
    } else {
        Err(format!(
            "expected a non-negative number of seconds, got {s}"
        ))
    }
}

fn parse_protocol(s: &str) -> Result<Protocol, String> {
    s.parse::<Protocol>().map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Comma-separated protocols
    #[arg(long, default_value = "ssh,bgp", value_delimiter = ',', value_parser = parse_protocol)]
    pub protocols: Vec<Protocol>,
    /// Addresses or prefixes, one per line. Defaults to every fleet address with --simnet
    #[arg(long)]
    pub targets: Option<PathBuf>,
    /// Probes per second, across the whole scan
    #[arg(long, default_value = "100", value_parser = parse_rate)]
    pub rate: f64,
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    pub concurrency: u64,
    /// Minimum seconds between two probes to one address
    #[arg(long, default_value = "1", value_parser = parse_secs)]
    pub per_target_interval: Duration,
    /// Re-probe targets that ended no_connect or timeout this many times
    #[arg(long, default_value_t = 0)]
    pub retries: u32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 22)]
    pub ssh_port: u16,
    #[arg(long, default_value_t = 179)]
    pub bgp_port: u16,
    #[arg(long, default_value = "5", value_parser = parse_secs)]
    pub connect_timeout: Duration,
    #[arg(long, default_value = "10", value_parser = parse_secs)]
    pub ssh_timeout: Duration,
    #[arg(long, default_value = "2", value_parser = parse_secs)]
    pub bgp_wait: Duration,
    /// Largest prefix expanded into targets
    #[arg(long, default_value_t = DEFAULT_MAX_PREFIX_HOSTS)]
    pub max_prefix_hosts: u64,
    /// Dial addresses through this map (as written by `simnet --address-map`)
    #[arg(long, conflicts_with = "simnet")]
    pub address_map: Option<PathBuf>,
    /// Launch this fleet in-process and scan it
    #[arg(long)]
    pub simnet: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Write the scan summary (JSON) here
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImportArgs {
    /// External service snapshot (JSONL)
    #[arg(long)]
    pub services: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep records on non-default ports
    #[arg(long)]
    pub no_port_filter: bool,
    /// Keep IPv6 records
    #[arg(long)]
    pub allow_ipv6: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SshListsArg {
    /// Server-to-client lists only
    S2c,
    /// Both directions
    Both,
}

#[derive(Debug, Args)]
pub struct IdentifyArgs {
    /// Scan record files (JSONL); repeatable
    #[arg(long = "records", required_unless_present = "external")]
    pub records: Vec<PathBuf>,
    /// External identifier files (CSV address,protocol_label,digest,source); repeatable
    #[arg(long = "external")]
    pub external: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "s2c")]
    pub ssh_lists: SshListsArg,
    #[arg(long, default_value_t = DEFAULT_KEY_SUSPECT_THRESHOLD)]
    pub default_key_threshold: usize,
    /// Identifier dump (CSV)
    #[arg(long)]
    pub out: PathBuf,
    /// Extraction report (JSON)
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ResolveArgs {
    /// Identifier dump (CSV)
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Merged alias sets (JSONL)
    #[arg(long)]
    pub out: PathBuf,
    /// Also write per-protocol sets as <dir>/<label>.jsonl
    #[arg(long)]
    pub per_protocol_dir: Option<PathBuf>,
    /// Merge and dual-stack summary (JSON)
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_KEY_SUSPECT_THRESHOLD)]
    pub default_key_threshold: usize,
}

fn parse_pair(s: &str) -> Result<(ProtocolLabel, ProtocolLabel), String> {
    let (a, b) = s.split_once(':').ok_or("expected A:B, e.g. ssh:bgp")?;
    Ok((a.parse()?, b.parse()?))
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Identifier dump; per-protocol sets are built from it
    #[arg(long, required_unless_present = "a")]
    pub ids: Option<PathBuf>,
    /// Protocol pairs to compare, e.g. ssh:bgp; repeatable. Default: every pair present
    #[arg(long = "pair", value_parser = parse_pair)]
    pub pairs: Vec<(ProtocolLabel, ProtocolLabel)>,
    /// First alias-set file (JSONL), compared against --b
    #[arg(long, requires = "b", conflicts_with = "ids")]
    pub a: Option<PathBuf>,
    #[arg(long)]
    pub b: Option<PathBuf>,
    /// Sample this many A-sets before comparing
    #[arg(long)]
    pub sample: Option<usize>,
    /// Largest A-set eligible for sampling
    #[arg(long, default_value_t = 10)]
    pub max_set_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Validation report (JSON)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Merged alias sets (JSONL)
    #[arg(long)]
    pub sets: PathBuf,
    /// Identifier dump; enables per-protocol scopes and the merge breakdown
    #[arg(long)]
    pub ids: Option<PathBuf>,
    /// Scan records for the dataset table; repeatable
    #[arg(long = "records")]
    pub records: Vec<PathBuf>,
    /// Prefix-to-AS file; enables the AS tables and figures
    #[arg(long)]
    pub pfx2as: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOP_N)]
    pub top: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimnetArgs {
    /// Fleet description (TOML)
    #[arg(long, required_unless_present = "generate")]
    pub spec: Option<PathBuf>,
    /// Generate a random fleet with this many hosts instead of reading one
    #[arg(long, conflicts_with = "spec")]
    pub generate: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub dual_stack_hosts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write the (generated) fleet description here
    #[arg(long)]
    pub write_spec: Option<PathBuf>,
    /// Write the ground-truth sets (JSON)
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Write every fleet address, one per line
    #[arg(long)]
    pub targets_out: Option<PathBuf>,
    /// Write the fleet's prefix-to-AS entries
    #[arg(long)]
    pub pfx2as_out: Option<PathBuf>,
    /// Listen until interrupted
    #[arg(long, requires = "address_map")]
    pub serve: bool,
    /// Where to write the address map while serving
    #[arg(long)]
    pub address_map: Option<PathBuf>,
}

/// Parses `args` and runs the command. Returns the process exit code:
/// 0 success, 1 operational error, 2 usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Scan(a) => cmd_scan(a),
        Command::Import(a) => cmd_import(a),
        Command::Identify(a) => cmd_identify(a),
        Command::Resolve(a) => cmd_resolve(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Report(a) => cmd_report(a),
        Command::Simnet(a) => cmd_simnet(a),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")
}

fn load_records(paths: &[PathBuf]) -> Result<Vec<ScanRecord>> {
    let mut out = Vec::new();
    for p in paths {
        let report = load_scan_records(p)?;
        for bad in &report.malformed {
            log::warn!("{}: line {}: {}", p.display(), bad.line, bad.message);
        }
        if !report.malformed.is_empty() {
            eprintln!(
                "{}: skipped {} malformed lines",
                p.display(),
                report.malformed.len()
            );
        }
        out.extend(report.records);
    }
    Ok(out)
}

fn load_mappings(path: &Path) -> Result<Vec<Mapping>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_identifier_dump(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn load_sets(path: &Path) -> Result<Vec<AliasSet>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_alias_sets(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn load_table(path: &Path) -> Result<PrefixTable> {
    let (table, stats) = load_prefix_table(path)?;
    if stats.duplicates > 0 {
        log::warn!(
            "{}: {} duplicate prefixes, last entry kept",
            path.display(),
            stats.duplicates
        );
    }
    Ok(table)
}

fn cmd_scan(a: ScanArgs) -> Result<()> {
    let cfg = ScanConfig {
        rate: a.rate,
        per_target_interval: a.per_target_interval,
        concurrency: a.concurrency as usize,
        retries: a.retries,
    };
    let timeouts = Timeouts {
        connect: a.connect_timeout,
        ssh_read: a.ssh_timeout,
        bgp_wait: a.bgp_wait,
    };
    let ports = PortConfig {
        ssh: a.ssh_port,
        bgp: a.bgp_port,
    };
    let fleet_spec = a.simnet.as_deref().map(FleetSpec::load).transpose()?;
    let inputs = match (&a.targets, &fleet_spec) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            parse_target_list(&text)?
        }
        (None, Some(spec)) => spec.all_addresses().into_iter().map(Into::into).collect(),
        (None, None) => bail!("--targets is required unless --simnet is given"),
    };
    let targets = plan_targets(&inputs, &a.protocols, &ports, a.seed, a.max_prefix_hosts)?;
    let rt = runtime()?;
    let summary = rt.block_on(async {
        let _fleet;
        let resolver: Arc<dyn AddressResolver> = match (&fleet_spec, &a.address_map) {
            (Some(spec), _) => {
                let fleet = launch_fleet(spec).await?;
                let map = fleet.address_map().clone();
                _fleet = fleet;
                Arc::new(map)
            }
            (None, Some(path)) => Arc::new(
                AddressMap::load(path).with_context(|| format!("reading {}", path.display()))?,
            ),
            (None, None) => Arc::new(DirectResolver),
        };
        let prober = Arc::new(NetworkProber::new(resolver, timeouts, a.seed));
        let mut out = create(&a.out)?;
        let mut write_err = None;
        let outcome = run_scan(targets, prober, &cfg, |rec| {
            if write_err.is_none() {
                if let Err(e) = write_scan_record(&mut out, &rec) {
                    write_err = Some(e);
                }
            }
        })
        .await?;
        if let Some(e) = write_err {
            return Err(anyhow::Error::from(e).context(format!("writing {}", a.out.display())));
        }
        out.flush()?;
        anyhow::Ok(outcome.summary)
    })?;
    eprintln!(
        "scanned {} targets: {}",
        summary.targets,
        summary
            .by_status
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(" ")
    );
    if let Some(path) = &a.summary {
        write_json(path, &summary)?;
    }
    Ok(())
}

fn cmd_import(a: ImportArgs) -> Result<()> {
    let opts = ImportOptions {
        port_filter: !a.no_port_filter,
        allow_ipv6: a.allow_ipv6,
    };
    let report = import_external_services(&a.services, opts)?;
    for bad in &report.schema_mismatch {
        log::warn!(
            "{}: line {}: {}",
            a.services.display(),
            bad.line,
            bad.message
        );
    }
    let mut out = create(&a.out)?;
    write_scan_records(&mut out, &report.records)?;
    out.flush()?;
    eprintln!(
        "imported {} records; dropped {} on non-default ports, {} IPv6, {} schema mismatches",
        report.records.len(),
        report.dropped_port,
        report.dropped_ipv6,
        report.schema_mismatch.len()
    );
    Ok(())
}

fn cmd_identify(a: IdentifyArgs) -> Result<()> {
    let records = load_records(&a.records)?;
    let mut external = Vec::new();
    for p in &a.external {
        let load = load_external_identifiers(p)?;
        for bad in &load.rejected {
            log::warn!("{}: line {}: {}", p.display(), bad.line, bad.message);
        }
        external.extend(load.records);
    }
    let cfg = ExtractionConfig {
        ssh_mode: match a.ssh_lists {
            SshListsArg::S2c => SshListMode::ServerToClient,
            SshListsArg::Both => SshListMode::BothDirections,
        },
        default_key_threshold: a.default_key_threshold,
    };
    let extraction = extract_identifiers(&records, &external, &cfg);
    let mut out = create(&a.out)?;
    write_identifier_dump(&mut out, &extraction.mappings)?;
    out.flush()?;
    if let Some(path) = &a.report {
        write_json(path, &extraction.report)?;
    }
    eprintln!(
        "{} identifier mappings from {} records",
        extraction.mappings.len(),
        extraction.report.records_seen
    );
    Ok(())
}

fn cmd_resolve(a: ResolveArgs) -> Result<()> {
    let mappings = load_mappings(&a.input)?;
    let res = resolve(
        &mappings,
        &ResolveConfig {
            default_key_threshold: a.default_key_threshold,
        },
    );
    let mut out = create(&a.out)?;
    write_alias_sets(&mut out, &res.merged)?;
    out.flush()?;
    if let Some(dir) = &a.per_protocol_dir {
        for (label, sets) in &res.per_protocol {
            let name = label.to_string().replace(':', "_");
            let mut w = create(&dir.join(format!("{name}.jsonl")))?;
            write_alias_sets(&mut w, sets)?;
            w.flush()?;
        }
    }
    if let Some(path) = &a.summary {
        #[derive(serde::Serialize)]
        struct Summary<'a> {
            merged_sets: usize,
            non_singleton_sets: usize,
            merge: &'a crate::alias::MergeReport,
            dual_stack: crate::alias::DualStackHistogram,
        }
        let ds = derive_dual_stack(&res.merged);
        write_json(
            path,
            &Summary {
                merged_sets: res.merged.len(),
                non_singleton_sets: res.report.non_singleton_sets,
                merge: &res.report,
                dual_stack: ds.histogram,
            },
        )?;
    }
    eprintln!(
        "{} alias sets ({} non-singleton)",
        res.merged.len(),
        res.report.non_singleton_sets
    );
    Ok(())
}

fn cmd_validate(a: ValidateArgs) -> Result<()> {
    let mut comparisons: Vec<(String, Vec<AliasSet>, Vec<AliasSet>)> = Vec::new();
    if let (Some(pa), Some(pb)) = (&a.a, &a.b) {
        comparisons.push(("a:b".into(), load_sets(pa)?, load_sets(pb)?));
    } else if let Some(ids) = &a.ids {
        let mappings = load_mappings(ids)?;
        let mut by_label: BTreeMap<ProtocolLabel, Vec<Mapping>> = BTreeMap::new();
        for m in mappings {
            by_label
                .entry(m.protocol_label.clone())
                .or_default()
                .push(m);
        }
        let sets: BTreeMap<ProtocolLabel, Vec<AliasSet>> = by_label
            .iter()
            .map(|(l, ms)| (l.clone(), group_by_identifier(ms)))
            .collect();
        let pairs = if a.pairs.is_empty() {
            let labels: Vec<&ProtocolLabel> = sets.keys().collect();
            let mut v = Vec::new();
            for i in 0..labels.len() {
                for j in i + 1..labels.len() {
                    v.push((labels[i].clone(), labels[j].clone()));
                }
            }
            v
        } else {
            a.pairs.clone()
        };
        for (x, y) in pairs {
            let empty = Vec::new();
            let sx = sets.get(&x).unwrap_or(&empty).clone();
            let sy = sets.get(&y).unwrap_or(&empty).clone();
            comparisons.push((format!("{x}:{y}"), sx, sy));
        }
    }
    let mut rows = Vec::new();
    for (pair, sa, sb) in comparisons {
        let sa = match a.sample {
            Some(n) => {
                let s = sample_sets(&sa, a.max_set_size, n, a.seed)
                    .with_context(|| format!("sampling {pair}"))?;
                eprintln!(
                    "{pair}: {:.1}% of sets eligible for sampling",
                    s.eligibility_rate * 100.0
                );
                s.sets
            }
            None => sa,
        };
        let report = cross_protocol_agreement(&sa, &sb);
        eprintln!(
            "{pair}: sample {} agree {} disagree {}",
            report.sample_size, report.agree, report.disagree
        );
        rows.push(ValidationRow::new(pair, report));
    }
    write_json(
        &a.out,
        &ValidationReport {
            schema_version: VALIDATION_REPORT_SCHEMA_VERSION,
            rows,
        },
    )
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let merged = load_sets(&a.sets)?;
    let mappings = a.ids.as_deref().map(load_mappings).transpose()?;
    let per_protocol: BTreeMap<ProtocolLabel, Vec<AliasSet>> = match &mappings {
        Some(ms) => {
            let mut by_label: BTreeMap<ProtocolLabel, Vec<Mapping>> = BTreeMap::new();
            for m in ms {
                by_label
                    .entry(m.protocol_label.clone())
                    .or_default()
                    .push(m.clone());
            }
            by_label
                .into_iter()
                .map(|(l, ms)| (l, group_by_identifier(&ms)))
                .collect()
        }
        None => BTreeMap::new(),
    };
    let records = if a.records.is_empty() {
        None
    } else {
        Some(load_records(&a.records)?)
    };
    let table = a.pfx2as.as_deref().map(load_table).transpose()?;
    let bundle = build_report(&ReportInputs {
        merged: &merged,
        per_protocol: &per_protocol,
        mappings: mappings.as_deref(),
        records: records.as_deref(),
        table: table.as_ref(),
        top_n: a.top,
    });
    bundle
        .write_to(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("wrote {} files to {}", bundle.files.len(), a.out.display());
    Ok(())
}

fn cmd_simnet(a: SimnetArgs) -> Result<()> {
    let spec = match (&a.spec, a.generate) {
        (Some(path), _) => FleetSpec::load(path)?,
        (None, Some(hosts)) => generate_fleet(
            &FleetParams {
                hosts,
                dual_stack_hosts: a.dual_stack_hosts.min(hosts),
                ..Default::default()
            },
            a.seed,
        ),
        (None, None) => bail!("--spec or --generate is required"),
    };
    if let Some(path) = &a.write_spec {
        std::fs::write(path, spec.to_toml())
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &a.truth {
        write_json(path, &ground_truth_sets(&spec, SshListMode::default()))?;
    }
    if let Some(path) = &a.targets_out {
        let mut w = create(path)?;
        for addr in spec.all_addresses() {
            writeln!(w, "{addr}")?;
        }
        w.flush()?;
    }
    if let Some(path) = &a.pfx2as_out {
        let mut w = create(path)?;
        for p in &spec.prefixes {
            writeln!(w, "{}\t{}", p.prefix, p.asn)?;
        }
        w.flush()?;
    }
    if a.serve {
        let map_path = a.address_map.clone().expect("required by clap");
        runtime()?.block_on(async move {
            let mut fleet = launch_fleet(&spec).await?;
            std::fs::write(&map_path, fleet.address_map().to_json())
                .with_context(|| format!("writing {}", map_path.display()))?;
            eprintln!(
                "serving {} listeners; address map in {}; Ctrl-C to stop",
                fleet.listeners(),
                map_path.display()
            );
            tokio::signal::ctrl_c().await?;
            fleet.shutdown();
            anyhow::Ok(())
        })?;
    }
    Ok(())
}
