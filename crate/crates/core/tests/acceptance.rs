//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints one PASS/FAIL line even when the others fail.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use ipnet::IpNet;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aliasprobe::alias::{
    derive_dual_stack, group_by_identifier, merge_cross_protocol, resolve, AliasSet,
    DualStackHistogram, FamilyView, ResolveConfig,
};
use aliasprobe::asn::{asn_per_set, view_groups, PrefixTable};
use aliasprobe::identity::{extract_identifiers, Digest, ExtractionConfig, Mapping, ProtocolLabel};
use aliasprobe::probe::{
    min_same_address_gap, plan_targets, run_scan, BoxFuture, NetworkProber, PortConfig, Prober,
    ScanConfig, Timeouts,
};
use aliasprobe::simnet::{generate_fleet, ground_truth_sets, launch_fleet, FleetParams};
use aliasprobe::validation::cross_protocol_agreement;
use aliasprobe::wire::{
    decode_bgp_message, decode_ssh_packet, encode_bgp_open, encode_ssh_packet, parse_kexinit,
    BgpMessage, BgpOpen, Capability, SshKexInit, SSH_PACKET_CAP,
};
use aliasprobe::{ProbeTarget, Protocol, ScanRecord, ScanStatus, Source};

type Outcome = Result<String, String>;
type Check = (&'static str, Duration, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let checks: [Check; 8] = [
        (
            "AC1 codec fidelity",
            Duration::from_millis(1),
            codec_fidelity,
        ),
        ("AC2 round trips", Duration::from_secs(5), round_trips),
        (
            "AC3 grouping oracle",
            Duration::from_secs(60),
            grouping_oracle,
        ),
        (
            "AC4 end-to-end recovery",
            Duration::from_secs(120),
            end_to_end,
        ),
        (
            "AC5 validation mechanics",
            Duration::from_secs(1),
            validation_mechanics,
        ),
        ("AC6 pacing", Duration::from_secs(30), pacing),
        ("AC7 AS analysis", Duration::from_secs(10), as_analysis),
        ("AC8 determinism", Duration::from_secs(60), determinism),
    ];
    let mut failed = 0;
    for (name, limit, check) in checks {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_text(&p))));
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > limit => {
                Err(format!("{detail}; took {elapsed:?}, limit {limit:?}"))
            }
            other => other,
        };
        match result {
            Ok(detail) => println!("PASS {name} ({elapsed:.2?}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} ({elapsed:.2?}): {why}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn panic_text(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .expect("runtime")
}

/// The reference OPEN, assembled field by field.
fn reference_open_bytes() -> Vec<u8> {
    let mut b = vec![0xff; 16];
    b.extend(37u16.to_be_bytes());
    b.push(1); // OPEN
    b.push(4);
    b.extend(23456u16.to_be_bytes());
    b.extend(90u16.to_be_bytes());
    b.extend([148, 170, 0, 33]);
    b.push(8);
    b.extend([2, 2, 128, 0]);
    b.extend([2, 2, 2, 0]);
    b
}

fn codec_fidelity() -> Outcome {
    let fixture =
        hex::decode("ffffffffffffffffffffffffffffffff002501045ba0005a94aa0021080202800002020200")
            .unwrap();
    ensure!(
        fixture == reference_open_bytes(),
        "fixture bytes differ from the field layout"
    );
    let start = Instant::now();
    let (msg, used) = decode_bgp_message(&fixture).map_err(|e| e.to_string())?;
    let mut notify = vec![0xff; 16];
    notify.extend([0, 21, 3, 6, 5]);
    let (note, _) = decode_bgp_message(&notify).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let BgpMessage::Open(open) = msg else {
        return Err(format!("expected OPEN, got {msg:?}"));
    };
    ensure!(
        used == 37 && open.length == 37,
        "length {} used {used}",
        open.length
    );
    ensure!(open.version == 4, "version {}", open.version);
    ensure!(open.my_as == 23456, "my_as {}", open.my_as);
    ensure!(open.hold_time == 90, "hold_time {}", open.hold_time);
    ensure!(
        open.bgp_identifier == Ipv4Addr::new(148, 170, 0, 33),
        "id {}",
        open.bgp_identifier
    );
    ensure!(
        open.opt_params_length == 8,
        "opt len {}",
        open.opt_params_length
    );
    ensure!(
        open.capabilities == vec![Capability::new(128, vec![]), Capability::new(2, vec![])],
        "capabilities {:?}",
        open.capabilities
    );
    let BgpMessage::Notification(n) = note else {
        return Err(format!("expected NOTIFICATION, got {note:?}"));
    };
    ensure!(
        (n.major_code, n.minor_code) == (6, 5),
        "notification ({},{})",
        n.major_code,
        n.minor_code
    );
    ensure!(
        elapsed < Duration::from_millis(1),
        "decoding took {elapsed:?}"
    );
    Ok(format!("decode {elapsed:?}"))
}

fn random_open(rng: &mut ChaCha8Rng) -> BgpOpen {
    let mut caps = Vec::new();
    let mut budget = 255usize;
    for _ in 0..rng.random_range(0..6) {
        let len = rng.random_range(0..=16usize);
        if 4 + len > budget {
            break;
        }
        budget -= 4 + len;
        caps.push(Capability::new(
            rng.random(),
            (0..len).map(|_| rng.random()).collect(),
        ));
    }
    let mut raw = Vec::new();
    if rng.random_bool(0.3) && budget >= 6 {
        // an opaque non-capability parameter
        raw.extend([1u8, 4]);
        raw.extend(rng.random::<[u8; 4]>());
    }
    BgpOpen::new(
        4,
        rng.random(),
        rng.random(),
        Ipv4Addr::from(rng.random::<u32>()),
        caps,
        raw,
    )
}

fn random_names(rng: &mut ChaCha8Rng) -> Vec<String> {
    const CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789-@.";
    (0..rng.random_range(0..6))
        .map(|_| {
            (0..rng.random_range(1..24))
                .map(|_| CHARS[rng.random_range(0..CHARS.len())] as char)
                .collect()
        })
        .collect()
}

fn round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..1000 {
        let open = random_open(&mut rng);
        let bytes = encode_bgp_open(&open).map_err(|e| format!("open {i}: {e}"))?;
        let (back, used) = decode_bgp_message(&bytes).map_err(|e| format!("open {i}: {e}"))?;
        ensure!(
            used == bytes.len(),
            "open {i}: consumed {used} of {}",
            bytes.len()
        );
        ensure!(
            back == BgpMessage::Open(open.clone()),
            "open {i}: {open:?} became {back:?}"
        );
    }
    for i in 0..1000 {
        let kex = SshKexInit {
            cookie: rng.random(),
            kex_algorithms: random_names(&mut rng),
            server_host_key_algorithms: random_names(&mut rng),
            encryption_c2s: random_names(&mut rng),
            encryption_s2c: random_names(&mut rng),
            mac_c2s: random_names(&mut rng),
            mac_s2c: random_names(&mut rng),
            compression_c2s: random_names(&mut rng),
            compression_s2c: random_names(&mut rng),
            languages_c2s: random_names(&mut rng),
            languages_s2c: random_names(&mut rng),
            first_kex_packet_follows: rng.random(),
            reserved: rng.random(),
        };
        let packet = encode_ssh_packet(&kex.encode());
        let (payload, used) =
            decode_ssh_packet(&packet, SSH_PACKET_CAP).map_err(|e| format!("kexinit {i}: {e}"))?;
        ensure!(used == packet.len(), "kexinit {i}: consumed {used}");
        let back = parse_kexinit(&payload).map_err(|e| format!("kexinit {i}: {e}"))?;
        ensure!(back == kex, "kexinit {i} changed in transit");
    }
    Ok("1000 OPEN + 1000 KEXINIT".into())
}

/// Repeatedly relabels addresses with the smallest label seen on any shared
/// identifier until nothing changes.
fn closure_oracle(mappings: &[Mapping]) -> BTreeSet<BTreeSet<IpAddr>> {
    let addrs: Vec<IpAddr> = mappings
        .iter()
        .map(|m| m.address)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: HashMap<IpAddr, usize> = addrs.iter().enumerate().map(|(i, a)| (*a, i)).collect();
    let mut ids: HashMap<(String, Digest), Vec<usize>> = HashMap::new();
    for m in mappings {
        ids.entry((m.protocol_label.to_string(), m.digest))
            .or_default()
            .push(index[&m.address]);
    }
    let mut label: Vec<usize> = (0..addrs.len()).collect();
    loop {
        let mut changed = false;
        for members in ids.values() {
            let low = members.iter().map(|&i| label[i]).min().unwrap();
            for &i in members {
                if label[i] != low {
                    label[i] = low;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut groups: BTreeMap<usize, BTreeSet<IpAddr>> = BTreeMap::new();
    for (i, a) in addrs.iter().enumerate() {
        groups.entry(label[i]).or_default().insert(*a);
    }
    groups.into_values().collect()
}

fn random_mappings(rng: &mut ChaCha8Rng) -> Vec<Mapping> {
    let n = rng.random_range(1..=10_000usize);
    let address_pool = rng.random_range(1..=n.max(2));
    let digest_pool = rng.random_range(1..=n.max(2));
    let labels = [
        ProtocolLabel::Ssh,
        ProtocolLabel::Bgp,
        ProtocolLabel::External("scan".into()),
    ];
    (0..n)
        .map(|_| {
            let a = rng.random_range(0..address_pool) as u32;
            let address = if rng.random_bool(0.7) {
                IpAddr::V4(Ipv4Addr::from(0x0a00_0000 + a))
            } else {
                IpAddr::V6(Ipv6Addr::from(0x2001_0db8u128 << 96 | a as u128))
            };
            let label = labels[rng.random_range(0..labels.len())].clone();
            let d = rng.random_range(0..digest_pool);
            Mapping::new(address, label, Digest::of(&d.to_string()))
        })
        .collect()
}

fn grouping_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut largest = 0;
    for instance in 0..100 {
        let mappings = random_mappings(&mut rng);
        largest = largest.max(mappings.len());
        let got: BTreeSet<BTreeSet<IpAddr>> = merge_cross_protocol(&group_by_identifier(&mappings))
            .into_iter()
            .map(|s| s.addresses)
            .collect();
        let want = closure_oracle(&mappings);
        ensure!(
            got == want,
            "instance {instance} ({} mappings): {} sets vs oracle {}",
            mappings.len(),
            got.len(),
            want.len()
        );
    }
    Ok(format!("100 instances, largest {largest} mappings"))
}

fn end_to_end() -> Outcome {
    let spec = generate_fleet(&FleetParams::default(), 11);
    let truth = ground_truth_sets(&spec, Default::default());
    ensure!(
        truth.confusion.is_empty(),
        "fleet has indistinguishable hosts"
    );
    ensure!(
        spec.hosts.len() == 50
            && spec
                .hosts
                .iter()
                .all(|h| (1..=4).contains(&h.interfaces.len())),
        "fleet shape"
    );

    // planted composition, counted from the host list
    let mut planted = DualStackHistogram::default();
    for h in &spec.hosts {
        let v4 = h.interfaces.iter().filter(|a| a.is_ipv4()).count();
        let v6 = h.interfaces.len() - v4;
        if v4 > 0 && v6 > 0 {
            planted.add(v4, v6);
        }
    }
    ensure!(
        planted.total() == 10,
        "planted {} dual-stack hosts",
        planted.total()
    );

    let targets = plan_targets(
        &spec
            .all_addresses()
            .into_iter()
            .map(IpNet::from)
            .collect::<Vec<_>>(),
        &[Protocol::Ssh, Protocol::Bgp],
        &PortConfig::default(),
        11,
        1 << 16,
    )
    .map_err(|e| e.to_string())?;
    let cfg = ScanConfig {
        rate: 2000.0,
        per_target_interval: Duration::ZERO,
        concurrency: 128,
        retries: 0,
    };
    let records = runtime().block_on(async {
        let fleet = launch_fleet(&spec).await.map_err(|e| e.to_string())?;
        let timeouts = Timeouts {
            connect: Duration::from_secs(2),
            ssh_read: Duration::from_secs(2),
            bgp_wait: Duration::from_millis(500),
        };
        let prober = Arc::new(NetworkProber::new(
            Arc::new(fleet.address_map().clone()),
            timeouts,
            11,
        ));
        let mut records = Vec::new();
        run_scan(targets, prober, &cfg, |r| records.push(r))
            .await
            .map_err(|e| e.to_string())?;
        drop(fleet);
        Ok::<_, String>(records)
    })?;

    let extraction = extract_identifiers(&records, &[], &ExtractionConfig::default());
    let res = resolve(&extraction.mappings, &ResolveConfig::default());
    let got: BTreeSet<BTreeSet<IpAddr>> = res.merged.iter().map(|s| s.addresses.clone()).collect();
    let want: BTreeSet<BTreeSet<IpAddr>> = truth.expected_sets.iter().cloned().collect();
    ensure!(
        got == want,
        "recovered {} sets, expected {}; missing {:?}; extra {:?}",
        got.len(),
        want.len(),
        want.difference(&got).collect::<Vec<_>>(),
        got.difference(&want).collect::<Vec<_>>()
    );
    let dual = derive_dual_stack(&res.merged);
    let got_dual: BTreeSet<BTreeSet<IpAddr>> = res
        .merged
        .iter()
        .filter(|s| s.is_dual_stack())
        .map(|s| s.addresses.clone())
        .collect();
    let want_dual: BTreeSet<BTreeSet<IpAddr>> = truth.expected_dual_stack.iter().cloned().collect();
    ensure!(got_dual == want_dual, "dual-stack sets differ");
    ensure!(
        dual.histogram == planted && truth.dual_stack_histogram == planted,
        "histogram {:?}, planted {:?}",
        dual.histogram.as_tuple(),
        planted.as_tuple()
    );
    Ok(format!(
        "{} records, {} sets, dual-stack 1+1/2-10/>10 = {:?}",
        records.len(),
        got.len(),
        planted.as_tuple()
    ))
}

fn set(id: u64, addrs: &[IpAddr], label: ProtocolLabel) -> AliasSet {
    AliasSet {
        set_id: id,
        addresses: addrs.iter().copied().collect(),
        protocols: [label].into(),
        ..Default::default()
    }
}

fn validation_mechanics() -> Outcome {
    let n = 20u32;
    let addr = |host: u32, i: u32| IpAddr::V4(Ipv4Addr::from(0x0a00_0000 + host * 16 + i));
    let mut ssh = Vec::new();
    let mut bgp = Vec::new();
    for h in 0..n {
        let addrs: Vec<IpAddr> = (0..4).map(|i| addr(h, i)).collect();
        ssh.push(set(h as u64, &addrs, ProtocolLabel::Ssh));
        if h == 7 {
            bgp.push(set(100 + h as u64, &addrs[..2], ProtocolLabel::Bgp));
            bgp.push(set(200 + h as u64, &addrs[2..], ProtocolLabel::Bgp));
        } else {
            bgp.push(set(100 + h as u64, &addrs, ProtocolLabel::Bgp));
        }
    }
    let report = cross_protocol_agreement(&ssh, &bgp);
    ensure!(
        report.sample_size == n as usize,
        "sample size {}",
        report.sample_size
    );
    ensure!(
        report.agree == n as usize - 1 && report.disagree == 1,
        "agree {} disagree {}",
        report.agree,
        report.disagree
    );
    let d = &report.disagreements[0];
    ensure!(d.detail == "split into 2", "detail {:?}", d.detail);
    ensure!(
        d.addresses.len() == 4
            && d.addresses
                .iter()
                .all(|a| *a >= addr(7, 0) && *a <= addr(7, 3)),
        "wrong set"
    );
    Ok(format!(
        "agree {} disagree {} ({})",
        report.agree, report.disagree, d.detail
    ))
}

/// Answers instantly and remembers when each address was touched.
struct RecordingProber {
    log: Mutex<Vec<(IpAddr, Instant)>>,
}

impl Prober for RecordingProber {
    fn probe(&self, target: ProbeTarget) -> BoxFuture<'_, ScanRecord> {
        self.log
            .lock()
            .unwrap()
            .push((target.address, Instant::now()));
        Box::pin(async move { ScanRecord::empty(target, ScanStatus::NoConnect, 0, Source::Active) })
    }
}

fn pacing() -> Outcome {
    let interval = Duration::from_secs(1);
    let slack = Duration::from_millis(50);
    let hot = IpAddr::V4(Ipv4Addr::new(192, 0, 2, 1));
    let mut targets = vec![
        ProbeTarget::new(hot, Protocol::Ssh),
        ProbeTarget::new(hot, Protocol::Bgp),
        ProbeTarget::new(hot, Protocol::Ssh),
    ];
    for i in 0..97u32 {
        targets.push(ProbeTarget::new(
            IpAddr::V4(Ipv4Addr::from(0xc633_6400 + i)),
            Protocol::Ssh,
        ));
    }
    let prober = Arc::new(RecordingProber {
        log: Mutex::new(Vec::new()),
    });
    let cfg = ScanConfig {
        rate: 1000.0,
        per_target_interval: interval,
        concurrency: 32,
        retries: 0,
    };
    let outcome = runtime()
        .block_on(run_scan(targets, Arc::clone(&prober), &cfg, |_| {}))
        .map_err(|e| e.to_string())?;
    ensure!(
        outcome.summary.records == 100,
        "{} records",
        outcome.summary.records
    );

    let mut by_addr: BTreeMap<IpAddr, Vec<Instant>> = BTreeMap::new();
    for (a, t) in prober.log.lock().unwrap().iter() {
        by_addr.entry(*a).or_default().push(*t);
    }
    let mut min_gap: Option<Duration> = None;
    for times in by_addr.values_mut() {
        times.sort();
        for w in times.windows(2) {
            let gap = w[1] - w[0];
            min_gap = Some(min_gap.map_or(gap, |m| m.min(gap)));
        }
    }
    let min_gap = min_gap.ok_or("no repeated address was probed")?;
    ensure!(
        by_addr[&hot].len() == 3,
        "hot address probed {} times",
        by_addr[&hot].len()
    );
    ensure!(min_gap + slack >= interval, "observed gap {min_gap:?}");
    let dispatched = min_same_address_gap(&outcome.dispatches).ok_or("no dispatch gap")?;
    ensure!(dispatched >= interval, "dispatch gap {dispatched:?}");
    Ok(format!("smallest same-address gap {min_gap:.3?}"))
}

fn lpm_oracle(entries: &[(IpNet, u32)], addr: IpAddr) -> Option<u32> {
    entries
        .iter()
        .filter(|(net, _)| net.contains(&addr))
        .max_by_key(|(net, _)| net.prefix_len())
        .map(|(_, asn)| *asn)
}

fn as_analysis() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut entries: BTreeMap<IpNet, u32> = BTreeMap::new();
    while entries.len() < 1000 {
        let net = if rng.random_bool(0.7) {
            let a = Ipv4Addr::from(0x0a00_0000 | (rng.random::<u32>() & 0x00ff_ffff));
            IpNet::new(a.into(), rng.random_range(8..=28))
                .unwrap()
                .trunc()
        } else {
            let a = Ipv6Addr::from(0x2001_0db8u128 << 96 | (rng.random::<u128>() >> 32));
            IpNet::new(a.into(), rng.random_range(32..=64))
                .unwrap()
                .trunc()
        };
        entries.insert(net, rng.random_range(1..65536));
    }
    let list: Vec<(IpNet, u32)> = entries.iter().map(|(n, a)| (*n, *a)).collect();
    let mut table = PrefixTable::new();
    for (net, asn) in &list {
        table.insert(*net, *asn);
    }
    let mut hits = 0;
    for i in 0..10_000 {
        let addr = if rng.random_bool(0.7) {
            IpAddr::V4(Ipv4Addr::from(
                if rng.random_bool(0.9) {
                    0x0a00_0000
                } else {
                    0x0b00_0000
                } | (rng.random::<u32>() & 0x00ff_ffff),
            ))
        } else {
            IpAddr::V6(Ipv6Addr::from(
                0x2001_0db8u128 << 96 | (rng.random::<u128>() >> 32),
            ))
        };
        let want = lpm_oracle(&list, addr);
        let got = table.lookup(addr);
        ensure!(got == want, "lookup {i} {addr}: {got:?} vs {want:?}");
        hits += want.is_some() as usize;
    }

    // Border routers: each BGP speaker spans 2 or 3 ASes through its
    // interfaces. SSH servers sit inside one AS, except 2 multihomed ones.
    let mut topo = PrefixTable::new();
    for asn in 0..10u32 {
        topo.insert(format!("10.{asn}.0.0/16").parse().unwrap(), 64500 + asn);
    }
    let ip = |asn: u32, host: u32| {
        IpAddr::V4(Ipv4Addr::new(
            10,
            asn as u8,
            (host / 250) as u8,
            (host % 250) as u8 + 1,
        ))
    };
    let mut mappings = Vec::new();
    let mut next = 0u32;
    for r in 0..20u32 {
        let spans = if r < 12 { 2 + r % 2 } else { 1 };
        let d = Digest::of(&format!("router-{r}"));
        for k in 0..3 {
            next += 1;
            mappings.push(Mapping::new(
                ip((r + k % spans) % 10, next),
                ProtocolLabel::Bgp,
                d,
            ));
        }
    }
    for s in 0..20u32 {
        let d = Digest::of(&format!("server-{s}"));
        for k in 0..2 {
            next += 1;
            let asn = if s < 2 { (s + k) % 10 } else { s % 10 };
            mappings.push(Mapping::new(ip(asn, next), ProtocolLabel::Ssh, d));
        }
    }
    let fraction = |label: ProtocolLabel| {
        let ms: Vec<Mapping> = mappings
            .iter()
            .filter(|m| m.protocol_label == label)
            .cloned()
            .collect();
        asn_per_set(
            &view_groups(&group_by_identifier(&ms), FamilyView::All),
            &topo,
        )
        .multi_as_fraction
    };
    let (bgp, ssh) = (fraction(ProtocolLabel::Bgp), fraction(ProtocolLabel::Ssh));
    ensure!(
        (bgp - 0.6).abs() < 1e-12 && (ssh - 0.1).abs() < 1e-12,
        "bgp {bgp} ssh {ssh}"
    );
    ensure!(bgp > ssh, "bgp {bgp} not above ssh {ssh}");
    Ok(format!(
        "10000 lookups ({hits} mapped) match; multi-AS bgp {bgp:.2} > ssh {ssh:.2}"
    ))
}

fn determinism() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_aliasprobe");
    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");
    let run_once = |dir: &std::path::Path| -> Result<BTreeMap<String, Vec<u8>>, String> {
        let d = |name: &str| dir.join(name).to_string_lossy().into_owned();
        let f = |name: &str| format!("{fixtures}/{name}");
        let steps: [Vec<String>; 3] = [
            vec![
                "identify".into(),
                "--records".into(),
                f("records.jsonl"),
                "--external".into(),
                f("external_ids.csv"),
                "--out".into(),
                d("ids.csv"),
                "--report".into(),
                d("extraction.json"),
            ],
            vec![
                "resolve".into(),
                "--in".into(),
                d("ids.csv"),
                "--out".into(),
                d("sets.jsonl"),
                "--summary".into(),
                d("resolve.json"),
            ],
            vec![
                "report".into(),
                "--sets".into(),
                d("sets.jsonl"),
                "--ids".into(),
                d("ids.csv"),
                "--records".into(),
                f("records.jsonl"),
                "--pfx2as".into(),
                f("pfx2as.txt"),
                "--out".into(),
                d("report"),
            ],
        ];
        for args in steps {
            let out = std::process::Command::new(bin)
                .args(&args)
                .output()
                .map_err(|e| e.to_string())?;
            ensure!(
                out.status.success(),
                "{} failed: {}",
                args[0],
                String::from_utf8_lossy(&out.stderr)
            );
        }
        let mut files = BTreeMap::new();
        collect(dir, dir, &mut files).map_err(|e| e.to_string())?;
        Ok(files)
    };
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let first = run_once(a.path())?;
    let second = run_once(b.path())?;
    ensure!(first.len() >= 15, "only {} output files", first.len());
    for (name, bytes) in &first {
        ensure!(
            second.get(name) == Some(bytes),
            "{name} differs between runs"
        );
    }
    ensure!(first.keys().eq(second.keys()), "file lists differ");
    Ok(format!("{} files identical", first.len()))
}

fn collect(
    root: &std::path::Path,
    dir: &std::path::Path,
    out: &mut BTreeMap<String, Vec<u8>>,
) -> std::io::Result<()> {
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .unwrap()
                .to_string_lossy()
                .into_owned();
            out.insert(rel, std::fs::read(&path)?);
        }
    }
    Ok(())
}
