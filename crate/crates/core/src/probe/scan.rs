//! The scan loop: one task owns pacing and dispatch, probes run
//! concurrently, records come back through the same loop.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::net::IpAddr;
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;
use tokio::task::JoinSet;
use tokio::time::Instant;

use crate::record::{now_utc_seconds, ProbeTarget, Protocol, ScanRecord, ScanStatus, Source};

use super::session::Prober;

#[derive(Debug, Error, PartialEq)]
pub enum ScanConfigError {
    #[error("rate must be a positive number of probes per second, got {0}")]
    BadRate(f64),
    #[error("concurrency must be at least 1")]
    BadConcurrency,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanConfig {
    /// Probes per second across the whole scan.
    pub rate: f64,
    /// Minimum spacing between two probes to one address, any protocol.
    pub per_target_interval: Duration,
    pub concurrency: usize,
    /// Extra attempts for targets that ended `no_connect` or `timeout`.
    pub retries: u32,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            rate: 100.0,
            per_target_interval: Duration::from_secs(1),
            concurrency: 64,
            retries: 0,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<(), ScanConfigError> {
        if !(self.rate.is_finite() && self.rate > 0.0) {
            return Err(ScanConfigError::BadRate(self.rate));
        }
        if self.concurrency == 0 {
            return Err(ScanConfigError::BadConcurrency);
        }
        Ok(())
    }
}

/// When a probe was handed to a task.
#[derive(Debug, Clone, Copy)]
pub struct Dispatch {
    pub target: ProbeTarget,
    pub at: Instant,
    pub attempt: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ScanSummary {
    pub targets: usize,
    pub records: usize,
    pub probes_sent: usize,
    pub retried: usize,
    pub by_status: BTreeMap<String, usize>,
    pub by_protocol: BTreeMap<String, usize>,
    pub elapsed_ms: u64,
}

#[derive(Debug, Default)]
pub struct ScanOutcome {
    pub summary: ScanSummary,
    pub dispatches: Vec<Dispatch>,
}

/// Single-token bucket: at most one probe per `1/rate` seconds, no burst.
#[derive(Debug)]
struct Pacer {
    period: Duration,
    next: Instant,
}

impl Pacer {
    fn new(rate: f64, start: Instant) -> Self {
        let period = Duration::from_secs_f64(1.0 / rate);
        Pacer {
            period,
            next: start + period,
        }
    }

    fn take(&mut self, now: Instant) {
        self.next = self.next.max(now) + self.period;
    }
}

fn failed_record(target: ProbeTarget, why: String) -> ScanRecord {
    let status = ScanStatus::ConnectOnly;
    ScanRecord::empty(target, status, now_utc_seconds(), Source::Active).with_error(why)
}

/// Probes every target once (plus retries) and hands each final record to
/// `emit` as it completes. Every target yields exactly one record, even
/// if its probe task panics.
pub async fn run_scan<P, F>(
    targets: Vec<ProbeTarget>,
    prober: Arc<P>,
    cfg: &ScanConfig,
    mut emit: F,
) -> Result<ScanOutcome, ScanConfigError>
where
    P: Prober + ?Sized + 'static,
    F: FnMut(ScanRecord),
{
    cfg.validate()?;
    let start = Instant::now();
    let mut outcome = ScanOutcome::default();
    outcome.summary.targets = targets.len();

    let mut queue: VecDeque<(ProbeTarget, u32)> = targets.into_iter().map(|t| (t, 0)).collect();
    let mut last_probe: HashMap<IpAddr, Instant> = HashMap::new();
    let mut pacer = Pacer::new(cfg.rate, start);
    let mut tasks: JoinSet<ScanRecord> = JoinSet::new();
    let mut running: HashMap<tokio::task::Id, (ProbeTarget, u32)> = HashMap::new();

    let mut finish = |outcome: &mut ScanOutcome, rec: ScanRecord| {
        let s = &mut outcome.summary;
        s.records += 1;
        *s.by_status
            .entry(rec.status.as_str().to_string())
            .or_default() += 1;
        *s.by_protocol
            .entry(rec.protocol().as_str().to_string())
            .or_default() += 1;
        emit(rec);
    };

    loop {
        if queue.is_empty() && tasks.is_empty() {
            break;
        }
        let now = Instant::now();
        let ready_at = |addr: &IpAddr| last_probe.get(addr).map(|t| *t + cfg.per_target_interval);
        let mut wake: Option<Instant> = None;

        if tasks.len() < cfg.concurrency && !queue.is_empty() {
            let eligible = queue
                .iter()
                .position(|(t, _)| ready_at(&t.address).is_none_or(|r| r <= now));
            match eligible {
                Some(idx) if pacer.next <= now => {
                    let (target, attempt) = queue.remove(idx).expect("index in range");
                    pacer.take(now);
                    last_probe.insert(target.address, now);
                    outcome.dispatches.push(Dispatch {
                        target,
                        at: now,
                        attempt,
                    });
                    outcome.summary.probes_sent += 1;
                    let p = Arc::clone(&prober);
                    let handle = tasks.spawn(async move { p.probe(target).await });
                    running.insert(handle.id(), (target, attempt));
                    continue;
                }
                Some(_) => wake = Some(pacer.next),
                None => {
                    let earliest = queue
                        .iter()
                        .filter_map(|(t, _)| ready_at(&t.address))
                        .min()
                        .unwrap_or(now);
                    wake = Some(earliest.max(pacer.next));
                }
            }
        }

        tokio::select! {
            joined = tasks.join_next_with_id(), if !tasks.is_empty() => {
                let Some(joined) = joined else { continue };
                let (id, rec) = match joined {
                    Ok((id, rec)) => (id, Ok(rec)),
                    Err(e) => (e.id(), Err(e)),
                };
                let (target, attempt) = running.remove(&id).expect("task registered");
                let rec = match rec {
                    Ok(rec) => rec,
                    Err(e) => {
                        log::warn!("probe task for {}:{} failed: {e}", target.address, target.port);
                        failed_record(target, format!("probe task failed: {e}"))
                    }
                };
                let retryable = matches!(rec.status, ScanStatus::NoConnect | ScanStatus::Timeout);
                if retryable && attempt < cfg.retries {
                    outcome.summary.retried += 1;
                    queue.push_back((target, attempt + 1));
                } else {
                    finish(&mut outcome, rec);
                }
            }
            _ = tokio::time::sleep_until(wake.unwrap_or(now)), if wake.is_some() => {}
        }
    }
    outcome.summary.elapsed_ms = start.elapsed().as_millis() as u64;
    Ok(outcome)
}

/// Smallest gap between two dispatches to the same address.
pub fn min_same_address_gap(dispatches: &[Dispatch]) -> Option<Duration> {
    let mut by_addr: HashMap<IpAddr, Vec<Instant>> = HashMap::new();
    for d in dispatches {
        by_addr.entry(d.target.address).or_default().push(d.at);
    }
    by_addr
        .values_mut()
        .flat_map(|times| {
            times.sort();
            times.windows(2).map(|w| w[1] - w[0]).collect::<Vec<_>>()
        })
        .min()
}

pub fn protocol_counts(records: &[ScanRecord]) -> BTreeMap<Protocol, usize> {
    let mut out = BTreeMap::new();
    for r in records {
        *out.entry(r.protocol()).or_default() += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::session::BoxFuture;
    use std::sync::Mutex;

    struct Fake {
        calls: Mutex<Vec<(ProbeTarget, Instant)>>,
        status: ScanStatus,
        panic_on: Option<IpAddr>,
        delay: Duration,
    }

    impl Fake {
        fn new(status: ScanStatus) -> Self {
            Fake {
                calls: Mutex::new(Vec::new()),
                status,
                panic_on: None,
                delay: Duration::from_millis(5),
            }
        }
    }

    impl Prober for Fake {
        fn probe(&self, target: ProbeTarget) -> BoxFuture<'_, ScanRecord> {
            Box::pin(async move {
                self.calls.lock().unwrap().push((target, Instant::now()));
                tokio::time::sleep(self.delay).await;
                if Some(target.address) == self.panic_on {
                    panic!("boom");
                }
                ScanRecord::empty(target, self.status, 0, Source::Active)
            })
        }
    }

    fn targets(n: u32, p: Protocol) -> Vec<ProbeTarget> {
        (0..n)
            .map(|i| ProbeTarget::new(IpAddr::from((0x0a00_0000 + i).to_be_bytes()), p))
            .collect()
    }

    #[tokio::test(start_paused = true)]
    async fn rate_bounds_wall_clock() {
        let fake = Arc::new(Fake::new(ScanStatus::FullHandshake));
        let cfg = ScanConfig {
            rate: 50.0,
            concurrency: 16,
            ..Default::default()
        };
        let mut got = Vec::new();
        let out = run_scan(targets(100, Protocol::Ssh), fake, &cfg, |r| got.push(r))
            .await
            .unwrap();
        assert_eq!(got.len(), 100);
        assert!(out.summary.elapsed_ms >= 2000, "{}", out.summary.elapsed_ms);
        assert_eq!(out.summary.by_status["full_handshake"], 100);
        let gaps: Vec<Duration> = out
            .dispatches
            .windows(2)
            .map(|w| w[1].at - w[0].at)
            .collect();
        assert!(gaps.iter().all(|g| *g >= Duration::from_millis(20)));
    }

    #[tokio::test(start_paused = true)]
    async fn same_address_across_protocols_is_spaced() {
        let fake = Arc::new(Fake::new(ScanStatus::FullHandshake));
        let addr: IpAddr = "192.0.2.1".parse().unwrap();
        let ts = vec![
            ProbeTarget::new(addr, Protocol::Ssh),
            ProbeTarget::new(addr, Protocol::Bgp),
        ];
        let cfg = ScanConfig {
            rate: 1000.0,
            ..Default::default()
        };
        let out = run_scan(ts, fake.clone(), &cfg, |_| {}).await.unwrap();
        let calls = fake.calls.lock().unwrap();
        assert_eq!(calls.len(), 2);
        assert!(calls[1].1 - calls[0].1 >= Duration::from_secs(1));
        assert!(min_same_address_gap(&out.dispatches).unwrap() >= Duration::from_secs(1));
    }

    #[tokio::test(start_paused = true)]
    async fn blocked_address_does_not_stall_others() {
        let fake = Arc::new(Fake::new(ScanStatus::FullHandshake));
        let addr: IpAddr = "192.0.2.1".parse().unwrap();
        let mut ts = vec![
            ProbeTarget::new(addr, Protocol::Ssh),
            ProbeTarget::new(addr, Protocol::Bgp),
        ];
        ts.extend(targets(10, Protocol::Ssh));
        let cfg = ScanConfig {
            rate: 1000.0,
            ..Default::default()
        };
        let out = run_scan(ts, fake, &cfg, |_| {}).await.unwrap();
        // the other ten go out while 192.0.2.1 waits
        assert_eq!(
            out.dispatches.last().unwrap().target.protocol,
            Protocol::Bgp
        );
        assert_eq!(out.summary.records, 12);
    }

    #[tokio::test(start_paused = true)]
    async fn panicking_probe_still_yields_record() {
        let mut fake = Fake::new(ScanStatus::FullHandshake);
        fake.panic_on = Some("10.0.0.3".parse().unwrap());
        let mut got = Vec::new();
        let out = run_scan(
            targets(10, Protocol::Bgp),
            Arc::new(fake),
            &ScanConfig::default(),
            |r| got.push(r),
        )
        .await
        .unwrap();
        assert_eq!(got.len(), 10);
        let failed = got
            .iter()
            .find(|r| r.address().to_string() == "10.0.0.3")
            .unwrap();
        assert!(failed
            .error
            .as_deref()
            .unwrap()
            .contains("probe task failed"));
        assert_eq!(out.summary.records, out.summary.targets);
    }

    #[tokio::test(start_paused = true)]
    async fn retries_once() {
        let fake = Arc::new(Fake::new(ScanStatus::Timeout));
        let cfg = ScanConfig {
            retries: 1,
            ..Default::default()
        };
        let out = run_scan(targets(3, Protocol::Ssh), fake.clone(), &cfg, |_| {})
            .await
            .unwrap();
        assert_eq!(out.summary.probes_sent, 6);
        assert_eq!(out.summary.retried, 3);
        assert_eq!(out.summary.records, 3);
        assert_eq!(fake.calls.lock().unwrap().len(), 6);
    }

    #[tokio::test(start_paused = true)]
    async fn concurrency_limit_respected() {
        let mut fake = Fake::new(ScanStatus::FullHandshake);
        fake.delay = Duration::from_secs(1);
        let cfg = ScanConfig {
            rate: 1000.0,
            concurrency: 2,
            ..Default::default()
        };
        let out = run_scan(targets(4, Protocol::Ssh), Arc::new(fake), &cfg, |_| {})
            .await
            .unwrap();
        // two waves of one second each
        assert!(out.summary.elapsed_ms >= 2000);
        assert!(out.summary.elapsed_ms < 2100);
    }

    #[tokio::test]
    async fn bad_config_rejected() {
        let fake = Arc::new(Fake::new(ScanStatus::Timeout));
        for rate in [0.0, -1.0, f64::NAN] {
            let cfg = ScanConfig {
                rate,
                ..Default::default()
            };
            assert!(matches!(
                run_scan(vec![], fake.clone(), &cfg, |_| {}).await,
                Err(ScanConfigError::BadRate(_))
            ));
        }
        let cfg = ScanConfig {
            concurrency: 0,
            ..Default::default()
        };
        assert_eq!(
            run_scan(vec![], fake, &cfg, |_| {}).await.unwrap_err(),
            ScanConfigError::BadConcurrency
        );
    }
}
