//! Single-target probes: connect, talk just enough to harvest identifier
//! fields, and turn whatever happened into a [`ScanRecord`].

use std::future::Future;
use std::net::SocketAddr;
use std::pin::Pin;
use std::sync::Arc;
use std::time::Duration;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};
use tokio::net::TcpStream;
use tokio::time::Instant;

use crate::record::{
    now_utc_seconds, BgpArtifacts, ProbeTarget, Protocol, ScanRecord, ScanStatus, Source,
    SshArtifacts,
};
use crate::wire::kex::{client_kexinit, CLIENT_BANNER};
use crate::wire::{
    decode_bgp_message, run_kex_until_hostkey, BgpError, BgpMessage, KexError, SshConnection,
};

pub type BoxFuture<'a, T> = Pin<Box<dyn Future<Output = T> + Send + 'a>>;

/// Anything that can turn a target into a record. Implementations must not
/// panic on network errors; the scheduler still survives if they do.
pub trait Prober: Send + Sync {
    fn probe(&self, target: ProbeTarget) -> BoxFuture<'_, ScanRecord>;
}

/// Maps a target to the socket actually dialled.
pub trait AddressResolver: Send + Sync {
    fn resolve(&self, target: &ProbeTarget) -> Option<SocketAddr>;
}

/// Dials the target's own address and port.
#[derive(Debug, Clone, Copy, Default)]
pub struct DirectResolver;

impl AddressResolver for DirectResolver {
    fn resolve(&self, target: &ProbeTarget) -> Option<SocketAddr> {
        Some(SocketAddr::new(target.address, target.port))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timeouts {
    pub connect: Duration,
    /// Per read while talking SSH.
    pub ssh_read: Duration,
    /// Total window for BGP data.
    pub bgp_wait: Duration,
}

impl Default for Timeouts {
    fn default() -> Self {
        Timeouts {
            connect: Duration::from_secs(5),
            ssh_read: Duration::from_secs(10),
            bgp_wait: Duration::from_secs(2),
        }
    }
}

pub struct NetworkProber {
    pub resolver: Arc<dyn AddressResolver>,
    pub timeouts: Timeouts,
    /// Seeds the per-target cookie and ephemeral key.
    pub seed: u64,
}

impl NetworkProber {
    pub fn new(resolver: Arc<dyn AddressResolver>, timeouts: Timeouts, seed: u64) -> Self {
        NetworkProber {
            resolver,
            timeouts,
            seed,
        }
    }

    fn rng_for(&self, target: &ProbeTarget) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_be_bytes());
        h.update(format!("{}|{}|{}", target.address, target.port, target.protocol).as_bytes());
        ChaCha8Rng::from_seed(h.finalize().into())
    }

    async fn run(&self, target: ProbeTarget) -> ScanRecord {
        let Some(addr) = self.resolver.resolve(&target) else {
            return ScanRecord::empty(
                target,
                ScanStatus::NoConnect,
                now_utc_seconds(),
                Source::Active,
            )
            .with_error("address not resolvable");
        };
        let stream =
            match tokio::time::timeout(self.timeouts.connect, TcpStream::connect(addr)).await {
                Err(_) => {
                    return ScanRecord::empty(
                        target,
                        ScanStatus::NoConnect,
                        now_utc_seconds(),
                        Source::Active,
                    )
                    .with_error("connect timed out")
                }
                Ok(Err(e)) => {
                    return ScanRecord::empty(
                        target,
                        ScanStatus::NoConnect,
                        now_utc_seconds(),
                        Source::Active,
                    )
                    .with_error(e)
                }
                Ok(Ok(s)) => s,
            };
        match target.protocol {
            Protocol::Ssh => {
                let mut rng = self.rng_for(&target);
                let cookie: [u8; 16] = rng.random();
                let scalar: [u8; 32] = rng.random();
                probe_ssh_stream(stream, target, self.timeouts.ssh_read, cookie, scalar).await
            }
            Protocol::Bgp => probe_bgp_stream(stream, target, self.timeouts.bgp_wait).await,
        }
    }
}

impl Prober for NetworkProber {
    fn probe(&self, target: ProbeTarget) -> BoxFuture<'_, ScanRecord> {
        Box::pin(self.run(target))
    }
}

/// SSH exchange over an established stream.
///
/// | outcome | status |
/// |---------|--------|
/// | peer closes before sending anything | `immediate_close` |
/// | nothing received within the read timeout | `timeout` |
/// | bytes that are not an identification line | `connect_only` |
/// | banner, then no usable KEXINIT | `banner_only` |
/// | KEXINIT received (host key or not) | `full_handshake` |
pub async fn probe_ssh_stream<S: AsyncRead + AsyncWrite + Unpin>(
    stream: S,
    target: ProbeTarget,
    read_timeout: Duration,
    cookie: [u8; 16],
    ephemeral_scalar: [u8; 32],
) -> ScanRecord {
    let now = now_utc_seconds();
    let mut conn = SshConnection::new(stream, read_timeout);
    let record = |status| ScanRecord::empty(target, status, now, Source::Active);

    if let Err(e) = conn.send_line(CLIENT_BANNER).await {
        return record(ScanStatus::ImmediateClose).with_error(e);
    }
    let banner = match conn.read_banner().await {
        Ok(b) => b,
        Err(e) => {
            let status = match (&e, conn.has_received()) {
                (KexError::Closed | KexError::Io(_), false) => ScanStatus::ImmediateClose,
                (KexError::Timeout, false) => ScanStatus::Timeout,
                _ => ScanStatus::ConnectOnly,
            };
            return record(status).with_error(e);
        }
    };
    let mut rec = record(ScanStatus::BannerOnly);
    let mut ssh = SshArtifacts {
        banner,
        kexinit: None,
        hostkey: None,
        hostkey_unavailable: true,
    };
    match conn.read_kexinit().await {
        Ok(server) => {
            rec.status = ScanStatus::FullHandshake;
            match run_kex_until_hostkey(
                &mut conn,
                &server,
                &client_kexinit(cookie),
                ephemeral_scalar,
            )
            .await
            {
                Ok(key) => {
                    ssh.hostkey = Some(key);
                    ssh.hostkey_unavailable = false;
                }
                Err(e) => rec.error = Some(e.to_string()),
            }
            ssh.kexinit = Some(server);
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec.ssh = Some(ssh);
    let _ = conn.get_mut().shutdown().await;
    rec
}

/// Waits for BGP data over an established stream until the peer closes,
/// sends a NOTIFICATION, or `wait` elapses; then decodes what arrived.
pub async fn probe_bgp_stream<S: AsyncRead + AsyncWrite + Unpin>(
    mut stream: S,
    target: ProbeTarget,
    wait: Duration,
) -> ScanRecord {
    let now = now_utc_seconds();
    let deadline = Instant::now() + wait;
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let mut closed = false;
    let mut io_error = None;
    loop {
        match tokio::time::timeout_at(deadline, stream.read(&mut chunk)).await {
            Err(_) => break,
            Ok(Ok(0)) => {
                closed = true;
                break;
            }
            Ok(Ok(n)) => {
                buf.extend_from_slice(&chunk[..n]);
                if holds_notification(&buf) {
                    break;
                }
            }
            Ok(Err(e)) => {
                closed = true;
                io_error = Some(e.to_string());
                break;
            }
        }
    }
    let _ = stream.shutdown().await;

    let mut rec = ScanRecord::empty(target, ScanStatus::ConnectOnly, now, Source::Active);
    if buf.is_empty() {
        rec.status = if closed {
            ScanStatus::ImmediateClose
        } else {
            ScanStatus::Timeout
        };
        rec.error = io_error;
        return rec;
    }
    let mut art = BgpArtifacts::default();
    let mut rest = &buf[..];
    let mut failure = None;
    while !rest.is_empty() {
        match decode_bgp_message(rest) {
            Ok((msg, used)) => {
                match msg {
                    BgpMessage::Open(o) if art.open.is_none() => art.open = Some(o),
                    BgpMessage::Notification(n) if art.notification.is_none() => {
                        art.notification = Some(n)
                    }
                    _ => {}
                }
                rest = &rest[used..];
            }
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
    }
    if let Some(e) = failure {
        art.raw = buf.clone();
        rec.error = Some(match e {
            BgpError::Truncated { .. } => format!("incomplete message: {e}"),
            _ => e.to_string(),
        });
    }
    if art.open.is_some() {
        rec.status = ScanStatus::FullHandshake;
    }
    rec.bgp = Some(art);
    rec
}

fn holds_notification(mut buf: &[u8]) -> bool {
    while let Ok((msg, used)) = decode_bgp_message(buf) {
        if matches!(msg, BgpMessage::Notification(_)) {
            return true;
        }
        buf = &buf[used..];
    }
    false
}
