//! Loopback responders for a fleet.

use std::collections::BTreeMap;
use std::io;
use std::net::{IpAddr, SocketAddr};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::task::{JoinHandle, JoinSet};

use crate::probe::AddressResolver;
use crate::record::{ProbeTarget, Protocol};
use crate::wire::ssh::{put_string, MSG_KEX_ECDH_INIT, MSG_KEX_ECDH_REPLY};
use crate::wire::{encode_bgp_notification, encode_bgp_open, BgpNotification, SshConnection};

use super::spec::{BgpBehavior, FleetSpec, HostSpec, SshBehavior};

/// Longest a responder keeps an idle connection open.
const IDLE_LIMIT: Duration = Duration::from_secs(60);

#[derive(Debug, Error)]
pub enum SimnetError {
    #[error("cannot bind a loopback port: {0}")]
    PortUnavailable(io::Error),
    #[error("host {host:?}: {message}")]
    BadProfile { host: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddressMapEntry {
    pub address: IpAddr,
    pub protocol: Protocol,
    pub socket: SocketAddr,
}

/// Virtual (address, protocol) to the socket that serves it.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AddressMap {
    entries: BTreeMap<(IpAddr, Protocol), SocketAddr>,
}

impl AddressMap {
    pub fn insert(&mut self, address: IpAddr, protocol: Protocol, socket: SocketAddr) {
        self.entries.insert((address, protocol), socket);
    }

    pub fn get(&self, address: IpAddr, protocol: Protocol) -> Option<SocketAddr> {
        self.entries.get(&(address, protocol)).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> String {
        let list: Vec<AddressMapEntry> = self
            .entries
            .iter()
            .map(|((address, protocol), socket)| AddressMapEntry {
                address: *address,
                protocol: *protocol,
                socket: *socket,
            })
            .collect();
        serde_json::to_string_pretty(&list).expect("address map serializes")
    }

    pub fn from_json(text: &str) -> Result<AddressMap, serde_json::Error> {
        let list: Vec<AddressMapEntry> = serde_json::from_str(text)?;
        let mut map = AddressMap::default();
        for e in list {
            map.insert(e.address, e.protocol, e.socket);
        }
        Ok(map)
    }

    pub fn load(path: &Path) -> io::Result<AddressMap> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

/// Dials the mapped socket; unmapped targets are unreachable.
impl AddressResolver for AddressMap {
    fn resolve(&self, target: &ProbeTarget) -> Option<SocketAddr> {
        self.get(target.address, target.protocol)
    }
}

/// Running responders. Dropping the fleet stops them.
pub struct Fleet {
    map: AddressMap,
    tasks: Vec<JoinHandle<()>>,
}

impl Fleet {
    pub fn address_map(&self) -> &AddressMap {
        &self.map
    }

    pub fn listeners(&self) -> usize {
        self.tasks.len()
    }

    /// Stops every listener and open connection. Safe to call twice.
    pub fn shutdown(&mut self) {
        for t in self.tasks.drain(..) {
            t.abort();
        }
    }
}

impl Drop for Fleet {
    fn drop(&mut self) {
        self.shutdown();
    }
}

struct SshEndpoint {
    banner: String,
    kexinit: Vec<u8>,
    behavior: SshBehavior,
    host_key_blob: Vec<u8>,
    server_public: [u8; 32],
}

enum Service {
    Ssh(Arc<SshEndpoint>),
    Bgp {
        behavior: BgpBehavior,
        greeting: Arc<Vec<u8>>,
    },
}

fn ssh_endpoint(host: &HostSpec) -> Option<SshEndpoint> {
    let ssh = host.ssh.as_ref()?;
    let seed = ssh.key_seed.as_deref().unwrap_or(&host.id);
    let scalar: [u8; 32] = Sha256::digest(format!("simnet-ephemeral:{seed}").as_bytes()).into();
    Some(SshEndpoint {
        banner: ssh.banner.clone(),
        kexinit: ssh.kexinit(&host.id).encode(),
        behavior: ssh.behavior,
        host_key_blob: ssh.host_key(&host.id).key_blob,
        server_public: x25519_dalek::x25519(scalar, x25519_dalek::X25519_BASEPOINT_BYTES),
    })
}

fn bgp_service(host: &HostSpec) -> Result<Option<Service>, SimnetError> {
    let Some(bgp) = host.bgp.as_ref() else {
        return Ok(None);
    };
    let bad = |message: String| SimnetError::BadProfile {
        host: host.id.clone(),
        message,
    };
    let open = bgp.open().map_err(bad)?;
    let mut greeting = encode_bgp_open(&open).map_err(|e| bad(e.to_string()))?;
    greeting.extend(encode_bgp_notification(&BgpNotification {
        major_code: 6,
        minor_code: 5,
        data: vec![],
    }));
    Ok(Some(Service::Bgp {
        behavior: bgp.behavior,
        greeting: Arc::new(greeting),
    }))
}

/// Binds one loopback listener per interface and service.
pub async fn launch_fleet(spec: &FleetSpec) -> Result<Fleet, SimnetError> {
    let mut fleet = Fleet {
        map: AddressMap::default(),
        tasks: Vec::new(),
    };
    for host in &spec.hosts {
        let ssh = ssh_endpoint(host).map(Arc::new);
        let bgp = bgp_service(host)?;
        for addr in &host.interfaces {
            let mut services = Vec::new();
            if let Some(s) = &ssh {
                services.push((Protocol::Ssh, Service::Ssh(Arc::clone(s))));
            }
            if let Some(Service::Bgp { behavior, greeting }) = &bgp {
                services.push((
                    Protocol::Bgp,
                    Service::Bgp {
                        behavior: *behavior,
                        greeting: Arc::clone(greeting),
                    },
                ));
            }
            for (protocol, service) in services {
                let listener = TcpListener::bind("127.0.0.1:0")
                    .await
                    .map_err(SimnetError::PortUnavailable)?;
                let local = listener
                    .local_addr()
                    .map_err(SimnetError::PortUnavailable)?;
                fleet.map.insert(*addr, protocol, local);
                fleet
                    .tasks
                    .push(tokio::spawn(accept_loop(listener, Arc::new(service))));
            }
        }
    }
    Ok(fleet)
}

async fn accept_loop(listener: TcpListener, service: Arc<Service>) {
    let mut conns = JoinSet::new();
    loop {
        tokio::select! {
            accepted = listener.accept() => {
                let Ok((stream, _)) = accepted else { continue };
                let service = Arc::clone(&service);
                conns.spawn(async move {
                    let _ = tokio::time::timeout(IDLE_LIMIT, serve(stream, &service)).await;
                });
            }
            Some(_) = conns.join_next(), if !conns.is_empty() => {}
        }
    }
}

async fn serve(stream: TcpStream, service: &Service) {
    match service {
        Service::Ssh(ep) => {
            if let Err(e) = serve_ssh(stream, ep).await {
                log::debug!("simnet ssh session ended: {e}");
            }
        }
        Service::Bgp { behavior, greeting } => serve_bgp(stream, *behavior, greeting).await,
    }
}

async fn drain(stream: &mut TcpStream) {
    let mut sink = [0u8; 1024];
    while let Ok(n) = stream.read(&mut sink).await {
        if n == 0 {
            break;
        }
    }
}

async fn serve_bgp(mut stream: TcpStream, behavior: BgpBehavior, greeting: &[u8]) {
    match behavior {
        BgpBehavior::ImmediateClose => {}
        BgpBehavior::Silent => drain(&mut stream).await,
        BgpBehavior::OpenThenNotify => {
            let _ = stream.write_all(greeting).await;
            let _ = stream.shutdown().await;
        }
    }
}

async fn serve_ssh(stream: TcpStream, ep: &SshEndpoint) -> Result<(), crate::wire::KexError> {
    if ep.behavior == SshBehavior::ImmediateClose {
        return Ok(());
    }
    let mut conn = SshConnection::new(stream, IDLE_LIMIT);
    conn.send_line(&ep.banner).await?;
    if ep.behavior == SshBehavior::BannerThenSilent {
        drain(conn.get_mut()).await;
        return Ok(());
    }
    conn.write_packet(&ep.kexinit).await?;
    if ep.behavior == SshBehavior::KexinitTwice {
        conn.write_packet(&ep.kexinit).await?;
    }
    conn.read_banner().await?;
    conn.read_kexinit().await?;
    if ep.behavior == SshBehavior::Normal {
        let init = conn.read_packet().await?;
        if init.first() == Some(&MSG_KEX_ECDH_INIT) {
            let mut reply = vec![MSG_KEX_ECDH_REPLY];
            put_string(&mut reply, &ep.host_key_blob);
            put_string(&mut reply, &ep.server_public);
            let mut sig = Vec::new();
            put_string(&mut sig, b"ssh-ed25519");
            put_string(&mut sig, &[0u8; 64]);
            put_string(&mut reply, &sig);
            conn.write_packet(&reply).await?;
        }
    }
    drain(conn.get_mut()).await;
    Ok(())
}
