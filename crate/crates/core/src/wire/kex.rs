//! Client side of the unencrypted SSH phase, driven only as far as the
//! server's ECDH reply. The host key is read and nothing is verified.

use std::time::Duration;

use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

use super::ssh::{
    decode_ssh_packet, encode_ssh_packet, parse_kexinit, parse_ssh_banner, put_string,
    read_ssh_string, SshBanner, SshError, SshHostKey, SshKexInit, MSG_DEBUG, MSG_DISCONNECT,
    MSG_IGNORE, MSG_KEXINIT, MSG_KEX_ECDH_INIT, MSG_KEX_ECDH_REPLY, MSG_UNIMPLEMENTED,
    SSH_PACKET_CAP,
};

/// Identification line we send. Bump together with [`CLIENT_KEXINIT_VERSION`].
pub const CLIENT_BANNER: &str = "SSH-2.0-aliasprobe_1";

/// Version of the fixed client algorithm offer below.
pub const CLIENT_KEXINIT_VERSION: u32 = 1;

/// The only key exchange methods we can complete.
pub const SUPPORTED_KEX: [&str; 2] = ["curve25519-sha256", "curve25519-sha256@libssh.org"];

const CLIENT_HOSTKEY_ALGS: [&str; 12] = [
    "ssh-ed25519",
    "ssh-ed25519-cert-v01@openssh.com",
    "ecdsa-sha2-nistp256",
    "ecdsa-sha2-nistp384",
    "ecdsa-sha2-nistp521",
    "sk-ssh-ed25519@openssh.com",
    "sk-ecdsa-sha2-nistp256@openssh.com",
    "rsa-sha2-512",
    "rsa-sha2-256",
    "ssh-rsa",
    "ssh-dss",
    "ssh-ed448",
];

const CLIENT_CIPHERS: [&str; 10] = [
    "chacha20-poly1305@openssh.com",
    "aes128-gcm@openssh.com",
    "aes256-gcm@openssh.com",
    "aes128-ctr",
    "aes192-ctr",
    "aes256-ctr",
    "aes128-cbc",
    "aes256-cbc",
    "3des-cbc",
    "3des-ctr",
];

const CLIENT_MACS: [&str; 8] = [
    "hmac-sha2-256-etm@openssh.com",
    "hmac-sha2-512-etm@openssh.com",
    "umac-128-etm@openssh.com",
    "hmac-sha2-256",
    "hmac-sha2-512",
    "umac-64@openssh.com",
    "hmac-sha1",
    "hmac-sha1-96",
];

const CLIENT_COMPRESSION: [&str; 3] = ["none", "zlib@openssh.com", "zlib"];

/// The algorithm offer we send. Fixed so that scans are reproducible.
pub fn client_kexinit(cookie: [u8; 16]) -> SshKexInit {
    let owned = |names: &[&str]| names.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    SshKexInit {
        cookie,
        kex_algorithms: owned(&SUPPORTED_KEX),
        server_host_key_algorithms: owned(&CLIENT_HOSTKEY_ALGS),
        encryption_c2s: owned(&CLIENT_CIPHERS),
        encryption_s2c: owned(&CLIENT_CIPHERS),
        mac_c2s: owned(&CLIENT_MACS),
        mac_s2c: owned(&CLIENT_MACS),
        compression_c2s: owned(&CLIENT_COMPRESSION),
        compression_s2c: owned(&CLIENT_COMPRESSION),
        languages_c2s: vec![],
        languages_s2c: vec![],
        first_kex_packet_follows: false,
        reserved: 0,
    }
}

#[derive(Debug, Error)]
pub enum KexError {
    #[error("key exchange negotiation failed: {0}")]
    KexNegotiationFailed(String),
    #[error("protocol error: {0}")]
    ProtocolError(String),
    #[error("timed out")]
    Timeout,
    #[error("connection closed by peer")]
    Closed,
    #[error(transparent)]
    Codec(#[from] SshError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Longest identification line, including any pre-banner lines, we buffer.
const MAX_LINE: usize = 8192;
/// RFC 4253 lets servers send other lines before the identification line.
const MAX_PRE_BANNER_LINES: usize = 32;

/// A byte stream plus the bytes read from it but not yet consumed.
pub struct SshConnection<S> {
    stream: S,
    buf: Vec<u8>,
    read_timeout: Duration,
    packet_cap: usize,
    received: usize,
}

impl<S: AsyncRead + AsyncWrite + Unpin> SshConnection<S> {
    pub fn new(stream: S, read_timeout: Duration) -> Self {
        SshConnection {
            stream,
            buf: Vec::new(),
            read_timeout,
            packet_cap: SSH_PACKET_CAP,
            received: 0,
        }
    }

    pub fn with_packet_cap(mut self, cap: usize) -> Self {
        self.packet_cap = cap;
        self
    }

    pub fn get_mut(&mut self) -> &mut S {
        &mut self.stream
    }

    /// True once any byte has been received from the peer.
    pub fn has_received(&self) -> bool {
        self.received > 0
    }

    async fn fill(&mut self) -> Result<(), KexError> {
        let mut chunk = [0u8; 4096];
        let n = tokio::time::timeout(self.read_timeout, self.stream.read(&mut chunk))
            .await
            .map_err(|_| KexError::Timeout)??;
        if n == 0 {
            return Err(KexError::Closed);
        }
        self.received += n;
        self.buf.extend_from_slice(&chunk[..n]);
        Ok(())
    }

    pub async fn send_line(&mut self, line: &str) -> Result<(), KexError> {
        self.stream.write_all(line.as_bytes()).await?;
        self.stream.write_all(b"\r\n").await?;
        self.stream.flush().await?;
        Ok(())
    }

    async fn read_line(&mut self) -> Result<Vec<u8>, KexError> {
        loop {
            if let Some(nl) = self.buf.iter().position(|&b| b == b'\n') {
                let mut line: Vec<u8> = self.buf.drain(..=nl).collect();
                line.pop();
                if line.last() == Some(&b'\r') {
                    line.pop();
                }
                return Ok(line);
            }
            if self.buf.len() > MAX_LINE {
                return Err(KexError::ProtocolError(
                    "identification line too long".into(),
                ));
            }
            self.fill().await?;
        }
    }

    /// Reads the server identification line, skipping any preceding lines.
    pub async fn read_banner(&mut self) -> Result<SshBanner, KexError> {
        for _ in 0..=MAX_PRE_BANNER_LINES {
            let line = self.read_line().await?;
            if line.starts_with(b"SSH-") {
                return Ok(parse_ssh_banner(&line)?);
            }
        }
        Err(KexError::ProtocolError("no SSH identification line".into()))
    }

    pub async fn read_packet(&mut self) -> Result<Vec<u8>, KexError> {
        loop {
            match decode_ssh_packet(&self.buf, self.packet_cap) {
                Ok((payload, used)) => {
                    self.buf.drain(..used);
                    if payload.is_empty() {
                        return Err(KexError::ProtocolError("empty packet payload".into()));
                    }
                    return Ok(payload);
                }
                Err(SshError::NeedMoreData) => self.fill().await?,
                Err(e) => return Err(e.into()),
            }
        }
    }

    pub async fn write_packet(&mut self, payload: &[u8]) -> Result<(), KexError> {
        self.stream.write_all(&encode_ssh_packet(payload)).await?;
        self.stream.flush().await?;
        Ok(())
    }

    /// Reads packets until one that is not IGNORE/DEBUG/UNIMPLEMENTED.
    async fn read_significant(&mut self) -> Result<Vec<u8>, KexError> {
        loop {
            let payload = self.read_packet().await?;
            match payload[0] {
                MSG_IGNORE | MSG_DEBUG | MSG_UNIMPLEMENTED => continue,
                MSG_DISCONNECT => {
                    let reason = payload
                        .get(5..)
                        .and_then(read_ssh_string)
                        .map(|(s, _)| String::from_utf8_lossy(s).into_owned())
                        .unwrap_or_default();
                    return Err(KexError::ProtocolError(format!(
                        "peer disconnected: {reason}"
                    )));
                }
                _ => return Ok(payload),
            }
        }
    }

    pub async fn read_kexinit(&mut self) -> Result<SshKexInit, KexError> {
        let payload = self.read_significant().await?;
        if payload[0] != MSG_KEXINIT {
            return Err(KexError::ProtocolError(format!(
                "expected KEXINIT, got message {}",
                payload[0]
            )));
        }
        Ok(parse_kexinit(&payload)?)
    }
}

fn first_common<'a>(ours: &'a [String], theirs: &[String]) -> Option<&'a String> {
    ours.iter().find(|name| theirs.contains(name))
}

/// Chooses algorithms as RFC 4253 section 7.1 does: the first entry of the
/// client list that the server also offers.
pub fn negotiate(client: &SshKexInit, server: &SshKexInit) -> Result<(String, String), KexError> {
    let kex = first_common(&client.kex_algorithms, &server.kex_algorithms)
        .filter(|k| SUPPORTED_KEX.contains(&k.as_str()))
        .ok_or_else(|| {
            KexError::KexNegotiationFailed(format!(
                "no common key exchange; server offers {}",
                server.kex_algorithms.join(",")
            ))
        })?;
    let hostkey = first_common(
        &client.server_host_key_algorithms,
        &server.server_host_key_algorithms,
    )
    .ok_or_else(|| {
        KexError::KexNegotiationFailed(format!(
            "no common host key algorithm; server offers {}",
            server.server_host_key_algorithms.join(",")
        ))
    })?;
    let pairs = [
        ("c2s cipher", &client.encryption_c2s, &server.encryption_c2s),
        ("s2c cipher", &client.encryption_s2c, &server.encryption_s2c),
        ("c2s mac", &client.mac_c2s, &server.mac_c2s),
        ("s2c mac", &client.mac_s2c, &server.mac_s2c),
        (
            "c2s compression",
            &client.compression_c2s,
            &server.compression_c2s,
        ),
        (
            "s2c compression",
            &client.compression_s2c,
            &server.compression_s2c,
        ),
    ];
    for (what, ours, theirs) in pairs {
        // AEAD ciphers make the MAC list irrelevant, servers may send it empty
        if what.ends_with("mac") && theirs.is_empty() {
            continue;
        }
        if first_common(ours, theirs).is_none() {
            return Err(KexError::KexNegotiationFailed(format!("no common {what}")));
        }
    }
    Ok((kex.clone(), hostkey.clone()))
}

/// Sends our KEXINIT and ECDH_INIT, then reads the ECDH reply and returns
/// the host key it carries. The caller has already exchanged banners and
/// read the server KEXINIT. The connection is not taken past message 31.
pub async fn run_kex_until_hostkey<S: AsyncRead + AsyncWrite + Unpin>(
    conn: &mut SshConnection<S>,
    server_kexinit: &SshKexInit,
    client_kexinit: &SshKexInit,
    ephemeral_scalar: [u8; 32],
) -> Result<SshHostKey, KexError> {
    negotiate(client_kexinit, server_kexinit)?;
    conn.write_packet(&client_kexinit.encode()).await?;

    let public = x25519_dalek::x25519(ephemeral_scalar, x25519_dalek::X25519_BASEPOINT_BYTES);
    let mut init = vec![MSG_KEX_ECDH_INIT];
    put_string(&mut init, &public);
    conn.write_packet(&init).await?;

    let reply = conn.read_significant().await?;
    match reply[0] {
        MSG_KEX_ECDH_REPLY => {}
        MSG_KEXINIT => return Err(KexError::ProtocolError("duplicate KEXINIT".into())),
        code => {
            return Err(KexError::ProtocolError(format!(
                "expected ECDH reply (31), got message {code}"
            )))
        }
    }
    let (blob, rest) = read_ssh_string(&reply[1..])
        .ok_or_else(|| KexError::ProtocolError("host key overruns ECDH reply".into()))?;
    let (server_public, rest) = read_ssh_string(rest)
        .ok_or_else(|| KexError::ProtocolError("server public value overruns ECDH reply".into()))?;
    if server_public.len() != 32 {
        return Err(KexError::ProtocolError(format!(
            "curve25519 public value has {} bytes",
            server_public.len()
        )));
    }
    read_ssh_string(rest)
        .ok_or_else(|| KexError::ProtocolError("signature overruns ECDH reply".into()))?;
    Ok(SshHostKey::from_blob(blob)?)
}
