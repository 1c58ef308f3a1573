//! SSH identification line, binary packet framing and KEXINIT (RFC 4253).

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Largest `packet_length` accepted during the unencrypted phase.
pub const SSH_PACKET_CAP: usize = 256 * 1024;

pub const MSG_DISCONNECT: u8 = 1;
pub const MSG_IGNORE: u8 = 2;
pub const MSG_UNIMPLEMENTED: u8 = 3;
pub const MSG_DEBUG: u8 = 4;
pub const MSG_KEXINIT: u8 = 20;
pub const MSG_KEX_ECDH_INIT: u8 = 30;
pub const MSG_KEX_ECDH_REPLY: u8 = 31;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SshError {
    #[error("malformed banner: {0}")]
    MalformedBanner(String),
    #[error("need more data")]
    NeedMoreData,
    #[error("framing error: {0}")]
    FramingError(String),
    #[error("malformed KEXINIT: {0}")]
    MalformedKexInit(String),
    #[error("malformed host key: {0}")]
    MalformedHostKey(String),
}

/// A parsed `SSH-protoversion-softwareversion SP comments` line.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SshBanner {
    pub protoversion: String,
    pub softwareversion: String,
    pub comments: Option<String>,
    /// The line as received, without CR/LF.
    pub raw_line: Vec<u8>,
}

pub fn parse_ssh_banner(line: &[u8]) -> Result<SshBanner, SshError> {
    let rest = line
        .strip_prefix(b"SSH-")
        .ok_or_else(|| SshError::MalformedBanner("missing SSH- prefix".into()))?;
    let dash = rest
        .iter()
        .position(|&b| b == b'-')
        .ok_or_else(|| SshError::MalformedBanner("missing dash after protoversion".into()))?;
    let proto = &rest[..dash];
    let after = &rest[dash + 1..];
    let (software, comments) = match after.iter().position(|&b| b == b' ') {
        Some(sp) => (&after[..sp], Some(&after[sp + 1..])),
        None => (after, None),
    };
    if proto.is_empty() || proto.contains(&b' ') {
        return Err(SshError::MalformedBanner(
            "empty or spaced protoversion".into(),
        ));
    }
    if software.is_empty() {
        return Err(SshError::MalformedBanner("empty softwareversion".into()));
    }
    Ok(SshBanner {
        protoversion: String::from_utf8_lossy(proto).into_owned(),
        softwareversion: String::from_utf8_lossy(software).into_owned(),
        comments: comments.map(|c| String::from_utf8_lossy(c).into_owned()),
        raw_line: line.to_vec(),
    })
}

impl Serialize for SshBanner {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&String::from_utf8_lossy(&self.raw_line))
    }
}

impl<'de> Deserialize<'de> for SshBanner {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let line = String::deserialize(d)?;
        parse_ssh_banner(line.as_bytes()).map_err(serde::de::Error::custom)
    }
}

/// Strips binary packet framing. Returns the payload and the number of
/// stream bytes the packet occupied (`packet_length + 4`).
///
/// No MAC is expected: this only covers the phase before NEWKEYS.
pub fn decode_ssh_packet(stream: &[u8], cap: usize) -> Result<(Vec<u8>, usize), SshError> {
    if stream.len() < 4 {
        return Err(SshError::NeedMoreData);
    }
    let packet_length = u32::from_be_bytes([stream[0], stream[1], stream[2], stream[3]]) as usize;
    if packet_length > cap {
        return Err(SshError::FramingError(format!(
            "packet length {packet_length} exceeds cap {cap}"
        )));
    }
    if packet_length == 0 {
        return Err(SshError::FramingError("zero packet length".into()));
    }
    if stream.len() < 5 {
        return Err(SshError::NeedMoreData);
    }
    let padding = stream[4] as usize;
    if padding >= packet_length {
        return Err(SshError::FramingError(format!(
            "padding length {padding} >= packet length {packet_length}"
        )));
    }
    let total = packet_length + 4;
    if stream.len() < total {
        return Err(SshError::NeedMoreData);
    }
    let payload = stream[5..total - padding].to_vec();
    Ok((payload, total))
}

/// Frames `payload` with the minimum padding that keeps the packet a
/// multiple of 8 bytes. Padding bytes are zero.
pub fn encode_ssh_packet(payload: &[u8]) -> Vec<u8> {
    let unpadded = 4 + 1 + payload.len();
    let mut padding = 8 - unpadded % 8;
    if padding < 4 {
        padding += 8;
    }
    let packet_length = 1 + payload.len() + padding;
    let mut out = Vec::with_capacity(packet_length + 4);
    out.extend_from_slice(&(packet_length as u32).to_be_bytes());
    out.push(padding as u8);
    out.extend_from_slice(payload);
    out.resize(out.len() + padding, 0);
    out
}

/// Server or client algorithm offer, order preserved as received.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SshKexInit {
    #[serde(with = "cookie_hex")]
    pub cookie: [u8; 16],
    pub kex_algorithms: Vec<String>,
    pub server_host_key_algorithms: Vec<String>,
    pub encryption_c2s: Vec<String>,
    pub encryption_s2c: Vec<String>,
    pub mac_c2s: Vec<String>,
    pub mac_s2c: Vec<String>,
    pub compression_c2s: Vec<String>,
    pub compression_s2c: Vec<String>,
    pub languages_c2s: Vec<String>,
    pub languages_s2c: Vec<String>,
    pub first_kex_packet_follows: bool,
    #[serde(default)]
    pub reserved: u32,
}

mod cookie_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(c: &[u8; 16], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(c))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 16], D::Error> {
        let text = String::deserialize(d)?;
        let bytes = hex::decode(text).map_err(serde::de::Error::custom)?;
        bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("cookie must be 16 bytes"))
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let out = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(out)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn string(&mut self) -> Option<&'a [u8]> {
        let len = self.u32()? as usize;
        self.take(len)
    }
}

pub(crate) fn read_ssh_string(buf: &[u8]) -> Option<(&[u8], &[u8])> {
    let mut r = Reader::new(buf);
    let s = r.string()?;
    Some((s, &buf[r.pos..]))
}

pub(crate) fn put_string(out: &mut Vec<u8>, s: &[u8]) {
    out.extend_from_slice(&(s.len() as u32).to_be_bytes());
    out.extend_from_slice(s);
}

fn decode_name_list(raw: &[u8]) -> Result<Vec<String>, SshError> {
    if raw.is_empty() {
        return Ok(Vec::new());
    }
    let text = std::str::from_utf8(raw)
        .map_err(|_| SshError::MalformedKexInit("name-list is not UTF-8".into()))?;
    Ok(text.split(',').map(str::to_owned).collect())
}

pub(crate) fn put_name_list(out: &mut Vec<u8>, names: &[String]) {
    put_string(out, names.join(",").as_bytes());
}

pub fn parse_kexinit(payload: &[u8]) -> Result<SshKexInit, SshError> {
    let mut r = Reader::new(payload);
    let short = || SshError::MalformedKexInit("payload too short".into());
    match r.u8() {
        Some(MSG_KEXINIT) => {}
        Some(code) => {
            return Err(SshError::MalformedKexInit(format!(
                "unexpected message code {code}"
            )))
        }
        None => return Err(short()),
    }
    let cookie: [u8; 16] = r.take(16).ok_or_else(short)?.try_into().expect("16 bytes");
    let mut lists: [Vec<String>; 10] = Default::default();
    for (i, list) in lists.iter_mut().enumerate() {
        let raw = r
            .string()
            .ok_or_else(|| SshError::MalformedKexInit(format!("name-list {i} overruns payload")))?;
        *list = decode_name_list(raw)?;
    }
    let first_kex_packet_follows = r.u8().ok_or_else(short)? != 0;
    let reserved = r.u32().ok_or_else(short)?;
    let [kex, hostkey, enc_c2s, enc_s2c, mac_c2s, mac_s2c, comp_c2s, comp_s2c, lang_c2s, lang_s2c] =
        lists;
    Ok(SshKexInit {
        cookie,
        kex_algorithms: kex,
        server_host_key_algorithms: hostkey,
        encryption_c2s: enc_c2s,
        encryption_s2c: enc_s2c,
        mac_c2s,
        mac_s2c,
        compression_c2s: comp_c2s,
        compression_s2c: comp_s2c,
        languages_c2s: lang_c2s,
        languages_s2c: lang_s2c,
        first_kex_packet_follows,
        reserved,
    })
}

impl SshKexInit {
    /// Encodes the message payload, starting with message code 20.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![MSG_KEXINIT];
        out.extend_from_slice(&self.cookie);
        for list in self.name_lists() {
            put_name_list(&mut out, list);
        }
        out.push(self.first_kex_packet_follows as u8);
        out.extend_from_slice(&self.reserved.to_be_bytes());
        out
    }

    /// The ten name-lists in wire order.
    pub fn name_lists(&self) -> [&Vec<String>; 10] {
        [
            &self.kex_algorithms,
            &self.server_host_key_algorithms,
            &self.encryption_c2s,
            &self.encryption_s2c,
            &self.mac_c2s,
            &self.mac_s2c,
            &self.compression_c2s,
            &self.compression_s2c,
            &self.languages_c2s,
            &self.languages_s2c,
        ]
    }
}

/// Server public host key as carried in the ECDH reply.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SshHostKey {
    pub key_type: String,
    #[serde(with = "super::hex_bytes")]
    pub key_blob: Vec<u8>,
}

impl SshHostKey {
    /// Validates a wire-format public key blob and reads its type tag.
    pub fn from_blob(blob: &[u8]) -> Result<SshHostKey, SshError> {
        let (tag, mut rest) = read_ssh_string(blob)
            .ok_or_else(|| SshError::MalformedHostKey("type tag overruns blob".into()))?;
        let key_type = std::str::from_utf8(tag)
            .map_err(|_| SshError::MalformedHostKey("type tag is not UTF-8".into()))?
            .to_owned();
        if key_type.is_empty() {
            return Err(SshError::MalformedHostKey("empty type tag".into()));
        }
        // Every standard key format is a sequence of length-prefixed fields.
        while !rest.is_empty() {
            let (_, next) = read_ssh_string(rest)
                .ok_or_else(|| SshError::MalformedHostKey("field overruns blob".into()))?;
            rest = next;
        }
        Ok(SshHostKey {
            key_type,
            key_blob: blob.to_vec(),
        })
    }

    /// Builds an `ssh-ed25519` blob around a raw 32-byte public key.
    pub fn ed25519(public: &[u8; 32]) -> SshHostKey {
        let mut blob = Vec::with_capacity(51);
        put_string(&mut blob, b"ssh-ed25519");
        put_string(&mut blob, public);
        SshHostKey {
            key_type: "ssh-ed25519".into(),
            key_blob: blob,
        }
    }
}
