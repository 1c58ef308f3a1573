//! Wire codecs for the parts of SSH and BGP that carry host identifiers.
//!
//! Everything here is a pure function over byte strings except [`kex`],
//! which drives one SSH connection far enough to read the server host key.

pub mod bgp;
pub mod kex;
pub mod ssh;

pub use bgp::{
    decode_bgp_message, encode_bgp_notification, encode_bgp_open, BgpError, BgpMessage,
    BgpNotification, BgpOpen, Capability,
};
pub use kex::{run_kex_until_hostkey, KexError, SshConnection};
pub use ssh::{
    decode_ssh_packet, encode_ssh_packet, parse_kexinit, parse_ssh_banner, SshBanner, SshError,
    SshHostKey, SshKexInit, SSH_PACKET_CAP,
};

/// Serde helper for byte strings stored as lowercase hex.
pub(crate) mod hex_bytes {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        hex::decode(text).map_err(serde::de::Error::custom)
    }
}
