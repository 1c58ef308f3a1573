//! BGP message header, OPEN and NOTIFICATION (RFC 4271, RFC 5492).

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HEADER_LEN: usize = 19;
pub const OPEN_FIXED_LEN: usize = 29;
pub const MAX_MESSAGE_LEN: usize = 4096;

pub const MSG_OPEN: u8 = 1;
pub const MSG_UPDATE: u8 = 2;
pub const MSG_NOTIFICATION: u8 = 3;
pub const MSG_KEEPALIVE: u8 = 4;

/// Optional parameter type carrying capability TLVs.
pub const PARAM_CAPABILITIES: u8 = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BgpError {
    #[error("marker is not 16 bytes of 0xff")]
    BadMarker,
    #[error("message length {0} outside 19..=4096")]
    LengthOutOfRange(usize),
    #[error("truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("malformed OPEN: {0}")]
    MalformedOpen(String),
    #[error("malformed NOTIFICATION: {0}")]
    MalformedNotification(String),
    #[error("field out of range: {0}")]
    FieldOutOfRange(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Capability {
    pub code: u8,
    pub length: u8,
    #[serde(with = "super::hex_bytes")]
    pub value: Vec<u8>,
}

impl Capability {
    pub fn new(code: u8, value: Vec<u8>) -> Capability {
        Capability {
            code,
            length: value.len() as u8,
            value,
        }
    }
}

/// A decoded OPEN message. `length` and `opt_params_length` are the values
/// observed on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BgpOpen {
    pub length: u16,
    pub version: u8,
    pub my_as: u16,
    pub hold_time: u16,
    pub bgp_identifier: Ipv4Addr,
    pub opt_params_length: u8,
    /// All capabilities in received order, flattened across parameters.
    pub capabilities: Vec<Capability>,
    /// Non-capability optional parameters, verbatim (type, length, value).
    #[serde(with = "super::hex_bytes", default)]
    pub raw_optional_params: Vec<u8>,
}

impl BgpOpen {
    /// Builds an OPEN whose length fields match the layout produced by
    /// [`encode_bgp_open`]: one capability per optional parameter, followed
    /// by the opaque parameters.
    pub fn new(
        version: u8,
        my_as: u16,
        hold_time: u16,
        bgp_identifier: Ipv4Addr,
        capabilities: Vec<Capability>,
        raw_optional_params: Vec<u8>,
    ) -> BgpOpen {
        let opt_len = encoded_params_len(&capabilities, &raw_optional_params);
        BgpOpen {
            length: (OPEN_FIXED_LEN + opt_len) as u16,
            version,
            my_as,
            hold_time,
            bgp_identifier,
            opt_params_length: opt_len as u8,
            capabilities,
            raw_optional_params,
        }
    }
}

fn encoded_params_len(caps: &[Capability], raw: &[u8]) -> usize {
    caps.iter().map(|c| 4 + c.value.len()).sum::<usize>() + raw.len()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BgpNotification {
    pub major_code: u8,
    pub minor_code: u8,
    #[serde(with = "super::hex_bytes", default)]
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BgpMessage {
    Open(BgpOpen),
    Notification(BgpNotification),
    Other { msg_type: u8, length: u16 },
}

/// Decodes one message from the front of `buf`, returning it together with
/// the number of bytes it occupied. Bytes past the declared length are
/// never read.
pub fn decode_bgp_message(buf: &[u8]) -> Result<(BgpMessage, usize), BgpError> {
    if buf.len() < HEADER_LEN {
        return Err(BgpError::Truncated {
            needed: HEADER_LEN,
            available: buf.len(),
        });
    }
    if buf[..16].iter().any(|&b| b != 0xff) {
        return Err(BgpError::BadMarker);
    }
    let length = u16::from_be_bytes([buf[16], buf[17]]) as usize;
    if !(HEADER_LEN..=MAX_MESSAGE_LEN).contains(&length) {
        return Err(BgpError::LengthOutOfRange(length));
    }
    if buf.len() < length {
        return Err(BgpError::Truncated {
            needed: length,
            available: buf.len(),
        });
    }
    let msg_type = buf[18];
    let body = &buf[HEADER_LEN..length];
    let msg = match msg_type {
        MSG_OPEN => BgpMessage::Open(decode_open_body(length as u16, body)?),
        MSG_NOTIFICATION => {
            if body.len() < 2 {
                return Err(BgpError::MalformedNotification(
                    "shorter than 21 bytes".into(),
                ));
            }
            BgpMessage::Notification(BgpNotification {
                major_code: body[0],
                minor_code: body[1],
                data: body[2..].to_vec(),
            })
        }
        other => BgpMessage::Other {
            msg_type: other,
            length: length as u16,
        },
    };
    Ok((msg, length))
}

fn decode_open_body(length: u16, body: &[u8]) -> Result<BgpOpen, BgpError> {
    if body.len() < OPEN_FIXED_LEN - HEADER_LEN {
        return Err(BgpError::MalformedOpen("shorter than 29 bytes".into()));
    }
    let version = body[0];
    let my_as = u16::from_be_bytes([body[1], body[2]]);
    let hold_time = u16::from_be_bytes([body[3], body[4]]);
    let bgp_identifier = Ipv4Addr::new(body[5], body[6], body[7], body[8]);
    let opt_params_length = body[9];
    let params = &body[10..];
    if params.len() != opt_params_length as usize {
        return Err(BgpError::MalformedOpen(format!(
            "optional parameters length {} disagrees with message length {}",
            opt_params_length, length
        )));
    }

    let mut capabilities = Vec::new();
    let mut raw_optional_params = Vec::new();
    let mut pos = 0;
    while pos < params.len() {
        if pos + 2 > params.len() {
            return Err(BgpError::MalformedOpen("parameter header overruns".into()));
        }
        let ptype = params[pos];
        let plen = params[pos + 1] as usize;
        let end = pos + 2 + plen;
        if end > params.len() {
            return Err(BgpError::MalformedOpen("parameter value overruns".into()));
        }
        let value = &params[pos + 2..end];
        if ptype == PARAM_CAPABILITIES {
            decode_capabilities(value, &mut capabilities)?;
        } else {
            raw_optional_params.extend_from_slice(&params[pos..end]);
        }
        pos = end;
    }

    Ok(BgpOpen {
        length,
        version,
        my_as,
        hold_time,
        bgp_identifier,
        opt_params_length,
        capabilities,
        raw_optional_params,
    })
}

fn decode_capabilities(mut value: &[u8], out: &mut Vec<Capability>) -> Result<(), BgpError> {
    while !value.is_empty() {
        if value.len() < 2 {
            return Err(BgpError::MalformedOpen("capability header overruns".into()));
        }
        let code = value[0];
        let len = value[1] as usize;
        if 2 + len > value.len() {
            return Err(BgpError::MalformedOpen("capability value overruns".into()));
        }
        out.push(Capability {
            code,
            length: len as u8,
            value: value[2..2 + len].to_vec(),
        });
        value = &value[2 + len..];
    }
    Ok(())
}

fn header(out: &mut Vec<u8>, length: usize, msg_type: u8) {
    out.extend_from_slice(&[0xff; 16]);
    out.extend_from_slice(&(length as u16).to_be_bytes());
    out.push(msg_type);
}

/// Encodes an OPEN with each capability in its own optional parameter,
/// followed by the opaque parameters. Length fields are recomputed from
/// content.
pub fn encode_bgp_open(open: &BgpOpen) -> Result<Vec<u8>, BgpError> {
    for cap in &open.capabilities {
        if cap.value.len() != cap.length as usize {
            return Err(BgpError::FieldOutOfRange(format!(
                "capability {} declares length {} but carries {} bytes",
                cap.code,
                cap.length,
                cap.value.len()
            )));
        }
        if cap.value.len() > 253 {
            return Err(BgpError::FieldOutOfRange(format!(
                "capability {} value does not fit one parameter",
                cap.code
            )));
        }
    }
    let opt_len = encoded_params_len(&open.capabilities, &open.raw_optional_params);
    if opt_len > 255 {
        return Err(BgpError::FieldOutOfRange(format!(
            "optional parameters total {opt_len} bytes"
        )));
    }
    let length = OPEN_FIXED_LEN + opt_len;
    let mut out = Vec::with_capacity(length);
    header(&mut out, length, MSG_OPEN);
    out.push(open.version);
    out.extend_from_slice(&open.my_as.to_be_bytes());
    out.extend_from_slice(&open.hold_time.to_be_bytes());
    out.extend_from_slice(&open.bgp_identifier.octets());
    out.push(opt_len as u8);
    for cap in &open.capabilities {
        out.push(PARAM_CAPABILITIES);
        out.push((cap.value.len() + 2) as u8);
        out.push(cap.code);
        out.push(cap.length);
        out.extend_from_slice(&cap.value);
    }
    out.extend_from_slice(&open.raw_optional_params);
    Ok(out)
}

pub fn encode_bgp_notification(n: &BgpNotification) -> Vec<u8> {
    let length = HEADER_LEN + 2 + n.data.len();
    let mut out = Vec::with_capacity(length);
    header(&mut out, length, MSG_NOTIFICATION);
    out.push(n.major_code);
    out.push(n.minor_code);
    out.extend_from_slice(&n.data);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Cross-checked against an independent BGP dissector.
    const FIG2_OPEN: &str =
        "ffffffffffffffffffffffffffffffff002501045ba0005a94aa0021080202800002020200";
    const FIG2_NOTIFICATION: &str = "ffffffffffffffffffffffffffffffff0015030605";

    fn fig2_open() -> BgpOpen {
        BgpOpen::new(
            4,
            23456,
            90,
            Ipv4Addr::new(148, 170, 0, 33),
            vec![Capability::new(128, vec![]), Capability::new(2, vec![])],
            vec![],
        )
    }

    #[test]
    fn decodes_reference_open() {
        let bytes = hex::decode(FIG2_OPEN).unwrap();
        let (msg, used) = decode_bgp_message(&bytes).unwrap();
        assert_eq!(used, 37);
        let BgpMessage::Open(open) = msg else {
            panic!("expected OPEN")
        };
        assert_eq!(open.length, 37);
        assert_eq!(open.version, 4);
        assert_eq!(open.my_as, 23456);
        assert_eq!(open.hold_time, 90);
        assert_eq!(open.bgp_identifier.to_string(), "148.170.0.33");
        assert_eq!(open.opt_params_length, 8);
        let caps: Vec<(u8, u8, Vec<u8>)> = open
            .capabilities
            .iter()
            .map(|c| (c.code, c.length, c.value.clone()))
            .collect();
        assert_eq!(caps, vec![(128, 0, vec![]), (2, 0, vec![])]);
        assert!(open.raw_optional_params.is_empty());
    }

    #[test]
    fn decodes_reference_notification() {
        let bytes = hex::decode(FIG2_NOTIFICATION).unwrap();
        assert_eq!(bytes.len(), 21);
        let (msg, used) = decode_bgp_message(&bytes).unwrap();
        assert_eq!(used, 21);
        assert_eq!(
            msg,
            BgpMessage::Notification(BgpNotification {
                major_code: 6,
                minor_code: 5,
                data: vec![]
            })
        );
    }

    #[test]
    fn encodes_reference_open() {
        let bytes = encode_bgp_open(&fig2_open()).unwrap();
        assert_eq!(bytes.len(), 37);
        assert_eq!(hex::encode(&bytes), FIG2_OPEN);
    }

    #[test]
    fn header_only_open() {
        let open = BgpOpen::new(4, 64500, 180, Ipv4Addr::new(10, 0, 0, 1), vec![], vec![]);
        assert_eq!(open.length, 29);
        assert_eq!(open.opt_params_length, 0);
        let bytes = encode_bgp_open(&open).unwrap();
        assert_eq!(bytes.len(), 29);
        assert_eq!(u16::from_be_bytes([bytes[16], bytes[17]]), 29);
    }

    #[test]
    fn bad_marker() {
        let mut bytes = hex::decode(FIG2_OPEN).unwrap();
        bytes[15] = 0;
        assert_eq!(decode_bgp_message(&bytes), Err(BgpError::BadMarker));
    }

    #[test]
    fn length_bounds() {
        let mut bytes = hex::decode(FIG2_NOTIFICATION).unwrap();
        bytes[16..18].copy_from_slice(&18u16.to_be_bytes());
        assert_eq!(
            decode_bgp_message(&bytes),
            Err(BgpError::LengthOutOfRange(18))
        );
        bytes[16..18].copy_from_slice(&4097u16.to_be_bytes());
        assert_eq!(
            decode_bgp_message(&bytes),
            Err(BgpError::LengthOutOfRange(4097))
        );
    }

    #[test]
    fn truncated() {
        let bytes = hex::decode(FIG2_OPEN).unwrap();
        assert!(matches!(
            decode_bgp_message(&bytes[..30]),
            Err(BgpError::Truncated { needed: 37, .. })
        ));
        assert!(matches!(
            decode_bgp_message(&bytes[..10]),
            Err(BgpError::Truncated { needed: 19, .. })
        ));
    }

    #[test]
    fn back_to_back_messages() {
        let mut stream = hex::decode(FIG2_OPEN).unwrap();
        stream.extend(hex::decode(FIG2_NOTIFICATION).unwrap());
        let (first, used) = decode_bgp_message(&stream).unwrap();
        assert!(matches!(first, BgpMessage::Open(_)));
        let (second, used2) = decode_bgp_message(&stream[used..]).unwrap();
        assert!(matches!(second, BgpMessage::Notification(_)));
        assert_eq!(used + used2, stream.len());
    }

    #[test]
    fn bundled_capabilities_and_unknown_params() {
        // one capability parameter holding two TLVs, then an unknown type-9 param
        let mut params = vec![2, 6, 1, 4, 0, 1, 0, 1];
        params.extend_from_slice(&[9, 2, 0xab, 0xcd]);
        let mut bytes = vec![0xff; 16];
        bytes.extend_from_slice(&((29 + params.len()) as u16).to_be_bytes());
        bytes.extend_from_slice(&[1, 4, 0xfd, 0xe8, 0, 180, 10, 0, 0, 1, params.len() as u8]);
        bytes.extend_from_slice(&params);
        let (msg, _) = decode_bgp_message(&bytes).unwrap();
        let BgpMessage::Open(open) = msg else {
            panic!()
        };
        assert_eq!(
            open.capabilities,
            vec![Capability::new(1, vec![0, 1, 0, 1])]
        );
        assert_eq!(open.raw_optional_params, vec![9, 2, 0xab, 0xcd]);
        assert_eq!(open.opt_params_length, 12);
    }

    #[test]
    fn encode_rejects_inconsistent_capability() {
        let mut open = fig2_open();
        open.capabilities[0].length = 3;
        assert!(matches!(
            encode_bgp_open(&open),
            Err(BgpError::FieldOutOfRange(_))
        ));
        let big = BgpOpen::new(
            4,
            1,
            90,
            Ipv4Addr::LOCALHOST,
            (0..3).map(|i| Capability::new(i, vec![0; 100])).collect(),
            vec![],
        );
        assert!(matches!(
            encode_bgp_open(&big),
            Err(BgpError::FieldOutOfRange(_))
        ));
    }

    fn open_strategy() -> impl Strategy<Value = BgpOpen> {
        let cap = (any::<u8>(), proptest::collection::vec(any::<u8>(), 0..12))
            .prop_map(|(code, value)| Capability::new(code, value));
        let raw = proptest::collection::vec(
            (3u8..=255, proptest::collection::vec(any::<u8>(), 0..6)),
            0..3,
        )
        .prop_map(|params| {
            let mut out = Vec::new();
            for (t, v) in params {
                out.push(t);
                out.push(v.len() as u8);
                out.extend(v);
            }
            out
        });
        (
            any::<u8>(),
            any::<u16>(),
            any::<u16>(),
            any::<[u8; 4]>(),
            proptest::collection::vec(cap, 0..8),
            raw,
        )
            .prop_map(|(v, asn, hold, id, caps, raw)| {
                BgpOpen::new(v, asn, hold, Ipv4Addr::from(id), caps, raw)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn open_round_trip(open in open_strategy(), garbage in proptest::collection::vec(any::<u8>(), 0..16)) {
            let mut bytes = encode_bgp_open(&open).unwrap();
            prop_assert_eq!(bytes.len(), open.length as usize);
            bytes.extend_from_slice(&garbage);
            let (msg, used) = decode_bgp_message(&bytes).unwrap();
            prop_assert_eq!(used, open.length as usize);
            prop_assert_eq!(msg, BgpMessage::Open(open));
        }

        #[test]
        fn decoder_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..80)) {
            let _ = decode_bgp_message(&bytes);
            let mut marked = vec![0xff; 16];
            marked.extend_from_slice(&bytes);
            let _ = decode_bgp_message(&marked);
        }
    }
}
