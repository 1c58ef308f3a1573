//! Target lists: parsing, prefix expansion and seeded ordering.

use std::collections::BTreeSet;
use std::net::IpAddr;

use ipnet::IpNet;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::record::{ProbeTarget, Protocol};

/// Largest prefix expanded into individual targets.
pub const DEFAULT_MAX_PREFIX_HOSTS: u64 = 1 << 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("no targets in input")]
    EmptyInput,
    #[error("no protocols selected")]
    NoProtocols,
    #[error("prefix {prefix} has {hosts} addresses, above the limit of {limit}")]
    PrefixTooLarge {
        prefix: IpNet,
        hosts: u128,
        limit: u64,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortConfig {
    pub ssh: u16,
    pub bgp: u16,
}

impl Default for PortConfig {
    fn default() -> Self {
        PortConfig {
            ssh: Protocol::Ssh.default_port(),
            bgp: Protocol::Bgp.default_port(),
        }
    }
}

impl PortConfig {
    pub fn port(&self, p: Protocol) -> u16 {
        match p {
            Protocol::Ssh => self.ssh,
            Protocol::Bgp => self.bgp,
        }
    }
}

/// One address or prefix per line; blank lines and `#` comments skipped.
pub fn parse_target_list(text: &str) -> Result<Vec<IpNet>, PlanError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let net = if line.contains('/') {
            line.parse::<IpNet>().map_err(|e| e.to_string())
        } else {
            line.parse::<IpAddr>()
                .map(IpNet::from)
                .map_err(|e| e.to_string())
        };
        out.push(net.map_err(|message| PlanError::Parse {
            line: idx + 1,
            message: format!("{line:?}: {message}"),
        })?);
    }
    Ok(out)
}

fn host_count(net: &IpNet) -> u128 {
    let bits = net.max_prefix_len() - net.prefix_len();
    if bits >= 128 {
        u128::MAX
    } else {
        1u128 << bits
    }
}

/// Expands prefixes to every address they contain (network and broadcast
/// included), crosses them with the protocols, removes duplicates and
/// shuffles with `seed`.
pub fn plan_targets(
    inputs: &[IpNet],
    protocols: &[Protocol],
    ports: &PortConfig,
    seed: u64,
    max_prefix_hosts: u64,
) -> Result<Vec<ProbeTarget>, PlanError> {
    if inputs.is_empty() {
        return Err(PlanError::EmptyInput);
    }
    if protocols.is_empty() {
        return Err(PlanError::NoProtocols);
    }
    let mut addresses = BTreeSet::new();
    for net in inputs {
        let net = net.trunc();
        let hosts = host_count(&net);
        if hosts > max_prefix_hosts as u128 {
            return Err(PlanError::PrefixTooLarge {
                prefix: net,
                hosts,
                limit: max_prefix_hosts,
            });
        }
        match net {
            IpNet::V4(n) => {
                let base = u32::from(n.network());
                addresses.extend((0..hosts as u32).map(|i| IpAddr::from((base + i).to_be_bytes())));
            }
            IpNet::V6(n) => {
                let base = u128::from(n.network());
                addresses.extend((0..hosts).map(|i| IpAddr::from((base + i).to_be_bytes())));
            }
        }
    }
    let protocols: BTreeSet<Protocol> = protocols.iter().copied().collect();
    let mut targets: Vec<ProbeTarget> = addresses
        .iter()
        .flat_map(|addr| {
            protocols.iter().map(|p| ProbeTarget {
                address: *addr,
                port: ports.port(*p),
                protocol: *p,
            })
        })
        .collect();
    targets.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn nets(list: &[&str]) -> Vec<IpNet> {
        parse_target_list(&list.join("\n")).unwrap()
    }

    const BOTH: [Protocol; 2] = [Protocol::Ssh, Protocol::Bgp];

    #[test]
    fn cross_product_permutation() {
        let input = nets(&["192.0.2.1", "192.0.2.2", "192.0.2.3", "2001:db8::1"]);
        let t = plan_targets(
            &input,
            &BOTH,
            &PortConfig::default(),
            7,
            DEFAULT_MAX_PREFIX_HOSTS,
        )
        .unwrap();
        assert_eq!(t.len(), 8);
        let unique: BTreeSet<_> = t.iter().collect();
        assert_eq!(unique.len(), 8);
        assert!(t.iter().all(|x| x.port == x.protocol.default_port()));
        let again = plan_targets(
            &input,
            &BOTH,
            &PortConfig::default(),
            7,
            DEFAULT_MAX_PREFIX_HOSTS,
        )
        .unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn slash_30_expands_to_four() {
        let t = plan_targets(
            &nets(&["192.0.2.0/30"]),
            &[Protocol::Ssh],
            &PortConfig::default(),
            1,
            16,
        )
        .unwrap();
        let addrs: BTreeSet<String> = t.iter().map(|x| x.address.to_string()).collect();
        assert_eq!(
            addrs.into_iter().collect::<Vec<_>>(),
            ["192.0.2.0", "192.0.2.1", "192.0.2.2", "192.0.2.3"]
        );
    }

    #[test]
    fn duplicates_and_overlaps_collapse() {
        let t = plan_targets(
            &nets(&["192.0.2.0/31", "192.0.2.1", "192.0.2.1"]),
            &[Protocol::Bgp, Protocol::Bgp],
            &PortConfig::default(),
            0,
            16,
        )
        .unwrap();
        assert_eq!(t.len(), 2);
    }

    #[test]
    fn errors() {
        assert_eq!(
            plan_targets(&[], &BOTH, &PortConfig::default(), 0, 16),
            Err(PlanError::EmptyInput)
        );
        assert!(matches!(
            plan_targets(&nets(&["10.0.0.0/8"]), &BOTH, &PortConfig::default(), 0, 16),
            Err(PlanError::PrefixTooLarge { .. })
        ));
        assert!(matches!(
            parse_target_list("# c\n\nnot-an-ip\n"),
            Err(PlanError::Parse { line: 3, .. })
        ));
    }

    #[test]
    fn custom_ports() {
        let ports = PortConfig {
            ssh: 2222,
            bgp: 1179,
        };
        let t = plan_targets(&nets(&["::1"]), &BOTH, &ports, 0, 16).unwrap();
        assert!(t.iter().any(|x| x.port == 2222) && t.iter().any(|x| x.port == 1179));
    }

    proptest! {
        #[test]
        fn always_a_permutation(addrs in proptest::collection::vec(any::<u32>(), 1..40), seed in any::<u64>()) {
            let input: Vec<IpNet> = addrs.iter().map(|a| IpNet::from(IpAddr::from(a.to_be_bytes()))).collect();
            let t = plan_targets(&input, &BOTH, &PortConfig::default(), seed, 16).unwrap();
            let distinct: BTreeSet<u32> = addrs.iter().copied().collect();
            prop_assert_eq!(t.len(), distinct.len() * 2);
            let unique: BTreeSet<_> = t.iter().collect();
            prop_assert_eq!(unique.len(), t.len());
        }
    }
}
