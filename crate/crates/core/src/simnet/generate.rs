//! Seeded random fleets.

use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{
    BgpBehavior, BgpProfile, CapabilitySpec, FleetSpec, HostSpec, SshBehavior, SshProfile,
};

#[derive(Debug, Clone, PartialEq)]
pub struct FleetParams {
    pub hosts: usize,
    /// Hosts given both IPv4 and IPv6 interfaces, 1 or 2 of each.
    pub dual_stack_hosts: usize,
    /// Interfaces per single-family host are drawn from 1..=max.
    pub max_interfaces: usize,
    pub ssh_probability: f64,
    pub bgp_probability: f64,
    /// Fraction of single-family hosts that are IPv6-only.
    pub ipv6_fraction: f64,
    /// Fraction of SSH hosts given a non-normal behavior.
    pub odd_ssh_fraction: f64,
}

impl Default for FleetParams {
    fn default() -> Self {
        FleetParams {
            hosts: 50,
            dual_stack_hosts: 10,
            max_interfaces: 4,
            ssh_probability: 0.7,
            bgp_probability: 0.5,
            ipv6_fraction: 0.3,
            odd_ssh_fraction: 0.15,
        }
    }
}

const BANNERS: [&str; 4] = [
    "SSH-2.0-OpenSSH_8.9p1 Ubuntu-3ubuntu0.1",
    "SSH-2.0-OpenSSH_7.4",
    "SSH-2.0-Cisco-1.25",
    "SSH-2.0-dropbear_2020.81",
];

const BGP_BEHAVIORS: [BgpBehavior; 3] = [
    BgpBehavior::OpenThenNotify,
    BgpBehavior::ImmediateClose,
    BgpBehavior::Silent,
];

/// A fleet with unique host keys and BGP identifiers, so that identifier
/// groups coincide with hosts. Dual-stack hosts always run normal SSH.
/// BGP behaviors rotate through all three profiles.
pub fn generate_fleet(params: &FleetParams, seed: u64) -> FleetSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v4_next: u32 = u32::from(Ipv4Addr::new(198, 18, 0, 1));
    let mut v6_next: u128 = u128::from("2001:db8:5e::1".parse::<Ipv6Addr>().expect("literal"));
    let mut v4 = |n: usize| -> Vec<IpAddr> {
        (0..n)
            .map(|_| {
                v4_next += 1;
                IpAddr::V4(Ipv4Addr::from(v4_next))
            })
            .collect()
    };
    let mut v6 = |n: usize| -> Vec<IpAddr> {
        (0..n)
            .map(|_| {
                v6_next += 1;
                IpAddr::V6(Ipv6Addr::from(v6_next))
            })
            .collect()
    };

    let mut order: Vec<usize> = (0..params.hosts).collect();
    order.shuffle(&mut rng);
    let dual: std::collections::BTreeSet<usize> =
        order.into_iter().take(params.dual_stack_hosts).collect();

    let mut bgp_count = 0usize;
    let mut hosts = Vec::with_capacity(params.hosts);
    for i in 0..params.hosts {
        let id = format!("host-{i:03}");
        let is_dual = dual.contains(&i);
        let interfaces = if is_dual {
            let mut a = v4(rng.random_range(1..=2));
            a.extend(v6(rng.random_range(1..=2)));
            a
        } else {
            let n = rng.random_range(1..=params.max_interfaces.max(1));
            if rng.random_bool(params.ipv6_fraction) {
                v6(n)
            } else {
                v4(n)
            }
        };

        let mut want_ssh = is_dual || rng.random_bool(params.ssh_probability);
        let want_bgp = rng.random_bool(params.bgp_probability);
        if !want_ssh && !want_bgp {
            want_ssh = true;
        }
        let ssh = want_ssh.then(|| {
            let mut p = SshProfile::new(BANNERS[rng.random_range(0..BANNERS.len())]);
            if !is_dual && rng.random_bool(params.odd_ssh_fraction) {
                p.behavior = [
                    SshBehavior::NoCurve,
                    SshBehavior::KexinitTwice,
                    SshBehavior::BannerThenSilent,
                    SshBehavior::ImmediateClose,
                ][rng.random_range(0..4)];
                if p.behavior != SshBehavior::ImmediateClose {
                    // without a host key only the banner can tell hosts apart
                    p.banner = format!("SSH-2.0-Simnet_{id}");
                }
            }
            p
        });
        let bgp = want_bgp.then(|| {
            let behavior = BGP_BEHAVIORS[bgp_count % BGP_BEHAVIORS.len()];
            bgp_count += 1;
            let mut capabilities = vec![CapabilitySpec {
                code: 128,
                value: String::new(),
            }];
            capabilities.push(CapabilitySpec {
                code: 2,
                value: String::new(),
            });
            if rng.random_bool(0.5) {
                capabilities.push(CapabilitySpec {
                    code: 1,
                    value: "00010001".into(),
                });
            }
            BgpProfile {
                version: 4,
                my_as: [23456, 64500, 64501, 65000][rng.random_range(0..4)],
                hold_time: [90, 180][rng.random_range(0..2)],
                bgp_identifier: Ipv4Addr::from(0x0aff_0000u32 + i as u32),
                capabilities,
                behavior,
            }
        });
        hosts.push(HostSpec {
            id,
            interfaces,
            ssh,
            bgp,
        });
    }
    FleetSpec {
        hosts,
        prefixes: vec![],
    }
}
