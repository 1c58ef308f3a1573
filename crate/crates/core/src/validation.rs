//! Agreement between alias sets inferred from two independent sources.

use std::collections::{BTreeMap, BTreeSet};
use std::net::IpAddr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::alias::{fraction, AliasSet};

pub const VALIDATION_REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ValidationError {
    #[error("only {eligible} eligible sets, {requested} requested")]
    NotEnoughEligible { requested: usize, eligible: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Disagreement {
    /// The A-set restricted to the common universe.
    pub addresses: Vec<IpAddr>,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AgreementReport {
    /// Addresses present in both families.
    pub universe: usize,
    /// A-sets left after restriction to the universe.
    pub sample_size: usize,
    pub agree: usize,
    pub disagree: usize,
    pub disagreements: Vec<Disagreement>,
}

fn restrict(sets: &[AliasSet], universe: &BTreeSet<IpAddr>) -> Vec<BTreeSet<IpAddr>> {
    let mut out: Vec<BTreeSet<IpAddr>> = sets
        .iter()
        .map(|s| {
            s.addresses
                .intersection(universe)
                .copied()
                .collect::<BTreeSet<_>>()
        })
        .filter(|s| !s.is_empty())
        .collect();
    out.sort();
    out.dedup();
    out
}

/// Compares A-sets against B-sets over the addresses both cover. An A-set
/// agrees iff B has exactly the same address set.
pub fn cross_protocol_agreement(a: &[AliasSet], b: &[AliasSet]) -> AgreementReport {
    let cover = |sets: &[AliasSet]| -> BTreeSet<IpAddr> {
        sets.iter()
            .flat_map(|s| s.addresses.iter().copied())
            .collect()
    };
    let universe: BTreeSet<IpAddr> = cover(a).intersection(&cover(b)).copied().collect();
    let a_sets = restrict(a, &universe);
    let b_sets = restrict(b, &universe);

    let mut b_index: BTreeMap<IpAddr, usize> = BTreeMap::new();
    for (i, set) in b_sets.iter().enumerate() {
        for addr in set {
            b_index.insert(*addr, i);
        }
    }

    let mut report = AgreementReport {
        universe: universe.len(),
        sample_size: a_sets.len(),
        ..Default::default()
    };
    for set in &a_sets {
        let touched: BTreeSet<usize> = set
            .iter()
            .filter_map(|addr| b_index.get(addr).copied())
            .collect();
        if touched.len() == 1 && b_sets[*touched.iter().next().expect("one")] == *set {
            report.agree += 1;
            continue;
        }
        report.disagree += 1;
        let all_inside = touched.iter().all(|&i| b_sets[i].is_subset(set));
        let detail = if all_inside {
            format!("split into {}", touched.len())
        } else if touched.len() == 1 {
            let other = &b_sets[*touched.iter().next().expect("one")];
            format!("merged into a set of {}", other.len())
        } else {
            format!("overlaps {} sets", touched.len())
        };
        report.disagreements.push(Disagreement {
            addresses: set.iter().copied().collect(),
            detail,
        });
    }
    report
}

#[derive(Debug, Clone, Serialize)]
pub struct SetSample {
    pub sets: Vec<AliasSet>,
    pub total_sets: usize,
    pub eligible_sets: usize,
    pub eligibility_rate: f64,
}

/// Uniform sample without replacement among sets of at most
/// `max_set_size` addresses. Sampled sets keep their input order.
pub fn sample_sets(
    sets: &[AliasSet],
    max_set_size: usize,
    count: usize,
    seed: u64,
) -> Result<SetSample, ValidationError> {
    let eligible: Vec<&AliasSet> = sets.iter().filter(|s| s.len() <= max_set_size).collect();
    if count > eligible.len() {
        return Err(ValidationError::NotEnoughEligible {
            requested: count,
            eligible: eligible.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, eligible.len(), count).into_vec();
    picked.sort_unstable();
    Ok(SetSample {
        sets: picked.into_iter().map(|i| eligible[i].clone()).collect(),
        total_sets: sets.len(),
        eligible_sets: eligible.len(),
        eligibility_rate: fraction(eligible.len(), sets.len()),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationRow {
    pub pair: String,
    pub sample_size: usize,
    pub agree: usize,
    pub disagree: usize,
    pub agree_fraction: f64,
    pub disagreements: Vec<Disagreement>,
}

impl ValidationRow {
    pub fn new(pair: impl Into<String>, report: AgreementReport) -> Self {
        ValidationRow {
            pair: pair.into(),
            sample_size: report.sample_size,
            agree: report.agree,
            disagree: report.disagree,
            agree_fraction: fraction(report.agree, report.sample_size),
            disagreements: report.disagreements,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub schema_version: u32,
    pub rows: Vec<ValidationRow>,
}
