//! Longest-prefix-match table from IP prefixes to origin ASNs.

use std::io::{BufRead, BufReader};
use std::net::IpAddr;
use std::path::Path;

use ipnet::IpNet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PrefixTableError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, Default)]
struct Node {
    children: [Option<u32>; 2],
    asn: Option<u32>,
}

/// Uncompressed binary trie over the address bits, one per family.
#[derive(Debug, Clone)]
struct BitTrie {
    nodes: Vec<Node>,
    width: u8,
}

impl BitTrie {
    fn new(width: u8) -> Self {
        BitTrie {
            nodes: vec![Node::default()],
            width,
        }
    }

    fn bit(&self, key: u128, depth: u8) -> usize {
        ((key >> (self.width - 1 - depth)) & 1) as usize
    }

    fn insert(&mut self, key: u128, len: u8, asn: u32) -> Option<u32> {
        let mut cur = 0usize;
        for depth in 0..len {
            let b = self.bit(key, depth);
            cur = match self.nodes[cur].children[b] {
                Some(next) => next as usize,
                None => {
                    self.nodes.push(Node::default());
                    let idx = self.nodes.len() - 1;
                    self.nodes[cur].children[b] = Some(idx as u32);
                    idx
                }
            };
        }
        self.nodes[cur].asn.replace(asn)
    }

    fn lookup(&self, key: u128) -> Option<u32> {
        let mut cur = 0usize;
        let mut best = self.nodes[0].asn;
        for depth in 0..self.width {
            match self.nodes[cur].children[self.bit(key, depth)] {
                Some(next) => {
                    cur = next as usize;
                    if let Some(asn) = self.nodes[cur].asn {
                        best = Some(asn);
                    }
                }
                None => break,
            }
        }
        best
    }
}

#[derive(Debug, Clone)]
pub struct PrefixTable {
    v4: BitTrie,
    v6: BitTrie,
    entries: usize,
    /// Where the table came from, for report metadata.
    pub provenance: String,
}

impl Default for PrefixTable {
    fn default() -> Self {
        Self::new()
    }
}

fn key_of(addr: IpAddr) -> u128 {
    match addr {
        IpAddr::V4(a) => u32::from(a) as u128,
        IpAddr::V6(a) => u128::from(a),
    }
}

impl PrefixTable {
    pub fn new() -> Self {
        PrefixTable {
            v4: BitTrie::new(32),
            v6: BitTrie::new(128),
            entries: 0,
            provenance: String::new(),
        }
    }

    /// Inserts a prefix (host bits are ignored). Returns the ASN it replaced.
    pub fn insert(&mut self, net: IpNet, asn: u32) -> Option<u32> {
        let net = net.trunc();
        let key = key_of(net.network());
        let prev = match net {
            IpNet::V4(n) => self.v4.insert(key, n.prefix_len(), asn),
            IpNet::V6(n) => self.v6.insert(key, n.prefix_len(), asn),
        };
        if prev.is_none() {
            self.entries += 1;
        }
        prev
    }

    /// ASN of the most specific covering prefix.
    pub fn lookup(&self, addr: IpAddr) -> Option<u32> {
        match addr {
            IpAddr::V4(_) => self.v4.lookup(key_of(addr)),
            IpAddr::V6(_) => self.v6.lookup(key_of(addr)),
        }
    }

    pub fn len(&self) -> usize {
        self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries == 0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PrefixLoadStats {
    pub lines: usize,
    pub entries: usize,
    /// Exact prefixes seen more than once; the last line wins.
    pub duplicates: usize,
}

/// Reads `prefix/len<TAB>asn` lines. The CAIDA three-column layout
/// (`prefix<TAB>len<TAB>asn`) is accepted too. Multi-origin ASN fields
/// (`64500_64501`) resolve to their first ASN. Blank lines and `#`
/// comments are skipped.
pub fn load_prefix_table(path: &Path) -> Result<(PrefixTable, PrefixLoadStats), PrefixTableError> {
    let file = std::fs::File::open(path).map_err(|source| PrefixTableError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    let (mut table, stats) = read_prefix_table(BufReader::new(file))?;
    table.provenance = path.display().to_string();
    Ok((table, stats))
}

pub fn read_prefix_table<R: BufRead>(
    reader: R,
) -> Result<(PrefixTable, PrefixLoadStats), PrefixTableError> {
    let mut table = PrefixTable::new();
    let mut stats = PrefixLoadStats::default();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| PrefixTableError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        stats.lines += 1;
        let err = |message: String| PrefixTableError::Parse {
            line: line_no,
            message,
        };
        let cols: Vec<&str> = trimmed.split_whitespace().collect();
        let (prefix, asn_field) = match cols.as_slice() {
            [prefix, asn] => (prefix.to_string(), *asn),
            [addr, len, asn] => (format!("{addr}/{len}"), *asn),
            _ => return Err(err(format!("expected 2 or 3 columns, got {}", cols.len()))),
        };
        let net: IpNet = prefix
            .parse()
            .map_err(|e| err(format!("bad prefix {prefix:?}: {e}")))?;
        let first = asn_field.split(['_', ',']).next().unwrap_or_default();
        let asn: u32 = first
            .parse()
            .map_err(|e| err(format!("bad asn {asn_field:?}: {e}")))?;
        if table.insert(net, asn).is_some() {
            stats.duplicates += 1;
        }
    }
    stats.entries = table.len();
    Ok((table, stats))
}
