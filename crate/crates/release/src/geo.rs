//! Offline IP geolocation with longest-prefix matching.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};
use std::path::Path;

use ipnet::{IpNet, Ipv4Net, Ipv6Net};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED_TABLE: &str = include_str!("../data/geo_cidr.txt");
const BUNDLED_EU: &str = include_str!("../data/eu_countries.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum GeoClass {
    Eu,
    NonEu,
    Unknown,
}

impl GeoClass {
    pub const ALL: [GeoClass; 3] = [GeoClass::Eu, GeoClass::NonEu, GeoClass::Unknown];

    pub fn label(self) -> &'static str {
        match self {
            GeoClass::Eu => "EU",
            GeoClass::NonEu => "NON_EU",
            GeoClass::Unknown => "UNKNOWN",
        }
    }
}

impl fmt::Display for GeoClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("MALFORMED_ADDRESS: {0:?}")]
    MalformedAddress(String),
    #[error("line {line}: {reason}")]
    BadTable { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// CIDR to country table, one hash map per prefix length.
#[derive(Debug, Clone, Default)]
pub struct GeoTable {
    v4: Vec<(u8, HashMap<Ipv4Addr, String>)>,
    v6: Vec<(u8, HashMap<Ipv6Addr, String>)>,
}

impl GeoTable {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_TABLE).expect("bundled geo table parses")
    }

    pub fn load(path: &Path) -> Result<Self, GeoError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses `CIDR COUNTRY` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, GeoError> {
        let mut table = GeoTable::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |reason: &str| GeoError::BadTable { line: idx + 1, reason: reason.to_owned() };
            let mut parts = line.split_whitespace();
            let (Some(cidr), Some(country), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(bad("expected `CIDR COUNTRY`"));
            };
            let net: IpNet = cidr.parse().map_err(|_| bad("invalid CIDR"))?;
            table.insert(net, country.to_ascii_uppercase());
        }
        Ok(table)
    }

    pub fn insert(&mut self, net: IpNet, country: String) {
        match net.trunc() {
            IpNet::V4(n) => bucket(&mut self.v4, n.prefix_len()).insert(n.network(), country),
            IpNet::V6(n) => bucket(&mut self.v6, n.prefix_len()).insert(n.network(), country),
        };
    }

    pub fn len(&self) -> usize {
        self.v4.iter().map(|(_, m)| m.len()).sum::<usize>() + self.v6.iter().map(|(_, m)| m.len()).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Country of the most specific prefix containing `addr`.
    pub fn lookup(&self, addr: IpAddr) -> Option<&str> {
        match addr {
            IpAddr::V4(a) => self.v4.iter().find_map(|(len, map)| {
                let net = Ipv4Net::new(a, *len).ok()?.trunc();
                map.get(&net.network()).map(String::as_str)
            }),
            IpAddr::V6(a) => self.v6.iter().find_map(|(len, map)| {
                let net = Ipv6Net::new(a, *len).ok()?.trunc();
                map.get(&net.network()).map(String::as_str)
            }),
        }
    }
}

fn bucket<A>(buckets: &mut Vec<(u8, HashMap<A, String>)>, len: u8) -> &mut HashMap<A, String> {
    let pos = match buckets.binary_search_by(|(l, _)| len.cmp(l)) {
        Ok(pos) => pos,
        Err(pos) => {
            buckets.insert(pos, (len, HashMap::new()));
            pos
        }
    };
    &mut buckets[pos].1
}

/// Country codes treated as EU for third-country classification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EuSet {
    codes: BTreeSet<String>,
}

impl EuSet {
    pub fn bundled(include_eea: bool) -> Self {
        Self::parse(BUNDLED_EU, include_eea)
    }

    /// Parses `CODE eu|eea` lines.
    pub fn parse(text: &str, include_eea: bool) -> Self {
        let codes = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter_map(|l| {
                let mut parts = l.split_whitespace();
                let code = parts.next()?;
                let member = match parts.next().unwrap_or("eu") {
                    "eea" => include_eea,
                    _ => true,
                };
                member.then(|| code.to_ascii_uppercase())
            })
            .collect();
        EuSet { codes }
    }

    pub fn from_codes<I: IntoIterator<Item = S>, S: Into<String>>(codes: I) -> Self {
        EuSet { codes: codes.into_iter().map(|c| c.into().to_ascii_uppercase()).collect() }
    }

    pub fn contains(&self, code: &str) -> bool {
        self.codes.contains(code)
    }
}

fn is_non_public(addr: IpAddr) -> bool {
    match addr {
        IpAddr::V4(a) => {
            let o = a.octets();
            a.is_loopback()
                || a.is_private()
                || a.is_link_local()
                || a.is_unspecified()
                || a.is_broadcast()
                // shared address space 100.64.0.0/10
                || (o[0] == 100 && (o[1] & 0xc0) == 64)
        }
        IpAddr::V6(a) => {
            let seg0 = a.segments()[0];
            a.is_loopback() || a.is_unspecified() || (seg0 & 0xfe00) == 0xfc00 || (seg0 & 0xffc0) == 0xfe80
        }
    }
}

pub fn classify_ip(ip: &str, table: &GeoTable, eu: &EuSet) -> Result<GeoClass, GeoError> {
    let addr: IpAddr = ip.trim().parse().map_err(|_| GeoError::MalformedAddress(ip.to_owned()))?;
    let addr = match addr {
        IpAddr::V6(v6) => v6.to_ipv4_mapped().map(IpAddr::V4).unwrap_or(addr),
        v4 => v4,
    };
    if is_non_public(addr) {
        return Ok(GeoClass::Unknown);
    }
    Ok(match table.lookup(addr) {
        Some(country) if eu.contains(country) => GeoClass::Eu,
        Some(_) => GeoClass::NonEu,
        None => GeoClass::Unknown,
    })
}

/// Classifies an HTTP authority (`host[:port]`, `[v6]:port`). Names that
/// are not IP literals are not resolved and come out as [`GeoClass::Unknown`].
pub fn classify_host(authority: &str, table: &GeoTable, eu: &EuSet) -> GeoClass {
    let host = if let Some(rest) = authority.strip_prefix('[') {
        rest.split(']').next().unwrap_or("")
    } else if authority.matches(':').count() == 1 {
        authority.split(':').next().unwrap_or("")
    } else {
        authority
    };
    classify_ip(host, table, eu).unwrap_or(GeoClass::Unknown)
}
