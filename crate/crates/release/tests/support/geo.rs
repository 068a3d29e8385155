//! Brute-force geolocation: scan every table line, keep the longest
//! matching prefix.

use std::net::IpAddr;

use hawk_release::GeoClass;

const TABLE: &str = include_str!("../../data/geo_cidr.txt");
const EU: &str = include_str!("../../data/eu_countries.txt");

fn entries() -> Vec<(u128, u32, bool, String)> {
    TABLE
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let (cidr, country) = l.split_once(' ').unwrap();
            let (addr, len) = cidr.split_once('/').unwrap();
            let (bits, v4) = match addr.parse::<IpAddr>().unwrap() {
                IpAddr::V4(a) => (u32::from(a) as u128, true),
                IpAddr::V6(a) => (u128::from(a), false),
            };
            (bits, len.parse().unwrap(), v4, country.trim().to_owned())
        })
        .collect()
}

pub fn eu_codes(include_eea: bool) -> Vec<String> {
    EU.lines()
        .map(|l| l.split('#').next().unwrap().trim())
        .filter(|l| !l.is_empty())
        .filter_map(|l| {
            let mut p = l.split_whitespace();
            let code = p.next()?;
            (p.next() != Some("eea") || include_eea).then(|| code.to_owned())
        })
        .collect()
}

pub fn oracle(addr: IpAddr, include_eea: bool) -> GeoClass {
    let (bits, v4, width) = match addr {
        IpAddr::V4(a) => (u32::from(a) as u128, true, 32),
        IpAddr::V6(a) => (u128::from(a), false, 128),
    };
    let hit = entries()
        .into_iter()
        .filter(|(net, len, is_v4, _)| {
            *is_v4 == v4 && (*len == 0 || (bits >> (width - len)) == (net >> (width - len)))
        })
        .max_by_key(|(_, len, _, _)| *len);
    match hit {
        Some((_, _, _, c)) if eu_codes(include_eea).contains(&c) => GeoClass::Eu,
        Some(_) => GeoClass::NonEu,
        None => GeoClass::Unknown,
    }
}
