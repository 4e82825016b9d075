//! Lookup provider abstraction and the fixture-backed implementation.

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::net::Ipv4Addr;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpfFailureMode {
    HardFail,
    SoftFail,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpfPolicy {
    pub authorized_ips: BTreeSet<Ipv4Addr>,
    pub failure_mode: SpfFailureMode,
}

/// Answer to a blocklist query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ListStatus {
    Listed,
    NotListed,
    /// The zone or list could not be consulted.
    Unavailable,
}

/// Everything the source filters need to know about the outside world.
///
/// Implementations must be deterministic: the same query gives the same answer.
pub trait LookupProvider {
    fn dnsbl_listed(&self, ip: Ipv4Addr, zone: &str) -> ListStatus;
    fn surbl_listed(&self, domain: &str, list: &str) -> ListStatus;
    fn spf_policy(&self, domain: &str) -> Option<SpfPolicy>;
    fn ptr_record(&self, ip: Ipv4Addr) -> Option<String>;
}

impl<P: LookupProvider + ?Sized> LookupProvider for &P {
    fn dnsbl_listed(&self, ip: Ipv4Addr, zone: &str) -> ListStatus {
        (**self).dnsbl_listed(ip, zone)
    }
    fn surbl_listed(&self, domain: &str, list: &str) -> ListStatus {
        (**self).surbl_listed(domain, list)
    }
    fn spf_policy(&self, domain: &str) -> Option<SpfPolicy> {
        (**self).spf_policy(domain)
    }
    fn ptr_record(&self, ip: Ipv4Addr) -> Option<String> {
        (**self).ptr_record(ip)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("fixture line {line}: {reason}")]
pub struct FixtureError {
    pub line: usize,
    pub reason: String,
}

/// Provider answering from in-memory records.
///
/// SURBL queries match the queried host or any parent domain, so listing
/// `evilsite.com` also covers `www2.evilsite.com`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FixtureProvider {
    dnsbl: HashSet<(String, Ipv4Addr)>,
    surbl: HashSet<(String, String)>,
    spf: HashMap<String, SpfPolicy>,
    ptr: HashMap<Ipv4Addr, String>,
    unavailable: HashSet<String>,
}

impl FixtureProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn list_ip(&mut self, zone: &str, ip: Ipv4Addr) -> &mut Self {
        self.dnsbl.insert((zone.to_ascii_lowercase(), ip));
        self
    }

    pub fn list_domain(&mut self, list: &str, domain: &str) -> &mut Self {
        self.surbl
            .insert((list.to_ascii_lowercase(), domain.to_ascii_lowercase()));
        self
    }

    /// Publishes (or extends) a domain's SPF policy.
    pub fn publish_spf(&mut self, domain: &str, mode: SpfFailureMode, ips: &[Ipv4Addr]) -> &mut Self {
        let entry = self
            .spf
            .entry(domain.to_ascii_lowercase())
            .or_insert_with(|| SpfPolicy {
                authorized_ips: BTreeSet::new(),
                failure_mode: mode,
            });
        entry.failure_mode = mode;
        entry.authorized_ips.extend(ips.iter().copied());
        self
    }

    pub fn set_ptr(&mut self, ip: Ipv4Addr, host: &str) -> &mut Self {
        self.ptr.insert(ip, host.to_string());
        self
    }

    pub fn mark_unavailable(&mut self, name: &str) -> &mut Self {
        self.unavailable.insert(name.to_ascii_lowercase());
        self
    }

    /// Adds every record of `other` to this fixture.
    pub fn merge(&mut self, other: &FixtureProvider) {
        self.dnsbl.extend(other.dnsbl.iter().cloned());
        self.surbl.extend(other.surbl.iter().cloned());
        for (domain, policy) in &other.spf {
            let ips: Vec<Ipv4Addr> = policy.authorized_ips.iter().copied().collect();
            self.publish_spf(domain, policy.failure_mode, &ips);
        }
        self.ptr.extend(other.ptr.iter().map(|(k, v)| (*k, v.clone())));
        self.unavailable.extend(other.unavailable.iter().cloned());
    }

    pub fn parse(text: &str) -> Result<Self, FixtureError> {
        let mut fx = Self::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: &str| FixtureError {
                line: i + 1,
                reason: reason.to_string(),
            };
            let ip = |s: &str| s.parse::<Ipv4Addr>().map_err(|_| err(&format!("invalid IPv4 address `{s}`")));
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                ["dnsbl", zone, addr] => {
                    fx.list_ip(zone, ip(addr)?);
                }
                ["surbl", list, domain] => {
                    fx.list_domain(list, domain);
                }
                ["spf", domain, mode, ips] => {
                    let mode = match *mode {
                        "hard" => SpfFailureMode::HardFail,
                        "soft" => SpfFailureMode::SoftFail,
                        other => return Err(err(&format!("unknown SPF mode `{other}`"))),
                    };
                    let ips = ips.split(',').map(ip).collect::<Result<Vec<_>, _>>()?;
                    fx.publish_spf(domain, mode, &ips);
                }
                ["ptr", addr, host] => {
                    fx.set_ptr(ip(addr)?, host);
                }
                ["unavailable", name] => {
                    fx.mark_unavailable(name);
                }
                _ => return Err(err(&format!("unrecognized record `{line}`"))),
            }
        }
        Ok(fx)
    }

    /// Canonical text form, records sorted within each kind.
    pub fn to_text(&self) -> String {
        let mut lines: Vec<String> = Vec::new();
        let dnsbl: BTreeSet<_> = self.dnsbl.iter().collect();
        lines.extend(dnsbl.into_iter().map(|(z, ip)| format!("dnsbl {z} {ip}")));
        let surbl: BTreeSet<_> = self.surbl.iter().collect();
        lines.extend(surbl.into_iter().map(|(l, d)| format!("surbl {l} {d}")));
        let spf: BTreeMap<_, _> = self.spf.iter().collect();
        for (domain, policy) in spf {
            let mode = match policy.failure_mode {
                SpfFailureMode::HardFail => "hard",
                SpfFailureMode::SoftFail => "soft",
            };
            let ips: Vec<String> = policy.authorized_ips.iter().map(ToString::to_string).collect();
            if !ips.is_empty() {
                lines.push(format!("spf {domain} {mode} {}", ips.join(",")));
            }
        }
        let ptr: BTreeMap<_, _> = self.ptr.iter().collect();
        lines.extend(ptr.into_iter().map(|(ip, h)| format!("ptr {ip} {h}")));
        let unavailable: BTreeSet<_> = self.unavailable.iter().collect();
        lines.extend(unavailable.into_iter().map(|n| format!("unavailable {n}")));
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}

impl LookupProvider for FixtureProvider {
    fn dnsbl_listed(&self, ip: Ipv4Addr, zone: &str) -> ListStatus {
        let zone = zone.to_ascii_lowercase();
        if self.unavailable.contains(&zone) {
            ListStatus::Unavailable
        } else if self.dnsbl.contains(&(zone, ip)) {
            ListStatus::Listed
        } else {
            ListStatus::NotListed
        }
    }

    fn surbl_listed(&self, domain: &str, list: &str) -> ListStatus {
        let list = list.to_ascii_lowercase();
        if self.unavailable.contains(&list) {
            return ListStatus::Unavailable;
        }
        let domain = domain.to_ascii_lowercase();
        let mut candidate = domain.as_str();
        loop {
            if self.surbl.contains(&(list.clone(), candidate.to_string())) {
                return ListStatus::Listed;
            }
            match candidate.split_once('.') {
                Some((_, parent)) if parent.contains('.') => candidate = parent,
                _ => return ListStatus::NotListed,
            }
        }
    }

    fn spf_policy(&self, domain: &str) -> Option<SpfPolicy> {
        self.spf.get(&domain.to_ascii_lowercase()).cloned()
    }

    fn ptr_record(&self, ip: Ipv4Addr) -> Option<String> {
        self.ptr.get(&ip).cloned()
    }
}

/// Wraps a provider and counts every query made through it.
#[derive(Debug, Default)]
pub struct CountingProvider<P> {
    inner: P,
    dnsbl: Cell<usize>,
    surbl: Cell<usize>,
    spf: Cell<usize>,
    ptr: Cell<usize>,
}

impl<P: LookupProvider> CountingProvider<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            dnsbl: Cell::new(0),
            surbl: Cell::new(0),
            spf: Cell::new(0),
            ptr: Cell::new(0),
        }
    }

    pub fn dnsbl_queries(&self) -> usize {
        self.dnsbl.get()
    }
    pub fn surbl_queries(&self) -> usize {
        self.surbl.get()
    }
    pub fn spf_queries(&self) -> usize {
        self.spf.get()
    }
    pub fn ptr_queries(&self) -> usize {
        self.ptr.get()
    }
    pub fn total(&self) -> usize {
        self.dnsbl.get() + self.surbl.get() + self.spf.get() + self.ptr.get()
    }
    pub fn reset(&self) {
        for c in [&self.dnsbl, &self.surbl, &self.spf, &self.ptr] {
            c.set(0);
        }
    }
}

impl<P: LookupProvider> LookupProvider for CountingProvider<P> {
    fn dnsbl_listed(&self, ip: Ipv4Addr, zone: &str) -> ListStatus {
        self.dnsbl.set(self.dnsbl.get() + 1);
        self.inner.dnsbl_listed(ip, zone)
    }
    fn surbl_listed(&self, domain: &str, list: &str) -> ListStatus {
        self.surbl.set(self.surbl.get() + 1);
        self.inner.surbl_listed(domain, list)
    }
    fn spf_policy(&self, domain: &str) -> Option<SpfPolicy> {
        self.spf.set(self.spf.get() + 1);
        self.inner.spf_policy(domain)
    }
    fn ptr_record(&self, ip: Ipv4Addr) -> Option<String> {
        self.ptr.set(self.ptr.get() + 1);
        self.inner.ptr_record(ip)
    }
}
