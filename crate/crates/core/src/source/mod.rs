//! Connection-time source filters: DNSBL, SURBL, SPF, reverse DNS and
//! greylisting. All outside knowledge comes through a [`LookupProvider`].

mod greylist;
mod provider;

use std::collections::BTreeSet;

pub use greylist::{GreylistDecision, GreylistEntry, GreylistState, GreylistStore, RetryWindow, SnapshotError};
pub use provider::{
    CountingProvider, FixtureError, FixtureProvider, ListStatus, LookupProvider, SpfFailureMode, SpfPolicy,
};

use crate::message::{extract_url_domains, ConnectionContext, EmailMessage};

pub const DEFAULT_DNSBL_ZONES: [&str; 3] = ["relays.ordb.org", "bl.spamcop.net", "sbl.spamhaus.org"];
pub const DEFAULT_SURBL_LISTS: [&str; 4] = ["sc.surbl.org", "ws.surbl.org", "ob.surbl.org", "ab.surbl.org"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SpfResult {
    Pass,
    Fail,
    SoftFail,
    None,
}

impl SpfResult {
    pub fn as_str(self) -> &'static str {
        match self {
            SpfResult::Pass => "pass",
            SpfResult::Fail => "fail",
            SpfResult::SoftFail => "softfail",
            SpfResult::None => "none",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceFilterConfig {
    pub dnsbl_zones: Vec<String>,
    pub reject_on_dnsbl_hit: bool,
    pub surbl_lists: Vec<String>,
    pub surbl_whitelist: BTreeSet<String>,
    pub spf_reject_on: BTreeSet<SpfResult>,
    pub rdns_require_ptr: bool,
    pub rdns_require_helo_match: bool,
    pub greylist_window: RetryWindow,
    pub greylist_enabled: bool,
}

impl Default for SourceFilterConfig {
    fn default() -> Self {
        Self {
            dnsbl_zones: DEFAULT_DNSBL_ZONES.iter().map(|s| s.to_string()).collect(),
            reject_on_dnsbl_hit: true,
            surbl_lists: DEFAULT_SURBL_LISTS.iter().map(|s| s.to_string()).collect(),
            surbl_whitelist: BTreeSet::new(),
            spf_reject_on: [SpfResult::Fail, SpfResult::SoftFail].into_iter().collect(),
            rdns_require_ptr: true,
            rdns_require_helo_match: false,
            greylist_window: RetryWindow::default(),
            greylist_enabled: true,
        }
    }
}

/// Outcome of a check that may reject, plus anything worth logging.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Screening<R> {
    pub rejection: Option<R>,
    pub warnings: Vec<String>,
}

impl<R> Screening<R> {
    fn pass(warnings: Vec<String>) -> Self {
        Self {
            rejection: None,
            warnings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DnsblHit {
    pub zone: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SurblHit {
    pub domain: String,
    pub list: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdnsRejection {
    MissingPtr,
    HeloMismatch,
}

impl RdnsRejection {
    pub fn as_str(self) -> &'static str {
        match self {
            RdnsRejection::MissingPtr => "missing_ptr",
            RdnsRejection::HeloMismatch => "helo_mismatch",
        }
    }
}

/// Queries the zones in order and cites the first one listing the client.
/// Unavailable zones are skipped; when every zone is unavailable the result
/// is a pass carrying a degraded-mode warning.
pub fn dnsbl_check(
    ctx: &ConnectionContext,
    config: &SourceFilterConfig,
    provider: &impl LookupProvider,
) -> Screening<DnsblHit> {
    let mut warnings = Vec::new();
    let mut unavailable = 0;
    for zone in &config.dnsbl_zones {
        match provider.dnsbl_listed(ctx.client_ip, zone) {
            ListStatus::Listed => {
                return Screening {
                    rejection: Some(DnsblHit { zone: zone.clone() }),
                    warnings,
                }
            }
            ListStatus::NotListed => {}
            ListStatus::Unavailable => {
                unavailable += 1;
                warnings.push(format!("zone {zone} unavailable"));
            }
        }
    }
    if unavailable > 0 && unavailable == config.dnsbl_zones.len() {
        warnings.push("degraded: no dnsbl zone available".to_string());
    }
    Screening::pass(warnings)
}

/// Rejects when any non-whitelisted URL domain is on any configured list;
/// cites the first hit in (domain order, list order).
pub fn surbl_check(
    message: &EmailMessage,
    config: &SourceFilterConfig,
    provider: &impl LookupProvider,
) -> Screening<SurblHit> {
    let mut warnings: Vec<String> = Vec::new();
    let whitelist: BTreeSet<String> = config.surbl_whitelist.iter().map(|d| d.to_ascii_lowercase()).collect();
    for domain in extract_url_domains(&message.body) {
        if whitelist.contains(&domain) {
            continue;
        }
        for list in &config.surbl_lists {
            match provider.surbl_listed(&domain, list) {
                ListStatus::Listed => {
                    return Screening {
                        rejection: Some(SurblHit {
                            domain,
                            list: list.clone(),
                        }),
                        warnings,
                    }
                }
                ListStatus::NotListed => {}
                ListStatus::Unavailable => {
                    let w = format!("list {list} unavailable");
                    if !warnings.contains(&w) {
                        warnings.push(w);
                    }
                }
            }
        }
    }
    Screening::pass(warnings)
}

pub fn spf_check(ctx: &ConnectionContext, provider: &impl LookupProvider) -> SpfResult {
    let Some(policy) = provider.spf_policy(&ctx.mail_from_domain) else {
        return SpfResult::None;
    };
    if policy.authorized_ips.contains(&ctx.client_ip) {
        SpfResult::Pass
    } else {
        match policy.failure_mode {
            SpfFailureMode::HardFail => SpfResult::Fail,
            SpfFailureMode::SoftFail => SpfResult::SoftFail,
        }
    }
}

pub fn rdns_check(
    ctx: &ConnectionContext,
    config: &SourceFilterConfig,
    provider: &impl LookupProvider,
) -> Option<RdnsRejection> {
    if !config.rdns_require_ptr && !config.rdns_require_helo_match {
        return None;
    }
    match provider.ptr_record(ctx.client_ip) {
        None if config.rdns_require_ptr => Some(RdnsRejection::MissingPtr),
        // Without a PTR there is nothing to compare the HELO name against.
        None => config.rdns_require_helo_match.then_some(RdnsRejection::HeloMismatch),
        Some(ptr) if config.rdns_require_helo_match && !ptr.eq_ignore_ascii_case(&ctx.helo_hostname) => {
            Some(RdnsRejection::HeloMismatch)
        }
        Some(_) => None,
    }
}
