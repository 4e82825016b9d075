//! Greylisting on (sender, recipient, client IP) triplets.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::message::EmailAddress;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GreylistState {
    Pending,
    Confirmed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GreylistEntry {
    pub sender: EmailAddress,
    pub recipient: EmailAddress,
    pub client_ip: Ipv4Addr,
    pub first_seen: u64,
    pub state: GreylistState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GreylistDecision {
    Accept,
    TempFail,
}

/// Retry window in seconds, both ends inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryWindow {
    pub min_retry: u64,
    pub max_retry: u64,
}

impl Default for RetryWindow {
    fn default() -> Self {
        Self {
            min_retry: 10,
            max_retry: 12 * 3600,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("greylist snapshot line {line}: {reason}")]
pub struct SnapshotError {
    pub line: usize,
    pub reason: String,
}

type Triplet = (EmailAddress, EmailAddress, Ipv4Addr);

/// In-memory triplet store. `check` is the only mutator; callers sharing a
/// store across threads must hold a lock around it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GreylistStore {
    entries: BTreeMap<Triplet, GreylistEntry>,
}

impl GreylistStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, sender: &EmailAddress, recipient: &EmailAddress, ip: Ipv4Addr) -> Option<&GreylistEntry> {
        self.entries.get(&key(sender, recipient, ip))
    }

    pub fn entries(&self) -> impl Iterator<Item = &GreylistEntry> {
        self.entries.values()
    }

    pub fn check(
        &mut self,
        sender: &EmailAddress,
        recipient: &EmailAddress,
        client_ip: Ipv4Addr,
        now: u64,
        window: RetryWindow,
    ) -> GreylistDecision {
        let k = key(sender, recipient, client_ip);
        let Some(entry) = self.entries.get_mut(&k) else {
            self.entries.insert(
                k,
                GreylistEntry {
                    sender: sender.clone(),
                    recipient: recipient.clone(),
                    client_ip,
                    first_seen: now,
                    state: GreylistState::Pending,
                },
            );
            return GreylistDecision::TempFail;
        };
        if entry.state == GreylistState::Confirmed {
            return GreylistDecision::Accept;
        }
        let delta = now.saturating_sub(entry.first_seen);
        if delta < window.min_retry {
            GreylistDecision::TempFail
        } else if delta <= window.max_retry {
            entry.state = GreylistState::Confirmed;
            GreylistDecision::Accept
        } else {
            // Too late to count as a retry: start over.
            entry.first_seen = now;
            GreylistDecision::TempFail
        }
    }

    /// One line per entry: `<sender> <recipient> <ip> <first_seen> <pending|confirmed>`.
    pub fn to_snapshot(&self) -> String {
        let mut out = String::new();
        for e in self.entries.values() {
            let state = match e.state {
                GreylistState::Pending => "pending",
                GreylistState::Confirmed => "confirmed",
            };
            out.push_str(&format!(
                "{} {} {} {} {}\n",
                e.sender, e.recipient, e.client_ip, e.first_seen, state
            ));
        }
        out
    }

    pub fn from_snapshot(text: &str) -> Result<Self, SnapshotError> {
        let mut store = Self::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let err = |reason: &str| SnapshotError {
                line: i + 1,
                reason: reason.to_string(),
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            let [sender, recipient, ip, first_seen, state] = f.as_slice() else {
                return Err(err("expected five fields"));
            };
            let entry = GreylistEntry {
                sender: sender.parse().map_err(|_| err("bad sender"))?,
                recipient: recipient.parse().map_err(|_| err("bad recipient"))?,
                client_ip: ip.parse().map_err(|_| err("bad ip"))?,
                first_seen: first_seen.parse().map_err(|_| err("bad timestamp"))?,
                state: match *state {
                    "pending" => GreylistState::Pending,
                    "confirmed" => GreylistState::Confirmed,
                    _ => return Err(err("bad state")),
                },
            };
            let k = key(&entry.sender, &entry.recipient, entry.client_ip);
            if store.entries.insert(k, entry).is_some() {
                return Err(err("duplicate triplet"));
            }
        }
        Ok(store)
    }
}

fn key(sender: &EmailAddress, recipient: &EmailAddress, ip: Ipv4Addr) -> Triplet {
    let norm = |a: &EmailAddress| EmailAddress::new(&a.local().to_lowercase(), a.domain()).expect("already valid");
    (norm(sender), norm(recipient), ip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use GreylistDecision::*;

    fn triplet() -> (EmailAddress, EmailAddress, Ipv4Addr) {
        (
            "a@x.com".parse().unwrap(),
            "b@y.com".parse().unwrap(),
            Ipv4Addr::new(192, 0, 2, 5),
        )
    }

    #[test]
    fn first_contact_then_retry_in_window() {
        let (s, r, ip) = triplet();
        let mut g = GreylistStore::new();
        let w = RetryWindow::default();
        assert_eq!(g.check(&s, &r, ip, 0, w), TempFail);
        assert_eq!(g.check(&s, &r, ip, 30 * 60, w), Accept);
        assert_eq!(g.get(&s, &r, ip).unwrap().state, GreylistState::Confirmed);
    }

    #[test]
    fn early_retry_keeps_first_seen() {
        let (s, r, ip) = triplet();
        let mut g = GreylistStore::new();
        let w = RetryWindow::default();
        assert_eq!(g.check(&s, &r, ip, 100, w), TempFail);
        assert_eq!(g.check(&s, &r, ip, 105, w), TempFail);
        assert_eq!(g.get(&s, &r, ip).unwrap().first_seen, 100);
        assert_eq!(g.check(&s, &r, ip, 120, w), Accept);
    }

    #[test]
    fn late_retry_resets_timer() {
        let (s, r, ip) = triplet();
        let mut g = GreylistStore::new();
        let w = RetryWindow::default();
        g.check(&s, &r, ip, 0, w);
        assert_eq!(g.check(&s, &r, ip, 43_201, w), TempFail);
        assert_eq!(g.get(&s, &r, ip).unwrap().first_seen, 43_201);
        assert_eq!(g.check(&s, &r, ip, 43_211, w), Accept);
    }

    #[test]
    fn address_case_does_not_split_triplets() {
        let (s, r, ip) = triplet();
        let mut g = GreylistStore::new();
        let w = RetryWindow::default();
        g.check(&s, &r, ip, 0, w);
        let upper: EmailAddress = "A@X.COM".parse().unwrap();
        assert_eq!(g.check(&upper, &r, ip, 20, w), Accept);
        assert_eq!(g.len(), 1);
    }

    #[test]
    fn snapshot_round_trip() {
        let (s, r, ip) = triplet();
        let mut g = GreylistStore::new();
        let w = RetryWindow::default();
        g.check(&s, &r, ip, 0, w);
        g.check(&s, &r, ip, 60, w);
        g.check(&r, &s, ip, 60, w);
        let snap = g.to_snapshot();
        assert_eq!(GreylistStore::from_snapshot(&snap).unwrap(), g);
        assert!(GreylistStore::from_snapshot("a@x.com b@y.com 1.2.3.4 0 maybe\n").is_err());
    }
}
