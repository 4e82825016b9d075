use std::collections::BTreeMap;

use super::{Disposition, Stage};
use crate::message::EmailMessage;

/// Length of one measurement session in seconds.
pub const SESSION_SECS: u64 = 3 * 3600;

/// A filtered message. Only quarantined messages keep their content.
#[derive(Debug, Clone, PartialEq)]
pub struct TrapRecord {
    pub msg_id: String,
    pub stage: Stage,
    pub disposition: Disposition,
    pub at: u64,
    pub message: Option<EmailMessage>,
}

/// Append-only record of rejected and quarantined messages.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpamTrap {
    records: Vec<TrapRecord>,
}

impl SpamTrap {
    pub fn push(&mut self, record: TrapRecord) {
        self.records.push(record);
    }

    pub fn records(&self) -> &[TrapRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn quarantined(&self) -> impl Iterator<Item = &EmailMessage> {
        self.records.iter().filter_map(|r| r.message.as_ref())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TrapStats {
    pub by_stage: BTreeMap<Stage, usize>,
    pub by_session: BTreeMap<u64, BTreeMap<Stage, usize>>,
}

impl TrapStats {
    pub fn stage(&self, stage: Stage) -> usize {
        self.by_stage.get(&stage).copied().unwrap_or(0)
    }

    pub fn session(&self, session: u64, stage: Stage) -> usize {
        self.by_session
            .get(&session)
            .and_then(|m| m.get(&stage))
            .copied()
            .unwrap_or(0)
    }

    pub fn session_total(&self, session: u64) -> usize {
        self.by_session.get(&session).map_or(0, |m| m.values().sum())
    }

    pub fn total(&self) -> usize {
        self.by_stage.values().sum()
    }
}

/// Groups records by stage and by `window`-second sessions counted from
/// `origin`. Records before `origin` fall into session 0.
pub fn trap_stats(records: &[TrapRecord], origin: u64, window: u64) -> TrapStats {
    let window = window.max(1);
    let mut stats = TrapStats::default();
    for r in records {
        *stats.by_stage.entry(r.stage).or_default() += 1;
        let session = r.at.saturating_sub(origin) / window;
        *stats.by_session.entry(session).or_default().entry(r.stage).or_default() += 1;
    }
    stats
}
