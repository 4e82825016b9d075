use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::bayes::Label;
use crate::message::{EmailAddress, EmailMessage};
use crate::pipeline::{DecisionLog, Disposition, Pipeline, Stage, SESSION_SECS};
use crate::source::LookupProvider;

const DAY_SECS: u64 = 24 * 3600;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DispositionCounts {
    pub accepted: usize,
    pub rejected_connection: usize,
    pub rejected_message: usize,
    pub tempfailed: usize,
    pub quarantined: usize,
}

impl DispositionCounts {
    pub fn add(&mut self, d: Disposition) {
        match d {
            Disposition::Accept => self.accepted += 1,
            Disposition::RejectConnection => self.rejected_connection += 1,
            Disposition::RejectMessage => self.rejected_message += 1,
            Disposition::TempFail => self.tempfailed += 1,
            Disposition::Quarantine => self.quarantined += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.accepted + self.rejected_connection + self.rejected_message + self.tempfailed + self.quarantined
    }

    /// Rejected or quarantined.
    pub fn trapped(&self) -> usize {
        self.rejected_connection + self.rejected_message + self.quarantined
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SessionCounts {
    pub dispositions: DispositionCounts,
    pub false_negatives: usize,
    pub false_positives: usize,
}

/// One message's outcome, in corpus order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessageOutcome {
    pub file: String,
    pub label: Option<Label>,
    pub disposition: Disposition,
    pub stage: Stage,
    pub session: u64,
}

/// Totals from filtering a corpus.
///
/// False negatives are labeled-spam messages accepted; false positives are
/// labeled-ham messages rejected or quarantined. Temp-failed messages are
/// neither. Sessions are three-hour bins counted from the earliest `Date`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunReport {
    pub dispositions: DispositionCounts,
    /// Non-accepting verdicts by deciding stage.
    pub by_stage: BTreeMap<Stage, usize>,
    pub sessions: BTreeMap<u64, SessionCounts>,
    pub false_negatives: usize,
    pub false_positives: usize,
    pub unlabeled: usize,
    /// Spam inbox deliveries per recipient and day.
    pub fn_by_recipient: BTreeMap<EmailAddress, BTreeMap<u64, u64>>,
    pub origin: u64,
    pub outcomes: Vec<MessageOutcome>,
}

impl RunReport {
    pub fn total(&self) -> usize {
        self.dispositions.total()
    }

    pub fn session_count(&self) -> u64 {
        self.sessions.keys().next_back().map_or(0, |s| s + 1)
    }

    /// Mean spam inbox deliveries per user per day over `users`, counting
    /// users who received none.
    pub fn fn_per_user_per_day<'a>(&self, users: impl IntoIterator<Item = &'a EmailAddress>, days: f64) -> FnStats {
        let per_user: Vec<f64> = users
            .into_iter()
            .map(|u| self.fn_by_recipient.get(u).map_or(0, |d| d.values().sum::<u64>()) as f64 / days)
            .collect();
        FnStats::of(&per_user)
    }

    pub fn messages_csv(&self) -> String {
        let mut out = String::from("file,label,disposition,stage,session\n");
        for o in &self.outcomes {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                o.file,
                o.label.map_or("none", Label::as_str),
                o.disposition.as_str(),
                o.stage.as_str(),
                o.session
            );
        }
        out
    }

    pub fn sessions_csv(&self) -> String {
        let mut out = String::from(
            "session,start,accepted,rejected_connection,rejected_message,tempfailed,quarantined,false_negatives,false_positives\n",
        );
        for (s, c) in &self.sessions {
            let d = &c.dispositions;
            let _ = writeln!(
                out,
                "{s},{},{},{},{},{},{},{},{}",
                self.origin + s * SESSION_SECS,
                d.accepted,
                d.rejected_connection,
                d.rejected_message,
                d.tempfailed,
                d.quarantined,
                c.false_negatives,
                c.false_positives
            );
        }
        out
    }

    pub fn fn_by_user_csv(&self) -> String {
        let mut out = String::from("recipient,day,false_negatives\n");
        for (r, days) in &self.fn_by_recipient {
            for (d, n) in days {
                let _ = writeln!(out, "{r},{d},{n}");
            }
        }
        out
    }

    pub fn summary_text(&self) -> String {
        let d = &self.dispositions;
        let mut s = String::new();
        let _ = writeln!(s, "messages: {}", self.total());
        let _ = writeln!(s, "accepted: {}", d.accepted);
        let _ = writeln!(s, "rejected at connection: {}", d.rejected_connection);
        let _ = writeln!(s, "rejected after data: {}", d.rejected_message);
        let _ = writeln!(s, "temporarily failed: {}", d.tempfailed);
        let _ = writeln!(s, "quarantined: {}", d.quarantined);
        let _ = writeln!(s, "false negatives: {}", self.false_negatives);
        let _ = writeln!(s, "false positives: {}", self.false_positives);
        if self.unlabeled > 0 {
            let _ = writeln!(s, "unlabeled: {}", self.unlabeled);
        }
        for (stage, n) in &self.by_stage {
            let _ = writeln!(s, "stopped at {stage}: {n}");
        }
        let _ = writeln!(s, "sessions: {}", self.session_count());
        s
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FnStats {
    pub mean: f64,
    /// Population standard deviation across users.
    pub std_dev: f64,
}

impl FnStats {
    fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std_dev: var.sqrt(),
        }
    }
}

/// Runs every message through `pipeline` in the given order.
pub fn filter_corpus(
    messages: &[(String, EmailMessage)],
    labels: &BTreeMap<String, Label>,
    pipeline: &mut Pipeline,
    provider: &impl LookupProvider,
) -> (RunReport, Vec<DecisionLog>) {
    let origin = messages.iter().map(|(_, m)| m.date().unwrap_or(0)).min().unwrap_or(0);
    let mut report = RunReport {
        origin,
        ..RunReport::default()
    };
    let mut logs = Vec::with_capacity(messages.len());
    for (file, message) in messages {
        let ctx = message.connection_context();
        let (verdict, log) = pipeline.process(file, &ctx, message, provider);
        let label = labels.get(file).copied();
        let session = ctx.timestamp.saturating_sub(origin) / SESSION_SECS;
        let slot = report.sessions.entry(session).or_default();
        report.dispositions.add(verdict.disposition);
        slot.dispositions.add(verdict.disposition);
        if verdict.disposition != Disposition::Accept {
            *report.by_stage.entry(verdict.stage).or_default() += 1;
        }
        let stopped = matches!(
            verdict.disposition,
            Disposition::RejectConnection | Disposition::RejectMessage | Disposition::Quarantine
        );
        match label {
            Some(Label::Spam) if verdict.disposition == Disposition::Accept => {
                report.false_negatives += 1;
                slot.false_negatives += 1;
                let day = ctx.timestamp.saturating_sub(origin) / DAY_SECS;
                for r in &message.envelope_recipients {
                    *report.fn_by_recipient.entry(r.clone()).or_default().entry(day).or_default() += 1;
                }
            }
            Some(Label::Ham) if stopped => {
                report.false_positives += 1;
                slot.false_positives += 1;
            }
            Some(_) => {}
            None => report.unlabeled += 1,
        }
        report.outcomes.push(MessageOutcome {
            file: file.clone(),
            label,
            disposition: verdict.disposition,
            stage: verdict.stage,
            session,
        });
        logs.push(log);
    }
    (report, logs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::PipelineConfig;
    use crate::source::FixtureProvider;
    use std::net::Ipv4Addr;

    fn msg(from: &str, ip: Ipv4Addr, date: u64) -> EmailMessage {
        EmailMessage::builder(&from.parse().unwrap())
            .to(&"u@abc.com".parse().unwrap())
            .subject("hello")
            .date(date)
            .received("mx.example", ip)
            .body("hi\n")
            .build()
            .unwrap()
    }

    #[test]
    fn open_pipeline_accepts_everything() {
        let spam_ip = Ipv4Addr::new(192, 0, 2, 1);
        let messages = vec![
            ("a.msg".to_string(), msg("x@spam.example", spam_ip, 0)),
            ("b.msg".to_string(), msg("y@ham.example", spam_ip, 4 * 3600)),
            ("c.msg".to_string(), msg("z@spam.example", spam_ip, 4 * 3600)),
        ];
        let labels: BTreeMap<String, Label> =
            [("a.msg", Label::Spam), ("b.msg", Label::Ham)].into_iter().map(|(f, l)| (f.to_string(), l)).collect();
        let mut p = Pipeline::new(PipelineConfig::open());
        let (r, logs) = filter_corpus(&messages, &labels, &mut p, &FixtureProvider::new());
        assert_eq!(r.dispositions.accepted, 3);
        assert_eq!(r.total(), 3);
        assert_eq!((r.false_negatives, r.false_positives, r.unlabeled), (1, 0, 1));
        assert_eq!(r.session_count(), 2);
        assert_eq!(logs.len(), 3);
        let u: EmailAddress = "u@abc.com".parse().unwrap();
        assert_eq!(r.fn_by_recipient[&u][&0], 1);
        let stats = r.fn_per_user_per_day([&u], 1.0);
        assert_eq!(stats.mean, 1.0);
    }

    #[test]
    fn blocked_ham_is_a_false_positive() {
        let ip = Ipv4Addr::new(192, 0, 2, 9);
        let messages = vec![("h.msg".to_string(), msg("y@ham.example", ip, 0))];
        let labels = [("h.msg".to_string(), Label::Ham)].into_iter().collect();
        let mut fx = FixtureProvider::new();
        fx.list_ip("bl.spamcop.net", ip);
        let mut cfg = PipelineConfig::open();
        cfg.stage_order = vec![Stage::Dnsbl];
        let mut p = Pipeline::new(cfg);
        let (r, _) = filter_corpus(&messages, &labels, &mut p, &fx);
        assert_eq!(r.false_positives, 1);
        assert_eq!(r.by_stage[&Stage::Dnsbl], 1);
        assert!(r.sessions_csv().lines().nth(1).unwrap().starts_with("0,0,0,1,"));
    }

    #[test]
    fn fn_stats_are_population_moments() {
        let s = FnStats::of(&[1.0, 3.0]);
        assert_eq!((s.mean, s.std_dev), (2.0, 1.0));
    }
}
