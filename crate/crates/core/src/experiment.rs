//! Paired filter runs over a generated corpus workspace.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::bayes::Label;
use crate::corpus::Workspace;
use crate::pipeline::{Disposition, Pipeline, PipelineConfig, Stage};
use crate::report::{filter_corpus, FnStats, RunReport};
use crate::sim::full_defense;
use crate::source::DEFAULT_DNSBL_ZONES;

/// The zone dropped by the DNSBL ablation.
pub const ABLATED_ZONE: &str = DEFAULT_DNSBL_ZONES[0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    DnsblAblation,
    SurblSessions,
    DefenseOnOff,
}

impl Experiment {
    pub const ALL: [Experiment; 3] = [Experiment::DnsblAblation, Experiment::SurblSessions, Experiment::DefenseOnOff];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::DnsblAblation => "dnsbl-ablation",
            Experiment::SurblSessions => "surbl-sessions",
            Experiment::DefenseOnOff => "defense-on-off",
        }
    }

    /// Names of the baseline and variant runs.
    pub fn run_names(self) -> (&'static str, &'static str) {
        match self {
            Experiment::DnsblAblation => ("all-zones", "ablated"),
            Experiment::SurblSessions => ("surbl-on", "surbl-off"),
            Experiment::DefenseOnOff => ("defense-off", "defense-on"),
        }
    }

    pub fn configs(self, local_domain: &str) -> (PipelineConfig, PipelineConfig) {
        let full = corpus_defense(local_domain);
        match self {
            Experiment::DnsblAblation => {
                let mut ablated = full.clone();
                ablated.source.dnsbl_zones.retain(|z| z != ABLATED_ZONE);
                (full, ablated)
            }
            Experiment::SurblSessions => (full.clone(), full.without(Stage::Surbl)),
            Experiment::DefenseOnOff => (PipelineConfig::open(), full),
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| format!("unknown experiment `{s}` (expected dnsbl-ablation, surbl-sessions or defense-on-off)"))
    }
}

/// Every layer a replayed corpus can exercise. Greylisting is left out
/// because recorded messages are never retried.
pub fn corpus_defense(local_domain: &str) -> PipelineConfig {
    full_defense(local_domain).without(Stage::Greylist)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SessionDelta {
    pub session: u64,
    pub baseline_inbox: usize,
    pub variant_inbox: usize,
    pub baseline_trapped: usize,
    pub variant_trapped: usize,
}

impl SessionDelta {
    pub fn inbox_delta(&self) -> i64 {
        self.variant_inbox as i64 - self.baseline_inbox as i64
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub experiment: Experiment,
    pub baseline: RunReport,
    pub variant: RunReport,
    /// Spam counts per session.
    pub sessions: Vec<SessionDelta>,
    /// Variant-run spam inbox deliveries per user per day.
    pub variant_fn: FnStats,
    pub days: f64,
}

impl Comparison {
    pub fn baseline_spam_delivered(&self) -> usize {
        self.baseline.false_negatives
    }

    pub fn variant_spam_delivered(&self) -> usize {
        self.variant.false_negatives
    }

    /// `(variant - baseline) / baseline` for delivered spam.
    pub fn relative_change(&self) -> Option<f64> {
        let b = self.baseline_spam_delivered() as f64;
        (b > 0.0).then(|| (self.variant_spam_delivered() as f64 - b) / b)
    }

    pub fn to_csv(&self) -> String {
        let (b, v) = self.experiment.run_names();
        let mut out = format!("session,{b}_spam_inbox,{v}_spam_inbox,delta_spam_inbox,{b}_spam_trapped,{v}_spam_trapped\n");
        let mut total = SessionDelta::default();
        for s in &self.sessions {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.session,
                s.baseline_inbox,
                s.variant_inbox,
                s.inbox_delta(),
                s.baseline_trapped,
                s.variant_trapped
            );
            total.baseline_inbox += s.baseline_inbox;
            total.variant_inbox += s.variant_inbox;
            total.baseline_trapped += s.baseline_trapped;
            total.variant_trapped += s.variant_trapped;
        }
        let _ = writeln!(
            out,
            "total,{},{},{},{},{}",
            total.baseline_inbox,
            total.variant_inbox,
            total.inbox_delta(),
            total.baseline_trapped,
            total.variant_trapped
        );
        out
    }

    pub fn summary_text(&self) -> String {
        let (bn, vn) = self.experiment.run_names();
        let (b, v) = (self.baseline_spam_delivered(), self.variant_spam_delivered());
        let pct = |x: Option<f64>| x.map_or("n/a".to_string(), |x| format!("{:.1}%", x * 100.0));
        let mut s = format!("experiment: {}\n", self.experiment);
        let _ = writeln!(s, "sessions: {}", self.sessions.len());
        let _ = writeln!(s, "spam delivered ({bn}): {b}");
        let _ = writeln!(s, "spam delivered ({vn}): {v}");
        match self.experiment {
            Experiment::DnsblAblation => {
                let _ = writeln!(s, "removed zone: {ABLATED_ZONE}");
                let _ = writeln!(s, "delivered spam increase: {}", pct(self.relative_change()));
                let _ = writeln!(
                    s,
                    "false negatives per user per day ({vn}): mean {:.2}, std dev {:.2} over {:.1} days",
                    self.variant_fn.mean, self.variant_fn.std_dev, self.days
                );
            }
            Experiment::SurblSessions => {
                let _ = writeln!(s, "additional spam delivered with SURBL off: {}", v as i64 - b as i64);
            }
            Experiment::DefenseOnOff => {
                let _ = writeln!(s, "spam reduction: {}", pct(self.relative_change().map(|x| -x)));
            }
        }
        let _ = writeln!(s, "false positives ({bn}/{vn}): {}/{}", self.baseline.false_positives, self.variant.false_positives);
        s
    }
}

fn run_config(ws: &Workspace, config: PipelineConfig) -> RunReport {
    let mut p = Pipeline::new(config);
    filter_corpus(&ws.messages, &ws.labels, &mut p, &ws.fixture).0
}

fn spam_by_session(r: &RunReport, session: u64) -> (usize, usize) {
    let spam = r.outcomes.iter().filter(|o| o.session == session && o.label == Some(Label::Spam));
    spam.fold((0, 0), |(inbox, trapped), o| match o.disposition {
        Disposition::Accept => (inbox + 1, trapped),
        Disposition::TempFail => (inbox, trapped),
        _ => (inbox, trapped + 1),
    })
}

pub fn run_experiment(experiment: Experiment, ws: &Workspace) -> Comparison {
    let (bc, vc) = experiment.configs(&ws.spec.local_domain);
    let baseline = run_config(ws, bc);
    let variant = run_config(ws, vc);
    let sessions = (0..baseline.session_count().max(variant.session_count()))
        .map(|s| {
            let (baseline_inbox, baseline_trapped) = spam_by_session(&baseline, s);
            let (variant_inbox, variant_trapped) = spam_by_session(&variant, s);
            SessionDelta {
                session: s,
                baseline_inbox,
                variant_inbox,
                baseline_trapped,
                variant_trapped,
            }
        })
        .collect();
    let days = ws.spec.span as f64 / 86_400.0;
    let users: Vec<_> = (0..ws.spec.users).map(|i| ws.spec.user_address(i)).collect();
    let variant_fn = variant.fn_per_user_per_day(&users, days);
    Comparison {
        experiment,
        baseline,
        variant,
        sessions,
        variant_fn,
        days,
    }
}
