//! Layered defense: connection-time stages, then message-time stages, with
//! every stage outcome written to a [`DecisionLog`].

mod config;
mod trap;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

pub use config::{ConfigError, PipelineConfig, PIPELINE_SECTIONS};
pub use trap::{trap_stats, SpamTrap, TrapRecord, TrapStats, SESSION_SECS};

use crate::bayes::{classify, score_message, BayesError, Label, TokenTable};
use crate::content::{content_check, policy_check};
use crate::message::{ConnectionContext, EmailAddress, EmailMessage};
use crate::source::{
    dnsbl_check, rdns_check, spf_check, surbl_check, GreylistDecision, GreylistStore, LookupProvider, SpfResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Dnsbl,
    Rdns,
    Spf,
    Greylist,
    Content,
    Surbl,
    Bayes,
    Policy,
    Final,
}

impl Stage {
    pub const DEFAULT_ORDER: [Stage; 8] = [
        Stage::Dnsbl,
        Stage::Rdns,
        Stage::Spf,
        Stage::Greylist,
        Stage::Content,
        Stage::Surbl,
        Stage::Bayes,
        Stage::Policy,
    ];

    pub fn is_connection(self) -> bool {
        matches!(self, Stage::Dnsbl | Stage::Rdns | Stage::Spf | Stage::Greylist)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Dnsbl => "dnsbl",
            Stage::Rdns => "rdns",
            Stage::Spf => "spf",
            Stage::Greylist => "greylist",
            Stage::Content => "content",
            Stage::Surbl => "surbl",
            Stage::Bayes => "bayes",
            Stage::Policy => "policy",
            Stage::Final => "final",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::DEFAULT_ORDER
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| format!("unknown stage `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Disposition {
    Accept,
    RejectConnection,
    RejectMessage,
    TempFail,
    Quarantine,
}

impl Disposition {
    pub fn as_str(self) -> &'static str {
        match self {
            Disposition::Accept => "accept",
            Disposition::RejectConnection => "reject_connection",
            Disposition::RejectMessage => "reject_message",
            Disposition::TempFail => "temp_fail",
            Disposition::Quarantine => "quarantine",
        }
    }

    pub fn is_reject(self) -> bool {
        matches!(self, Disposition::RejectConnection | Disposition::RejectMessage)
    }
}

impl fmt::Display for Disposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub disposition: Disposition,
    pub stage: Stage,
    pub reason: String,
    pub decided_at: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Reject,
    TempFail,
    Quarantine,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Pass => "pass",
            Outcome::Reject => "reject",
            Outcome::TempFail => "tempfail",
            Outcome::Quarantine => "quarantine",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub stage: Stage,
    pub outcome: Outcome,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionLog {
    pub msg_id: String,
    pub entries: Vec<LogEntry>,
    pub verdict: Option<Verdict>,
}

impl DecisionLog {
    pub fn new(msg_id: &str) -> Self {
        Self {
            msg_id: msg_id.to_string(),
            entries: Vec::new(),
            verdict: None,
        }
    }

    fn push(&mut self, stage: Stage, outcome: Outcome, detail: impl Into<String>) {
        self.entries.push(LogEntry {
            stage,
            outcome,
            detail: detail.into(),
        });
    }

    pub fn stages(&self) -> impl Iterator<Item = Stage> + '_ {
        self.entries.iter().map(|e| e.stage)
    }

    /// `<msg-id> <stage> <pass|reject|tempfail|quarantine> <detail>` per entry.
    pub fn export(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&self.msg_id);
            out.push(' ');
            out.push_str(e.stage.as_str());
            out.push(' ');
            out.push_str(e.outcome.as_str());
            if !e.detail.is_empty() {
                out.push(' ');
                out.push_str(&e.detail);
            }
            out.push('\n');
        }
        out
    }
}

fn finish(log: &mut DecisionLog, stage: Stage, outcome: Outcome, disposition: Disposition, detail: String, at: u64) -> Verdict {
    log.push(stage, outcome, detail.clone());
    let verdict = Verdict {
        disposition,
        stage,
        reason: detail,
        decided_at: at,
    };
    log.verdict = Some(verdict.clone());
    verdict
}

fn with_warnings(mut detail: String, warnings: &[String]) -> String {
    for w in warnings {
        if !detail.is_empty() {
            detail.push_str("; ");
        }
        detail.push_str(w);
    }
    detail
}

/// Runs the enabled connection stages in configured order. `None` means the
/// connection may proceed to the message phase.
pub fn evaluate_connection(
    ctx: &ConnectionContext,
    sender: &EmailAddress,
    recipients: &[EmailAddress],
    config: &PipelineConfig,
    provider: &impl LookupProvider,
    greylist: &mut GreylistStore,
    log: &mut DecisionLog,
) -> Option<Verdict> {
    let at = ctx.timestamp;
    let src = &config.source;
    for stage in config.stage_order.iter().copied().filter(|s| s.is_connection()) {
        match stage {
            Stage::Dnsbl => {
                let s = dnsbl_check(ctx, src, provider);
                match s.rejection {
                    Some(hit) if src.reject_on_dnsbl_hit => {
                        let detail = with_warnings(format!("listed zone={}", hit.zone), &s.warnings);
                        return Some(finish(log, stage, Outcome::Reject, Disposition::RejectConnection, detail, at));
                    }
                    Some(hit) => {
                        let detail = with_warnings(format!("listed zone={} flagged", hit.zone), &s.warnings);
                        return Some(finish(log, stage, Outcome::Quarantine, Disposition::Quarantine, detail, at));
                    }
                    None => log.push(stage, Outcome::Pass, with_warnings(String::new(), &s.warnings)),
                }
            }
            Stage::Rdns => match rdns_check(ctx, src, provider) {
                Some(r) => {
                    return Some(finish(log, stage, Outcome::Reject, Disposition::RejectConnection, r.as_str().into(), at))
                }
                None => log.push(stage, Outcome::Pass, ""),
            },
            Stage::Spf => {
                let result = spf_check(ctx, provider);
                let detail = format!("spf={}", result.as_str());
                if result != SpfResult::Pass && src.spf_reject_on.contains(&result) {
                    return Some(finish(log, stage, Outcome::Reject, Disposition::RejectConnection, detail, at));
                }
                log.push(stage, Outcome::Pass, detail);
            }
            Stage::Greylist => {
                if !src.greylist_enabled {
                    log.push(stage, Outcome::Pass, "disabled");
                    continue;
                }
                // Every triplet is registered, so no short-circuit across recipients.
                let mut deferred = 0;
                for r in recipients {
                    if greylist.check(sender, r, ctx.client_ip, at, src.greylist_window) == GreylistDecision::TempFail {
                        deferred += 1;
                    }
                }
                if deferred > 0 {
                    let detail = format!("greylisted triplets={deferred}");
                    return Some(finish(log, stage, Outcome::TempFail, Disposition::TempFail, detail, at));
                }
                log.push(stage, Outcome::Pass, "");
            }
            _ => unreachable!("filtered to connection stages"),
        }
    }
    None
}

/// Runs the enabled message stages in configured order and always returns a
/// verdict; an accept is logged as a trailing `final` entry.
pub fn evaluate_message(
    message: &EmailMessage,
    at: u64,
    config: &PipelineConfig,
    provider: &impl LookupProvider,
    tokens: &TokenTable,
    log: &mut DecisionLog,
) -> Verdict {
    for stage in config.stage_order.iter().copied().filter(|s| !s.is_connection()) {
        match stage {
            Stage::Content => match content_check(message, &config.content) {
                Some(r) => return finish(log, stage, Outcome::Reject, Disposition::RejectMessage, r.to_string(), at),
                None => log.push(stage, Outcome::Pass, ""),
            },
            Stage::Surbl => {
                let s = surbl_check(message, &config.source, provider);
                match s.rejection {
                    Some(hit) => {
                        let detail = with_warnings(format!("listed domain={} list={}", hit.domain, hit.list), &s.warnings);
                        return finish(log, stage, Outcome::Reject, Disposition::RejectMessage, detail, at);
                    }
                    None => log.push(stage, Outcome::Pass, with_warnings(String::new(), &s.warnings)),
                }
            }
            Stage::Bayes => {
                if !tokens.is_trained() {
                    log.push(stage, Outcome::Pass, "untrained");
                    continue;
                }
                let score = score_message(message, tokens, &config.bayes);
                let detail = format!("score={score:.4}");
                if classify(score, &config.bayes) == Label::Spam {
                    return finish(log, stage, Outcome::Quarantine, Disposition::Quarantine, detail, at);
                }
                log.push(stage, Outcome::Pass, detail);
            }
            Stage::Policy => {
                let report = policy_check(message, &config.policy);
                if report.is_suspicious() {
                    let names: Vec<&str> = report.violations.iter().map(|v| v.as_str()).collect();
                    let detail = format!("violations={}", names.join(","));
                    return finish(log, stage, Outcome::Quarantine, Disposition::Quarantine, detail, at);
                }
                log.push(stage, Outcome::Pass, "");
            }
            _ => unreachable!("filtered to message stages"),
        }
    }
    finish(log, Stage::Final, Outcome::Pass, Disposition::Accept, "accepted".into(), at)
}

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read token table {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("token table: {0}")]
    Table(#[from] BayesError),
}

/// A configured pipeline together with the state it mutates.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub config: PipelineConfig,
    pub greylist: GreylistStore,
    pub tokens: TokenTable,
    pub trap: SpamTrap,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        let mut tokens = TokenTable::new();
        tokens.spam_learning_enabled = config.spam_learning_enabled;
        tokens.ham_learning_enabled = config.ham_learning_enabled;
        Self {
            config,
            greylist: GreylistStore::new(),
            tokens,
            trap: SpamTrap::default(),
        }
    }

    /// Builds the pipeline and loads the configured token table, if any.
    pub fn load(config: PipelineConfig) -> Result<Self, LoadError> {
        let table = match &config.token_table {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| LoadError::Io {
                    path: path.clone(),
                    source,
                })?;
                Some(TokenTable::from_text(&text)?)
            }
            None => None,
        };
        let mut p = Self::new(config);
        if let Some(t) = table {
            p.set_tokens(t);
        }
        Ok(p)
    }

    /// Replaces the token table, keeping the configured learning toggles.
    pub fn set_tokens(&mut self, mut table: TokenTable) {
        table.spam_learning_enabled = self.config.spam_learning_enabled;
        table.ham_learning_enabled = self.config.ham_learning_enabled;
        self.tokens = table;
    }

    /// Learns the message under `label` and prunes to the dictionary cap.
    pub fn learn(&mut self, message: &EmailMessage, label: Label) -> bool {
        let learned = self.tokens.learn(message, label);
        if learned {
            self.tokens.prune(self.config.bayes.dictionary_cap);
        }
        learned
    }

    pub fn process(
        &mut self,
        msg_id: &str,
        ctx: &ConnectionContext,
        message: &EmailMessage,
        provider: &impl LookupProvider,
    ) -> (Verdict, DecisionLog) {
        let mut log = DecisionLog::new(msg_id);
        let verdict = match evaluate_connection(
            ctx,
            &message.envelope_sender,
            &message.envelope_recipients,
            &self.config,
            provider,
            &mut self.greylist,
            &mut log,
        ) {
            Some(v) => v,
            None => evaluate_message(message, ctx.timestamp, &self.config, provider, &self.tokens, &mut log),
        };
        match verdict.disposition {
            Disposition::Quarantine => {
                self.trap.push(TrapRecord {
                    msg_id: msg_id.to_string(),
                    stage: verdict.stage,
                    disposition: verdict.disposition,
                    at: verdict.decided_at,
                    message: Some(message.clone()),
                });
                if self.config.learn_from_trap {
                    self.learn(message, Label::Spam);
                }
            }
            Disposition::RejectConnection | Disposition::RejectMessage => self.trap.push(TrapRecord {
                msg_id: msg_id.to_string(),
                stage: verdict.stage,
                disposition: verdict.disposition,
                at: verdict.decided_at,
                message: None,
            }),
            Disposition::Accept | Disposition::TempFail => {}
        }
        (verdict, log)
    }
}
