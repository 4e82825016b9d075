use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::Stage;
use crate::bayes::{BayesConfig, BayesError};
use crate::conf::{format_duration, on_off, Conf, ConfError, ConfWriter};
use crate::content::{ContentRules, ExtensionPattern, PolicyRules, RuleError};
use crate::message::EmailAddress;
use crate::source::{SourceFilterConfig, SpfResult};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Conf(#[from] ConfError),
    #[error("stage `{0}` appears more than once in the stage order")]
    DuplicateStage(Stage),
    #[error("connection stage `{connection}` is ordered after message stage `{message}`")]
    StageOrder { connection: Stage, message: Stage },
    #[error("greylist_min_retry ({min}s) must be below greylist_max_retry ({max}s)")]
    RetryWindow { min: u64, max: u64 },
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error(transparent)]
    Bayes(#[from] BayesError),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub const PIPELINE_SECTIONS: [&str; 9] = [
    "stages", "dnsbl", "surbl", "spf", "greylist", "rdns", "content", "policy", "bayes",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub stage_order: Vec<Stage>,
    pub source: SourceFilterConfig,
    pub content: ContentRules,
    pub policy: PolicyRules,
    pub bayes: BayesConfig,
    pub learn_from_trap: bool,
    /// Token table to load at start-up, if any.
    pub token_table: Option<PathBuf>,
    pub spam_learning_enabled: bool,
    pub ham_learning_enabled: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            stage_order: Stage::DEFAULT_ORDER.to_vec(),
            source: SourceFilterConfig::default(),
            content: ContentRules::default(),
            policy: PolicyRules::default(),
            bayes: BayesConfig::default(),
            learn_from_trap: false,
            token_table: None,
            spam_learning_enabled: true,
            ham_learning_enabled: true,
        }
    }
}

impl PipelineConfig {
    /// Every stage disabled.
    pub fn open() -> Self {
        Self {
            stage_order: Vec::new(),
            ..Self::default()
        }
    }

    pub fn enabled(&self, stage: Stage) -> bool {
        self.stage_order.contains(&stage)
    }

    pub fn without(mut self, stage: Stage) -> Self {
        self.stage_order.retain(|s| *s != stage);
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut seen = BTreeSet::new();
        for s in &self.stage_order {
            if !seen.insert(*s) {
                return Err(ConfigError::DuplicateStage(*s));
            }
        }
        if let Some(pos) = self.stage_order.iter().position(|s| !s.is_connection()) {
            if let Some(late) = self.stage_order[pos..].iter().find(|s| s.is_connection()) {
                return Err(ConfigError::StageOrder {
                    connection: *late,
                    message: self.stage_order[pos],
                });
            }
        }
        let w = self.source.greylist_window;
        if w.min_retry >= w.max_retry {
            return Err(ConfigError::RetryWindow {
                min: w.min_retry,
                max: w.max_retry,
            });
        }
        self.content.validate()?;
        self.policy.validate()?;
        self.bayes.validate()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let conf = Conf::parse(&text)?;
        conf.expect_sections(&PIPELINE_SECTIONS)?;
        Self::from_conf(&conf, path.parent().unwrap_or(Path::new(".")))
    }

    /// Reads the pipeline sections of `conf`; other sections are ignored.
    /// Relative paths are resolved against `base_dir`.
    pub fn from_conf(conf: &Conf, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();

        if let Some(s) = conf.section("stages") {
            s.expect_keys(&["order"])?;
            if let Some(order) = s.parsed_list::<Stage>("order")? {
                cfg.stage_order = order;
            }
        }
        if let Some(s) = conf.section("dnsbl") {
            s.expect_keys(&["dnsbl_zones", "reject_on_dnsbl_hit"])?;
            if let Some(z) = s.list("dnsbl_zones") {
                cfg.source.dnsbl_zones = z;
            }
            if let Some(b) = s.bool("reject_on_dnsbl_hit")? {
                cfg.source.reject_on_dnsbl_hit = b;
            }
        }
        if let Some(s) = conf.section("surbl") {
            s.expect_keys(&["surbl_lists", "surbl_whitelist"])?;
            if let Some(l) = s.list("surbl_lists") {
                cfg.source.surbl_lists = l;
            }
            if let Some(w) = s.list("surbl_whitelist") {
                cfg.source.surbl_whitelist = w.into_iter().map(|d| d.to_ascii_lowercase()).collect();
            }
        }
        if let Some(s) = conf.section("spf") {
            s.expect_keys(&["spf_reject_on"])?;
            if let Some(list) = s.list("spf_reject_on") {
                let mut set = BTreeSet::new();
                for item in list {
                    set.insert(match item.as_str() {
                        "fail" => SpfResult::Fail,
                        "softfail" => SpfResult::SoftFail,
                        "none" => SpfResult::None,
                        other => {
                            return Err(ConfError::Value {
                                section: "spf".into(),
                                key: "spf_reject_on".into(),
                                reason: format!("unknown SPF result `{other}`"),
                            }
                            .into())
                        }
                    });
                }
                cfg.source.spf_reject_on = set;
            }
        }
        if let Some(s) = conf.section("greylist") {
            s.expect_keys(&["greylist_enabled", "greylist_min_retry", "greylist_max_retry"])?;
            if let Some(b) = s.bool("greylist_enabled")? {
                cfg.source.greylist_enabled = b;
            }
            if let Some(d) = s.duration("greylist_min_retry")? {
                cfg.source.greylist_window.min_retry = d;
            }
            if let Some(d) = s.duration("greylist_max_retry")? {
                cfg.source.greylist_window.max_retry = d;
            }
        }
        if let Some(s) = conf.section("rdns") {
            s.expect_keys(&["rdns_require_ptr", "rdns_require_helo_match"])?;
            if let Some(b) = s.bool("rdns_require_ptr")? {
                cfg.source.rdns_require_ptr = b;
            }
            if let Some(b) = s.bool("rdns_require_helo_match")? {
                cfg.source.rdns_require_helo_match = b;
            }
        }
        if let Some(s) = conf.section("content") {
            s.expect_keys(&[
                "blocked_subject_terms",
                "blocked_body_terms",
                "blocked_senders",
                "blocked_domains",
                "allowlist_mode",
                "allowed_senders",
                "max_attachment_bytes",
                "blocked_extension_patterns",
            ])?;
            let c = &mut cfg.content;
            c.blocked_subject_terms = s.list("blocked_subject_terms").unwrap_or_default();
            c.blocked_body_terms = s.list("blocked_body_terms").unwrap_or_default();
            c.blocked_senders = s.parsed_list::<EmailAddress>("blocked_senders")?.unwrap_or_default();
            c.blocked_domains = s
                .list("blocked_domains")
                .unwrap_or_default()
                .into_iter()
                .map(|d| d.to_ascii_lowercase())
                .collect();
            c.allowlist_mode = s.bool("allowlist_mode")?.unwrap_or(false);
            c.allowed_senders = s.parsed_list::<EmailAddress>("allowed_senders")?.unwrap_or_default();
            c.max_attachment_bytes = s.size("max_attachment_bytes")?;
            c.blocked_extension_patterns = s
                .parsed_list::<ExtensionPattern>("blocked_extension_patterns")?
                .unwrap_or_default();
        }
        if let Some(s) = conf.section("policy") {
            s.expect_keys(&["require_signature", "code_word", "flagged_display_names", "local_domain"])?;
            let p = &mut cfg.policy;
            p.require_signature = s.bool("require_signature")?.unwrap_or(false);
            p.code_word = s.string("code_word").filter(|w| !w.is_empty());
            p.flagged_display_names = s.list("flagged_display_names").unwrap_or_default();
            p.local_domain = s.string("local_domain").map(|d| d.to_ascii_lowercase());
        }
        if let Some(s) = conf.section("bayes") {
            s.expect_keys(&[
                "threshold",
                "dictionary_cap",
                "probability_floor",
                "probability_ceiling",
                "max_tokens_scored",
                "learn_from_trap",
                "spam_learning_enabled",
                "ham_learning_enabled",
                "token_table",
            ])?;
            let b = &mut cfg.bayes;
            if let Some(v) = s.parse("threshold")? {
                b.threshold = v;
            }
            if let Some(v) = s.parse("dictionary_cap")? {
                b.dictionary_cap = v;
            }
            if let Some(v) = s.parse("probability_floor")? {
                b.probability_floor = v;
            }
            if let Some(v) = s.parse("probability_ceiling")? {
                b.probability_ceiling = v;
            }
            if let Some(v) = s.parse("max_tokens_scored")? {
                b.max_tokens_scored = v;
            }
            if let Some(v) = s.bool("learn_from_trap")? {
                cfg.learn_from_trap = v;
            }
            if let Some(v) = s.bool("spam_learning_enabled")? {
                cfg.spam_learning_enabled = v;
            }
            if let Some(v) = s.bool("ham_learning_enabled")? {
                cfg.ham_learning_enabled = v;
            }
            cfg.token_table = s.string("token_table").map(|p| base_dir.join(p));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders the config file. `token_table` is written as given.
    pub fn to_conf_string(&self) -> String {
        let mut w = ConfWriter::default();
        let join = |items: Vec<String>| items.join(", ");
        w.section("stages")
            .kv("order", join(self.stage_order.iter().map(|s| s.to_string()).collect()));
        let src = &self.source;
        w.section("dnsbl")
            .kv("dnsbl_zones", join(src.dnsbl_zones.clone()))
            .kv("reject_on_dnsbl_hit", on_off(src.reject_on_dnsbl_hit));
        w.section("surbl")
            .kv("surbl_lists", join(src.surbl_lists.clone()))
            .kv("surbl_whitelist", join(src.surbl_whitelist.iter().cloned().collect()));
        w.section("spf").kv(
            "spf_reject_on",
            join(src.spf_reject_on.iter().map(|r| r.as_str().to_string()).collect()),
        );
        w.section("greylist")
            .kv("greylist_enabled", on_off(src.greylist_enabled))
            .kv("greylist_min_retry", format_duration(src.greylist_window.min_retry))
            .kv("greylist_max_retry", format_duration(src.greylist_window.max_retry));
        w.section("rdns")
            .kv("rdns_require_ptr", on_off(src.rdns_require_ptr))
            .kv("rdns_require_helo_match", on_off(src.rdns_require_helo_match));
        let c = &self.content;
        w.section("content")
            .kv("blocked_subject_terms", join(c.blocked_subject_terms.clone()))
            .kv("blocked_body_terms", join(c.blocked_body_terms.clone()))
            .kv("blocked_senders", join(c.blocked_senders.iter().map(|a| a.to_string()).collect()))
            .kv("blocked_domains", join(c.blocked_domains.iter().cloned().collect()))
            .kv("allowlist_mode", on_off(c.allowlist_mode))
            .kv("allowed_senders", join(c.allowed_senders.iter().map(|a| a.to_string()).collect()))
            .kv(
                "blocked_extension_patterns",
                join(c.blocked_extension_patterns.iter().map(|p| p.to_string()).collect()),
            );
        if let Some(max) = c.max_attachment_bytes {
            w.kv("max_attachment_bytes", max);
        }
        let p = &self.policy;
        w.section("policy")
            .kv("require_signature", on_off(p.require_signature))
            .kv("code_word", p.code_word.clone().unwrap_or_default())
            .kv("flagged_display_names", join(p.flagged_display_names.clone()));
        if let Some(d) = &p.local_domain {
            w.kv("local_domain", d);
        }
        let b = &self.bayes;
        w.section("bayes")
            .kv("threshold", b.threshold)
            .kv("dictionary_cap", b.dictionary_cap)
            .kv("probability_floor", b.probability_floor)
            .kv("probability_ceiling", b.probability_ceiling)
            .kv("max_tokens_scored", b.max_tokens_scored)
            .kv("learn_from_trap", on_off(self.learn_from_trap))
            .kv("spam_learning_enabled", on_off(self.spam_learning_enabled))
            .kv("ham_learning_enabled", on_off(self.ham_learning_enabled));
        if let Some(t) = &self.token_table {
            w.kv("token_table", t.display());
        }
        w.finish()
    }
}
