use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::conf::{format_duration, on_off, Conf, ConfError, ConfWriter, Section};
use crate::pipeline::{ConfigError, LoadError, PipelineConfig, Stage, PIPELINE_SECTIONS};
use crate::source::{FixtureError, FixtureProvider, SpfFailureMode};

pub const ATTACKER_IP: Ipv4Addr = Ipv4Addr::new(203, 0, 113, 66);
pub const LOCAL_MTA_IP: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 1);
pub const PARTNER_COUNT: usize = 10;
pub const CODE_WORD: &str = "In His Service";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Conf(#[from] ConfError),
    #[error(transparent)]
    Pipeline(#[from] ConfigError),
    #[error(transparent)]
    Fixture(#[from] FixtureError),
    #[error(transparent)]
    Tokens(#[from] LoadError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WormTargets {
    GroupsOnly,
    AllKnown,
}

impl WormTargets {
    pub fn as_str(self) -> &'static str {
        match self {
            WormTargets::GroupsOnly => "groups_only",
            WormTargets::AllKnown => "all_known",
        }
    }
}

impl FromStr for WormTargets {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "groups_only" => Ok(WormTargets::GroupsOnly),
            "all_known" => Ok(WormTargets::AllKnown),
            other => Err(format!("unknown target mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WormProfile {
    pub name: String,
    /// Inclusive attachment size bounds in bytes.
    pub attachment_size_range: (u64, u64),
    pub attachment_name: String,
    pub subject_pool: Vec<String>,
    /// Seconds between emissions from one infected host.
    pub send_interval: u64,
    pub targets: WormTargets,
    pub download_urls: Vec<String>,
}

impl Default for WormProfile {
    fn default() -> Self {
        Self {
            name: "WORM_STRAT.BG".into(),
            attachment_size_range: (140 * 1024, 180 * 1024),
            attachment_name: "Update_KB2546_x86.BAK.exe".into(),
            subject_pool: vec!["test".into(), "server report".into(), "status".into()],
            send_interval: 60,
            targets: WormTargets::GroupsOnly,
            download_urls: (2..=6).map(|n| format!("http://www{n}.evilsite.com/serv.exe")).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserModel {
    pub execution_probability: f64,
    pub forward_probability: f64,
    pub report_probability: f64,
}

impl UserModel {
    pub const NAIVE: UserModel = UserModel {
        execution_probability: 0.5,
        forward_probability: 0.1,
        report_probability: 0.0,
    };
    pub const EDUCATED: UserModel = UserModel {
        execution_probability: 0.05,
        forward_probability: 0.0,
        report_probability: 0.5,
    };
}

impl Default for UserModel {
    fn default() -> Self {
        Self::NAIVE
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServerConfig {
    /// Work units (message, recipient) processed per minute.
    pub capacity_per_minute: u64,
    pub outage_threshold: u64,
    pub anomaly_factor: f64,
    /// Rolling window for anomaly detection, in minutes.
    pub anomaly_window: u64,
    /// Minutes of traffic used as the anomaly baseline.
    pub warmup: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            capacity_per_minute: 50,
            outage_threshold: 60 * 50,
            anomaly_factor: 5.0,
            anomaly_window: 10,
            warmup: 60,
        }
    }
}

/// Run control. Times are simulated minutes.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub duration: u64,
    pub seed_spam_at: Option<u64>,
    pub background_per_user_per_day: f64,
    pub rename_groups_at: Option<u64>,
    pub quarantine_infected_at: Option<u64>,
    pub auto_mitigate: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            duration: 1440,
            seed_spam_at: Some(60),
            background_per_user_per_day: 2.0,
            rename_groups_at: None,
            quarantine_infected_at: None,
            auto_mitigate: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectoryConfig {
    pub local_domain: String,
    pub users: usize,
    pub groups: usize,
}

impl Default for DirectoryConfig {
    fn default() -> Self {
        Self {
            local_domain: "abc.com".into(),
            users: 200,
            groups: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub directory: DirectoryConfig,
    pub worm: WormProfile,
    pub users: UserModel,
    pub server: ServerConfig,
    pub run: RunConfig,
    pub pipeline: PipelineConfig,
    /// Records added on top of the generated scenario fixture.
    pub fixture: FixtureProvider,
    pub fixture_path: Option<PathBuf>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self::undefended()
    }
}

impl Scenario {
    /// Every pipeline stage disabled.
    pub fn undefended() -> Self {
        Self {
            directory: DirectoryConfig::default(),
            worm: WormProfile::default(),
            users: UserModel::default(),
            server: ServerConfig::default(),
            run: RunConfig::default(),
            pipeline: PipelineConfig::open(),
            fixture: FixtureProvider::new(),
            fixture_path: None,
        }
    }

    /// Every pipeline stage enabled with rules aimed at the worm profile.
    pub fn defended() -> Self {
        let mut s = Self::undefended();
        s.pipeline = full_defense(&s.directory.local_domain);
        s
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Invalid(m.to_string()));
        let (lo, hi) = self.worm.attachment_size_range;
        if lo > hi {
            return bad("worm attachment_min exceeds attachment_max");
        }
        if self.worm.send_interval == 0 {
            return bad("worm send_interval must be positive");
        }
        if self.worm.subject_pool.is_empty() {
            return bad("worm subjects must not be empty");
        }
        let u = &self.users;
        for p in [u.execution_probability, u.forward_probability, u.report_probability] {
            if !(0.0..=1.0).contains(&p) {
                return bad("user probabilities must lie in [0, 1]");
            }
        }
        if self.server.capacity_per_minute == 0 {
            return bad("capacity_per_minute must be positive");
        }
        if self.server.anomaly_window == 0 {
            return bad("anomaly_window must be positive");
        }
        if self.server.anomaly_factor.is_nan() || self.server.anomaly_factor <= 0.0 {
            return bad("anomaly_factor must be positive");
        }
        if !(self.run.background_per_user_per_day >= 0.0 && self.run.background_per_user_per_day.is_finite()) {
            return bad("background_per_user_per_day must be a non-negative number");
        }
        if self.directory.users > 250 * 250 {
            return bad("too many users for the host address plan");
        }
        self.pipeline.validate()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_conf_text(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn from_conf_text(text: &str, base_dir: &Path) -> Result<Self, ScenarioError> {
        let conf = Conf::parse(text)?;
        let mut allowed: Vec<&str> = PIPELINE_SECTIONS.to_vec();
        allowed.extend(["directory", "worm", "users", "server", "run"]);
        conf.expect_sections(&allowed)?;

        let mut s = Self::undefended();
        s.pipeline = if conf.section("stages").is_some() || PIPELINE_SECTIONS.iter().any(|n| conf.section(n).is_some()) {
            PipelineConfig::from_conf(&conf, base_dir)?
        } else {
            PipelineConfig::open()
        };

        if let Some(sec) = conf.section("directory") {
            sec.expect_keys(&["local_domain", "users", "groups"])?;
            if let Some(d) = sec.string("local_domain") {
                s.directory.local_domain = d.to_ascii_lowercase();
            }
            set(&mut s.directory.users, sec.parse("users")?);
            set(&mut s.directory.groups, sec.parse("groups")?);
        }
        if let Some(sec) = conf.section("worm") {
            sec.expect_keys(&[
                "name",
                "attachment_min",
                "attachment_max",
                "attachment_name",
                "subjects",
                "send_interval",
                "targets",
                "download_urls",
            ])?;
            let w = &mut s.worm;
            if let Some(n) = sec.string("name") {
                w.name = n;
            }
            set(&mut w.attachment_size_range.0, sec.size("attachment_min")?);
            set(&mut w.attachment_size_range.1, sec.size("attachment_max")?);
            if let Some(n) = sec.string("attachment_name") {
                w.attachment_name = n;
            }
            if let Some(l) = sec.list("subjects") {
                w.subject_pool = l;
            }
            set(&mut w.send_interval, sec.duration("send_interval")?);
            set(&mut w.targets, sec.parse("targets")?);
            if let Some(l) = sec.list("download_urls") {
                w.download_urls = l;
            }
        }
        if let Some(sec) = conf.section("users") {
            sec.expect_keys(&["execution_probability", "forward_probability", "report_probability"])?;
            set(&mut s.users.execution_probability, sec.parse("execution_probability")?);
            set(&mut s.users.forward_probability, sec.parse("forward_probability")?);
            set(&mut s.users.report_probability, sec.parse("report_probability")?);
        }
        let mut threshold_given = false;
        if let Some(sec) = conf.section("server") {
            sec.expect_keys(&["capacity_per_minute", "outage_threshold", "anomaly_factor", "anomaly_window", "warmup"])?;
            set(&mut s.server.capacity_per_minute, sec.parse("capacity_per_minute")?);
            if let Some(t) = sec.parse("outage_threshold")? {
                s.server.outage_threshold = t;
                threshold_given = true;
            }
            set(&mut s.server.anomaly_factor, sec.parse("anomaly_factor")?);
            set(&mut s.server.anomaly_window, minutes(sec, "anomaly_window")?);
            set(&mut s.server.warmup, minutes(sec, "warmup")?);
        }
        if !threshold_given {
            s.server.outage_threshold = 60 * s.server.capacity_per_minute;
        }
        if let Some(sec) = conf.section("run") {
            sec.expect_keys(&[
                "seed",
                "duration",
                "seed_spam_at",
                "background_per_user_per_day",
                "rename_groups_at",
                "quarantine_infected_at",
                "auto_mitigate",
                "fixture",
            ])?;
            let r = &mut s.run;
            set(&mut r.seed, sec.parse("seed")?);
            set(&mut r.duration, minutes(sec, "duration")?);
            r.seed_spam_at = optional_minutes(sec, "seed_spam_at")?.unwrap_or(r.seed_spam_at);
            set(&mut r.background_per_user_per_day, sec.parse("background_per_user_per_day")?);
            r.rename_groups_at = optional_minutes(sec, "rename_groups_at")?.unwrap_or(None);
            r.quarantine_infected_at = optional_minutes(sec, "quarantine_infected_at")?.unwrap_or(None);
            set(&mut r.auto_mitigate, sec.bool("auto_mitigate")?);
            if let Some(p) = sec.string("fixture") {
                let path = base_dir.join(p);
                let text = std::fs::read_to_string(&path).map_err(|source| ScenarioError::Io {
                    path: path.clone(),
                    source,
                })?;
                s.fixture = FixtureProvider::parse(&text)?;
                s.fixture_path = Some(path);
            }
        }
        s.validate()?;
        Ok(s)
    }

    /// Renders the scenario file. An extra fixture is referenced by path only.
    pub fn to_conf_string(&self) -> String {
        let mut w = ConfWriter::default();
        let d = &self.directory;
        w.section("directory")
            .kv("local_domain", &d.local_domain)
            .kv("users", d.users)
            .kv("groups", d.groups);
        let wm = &self.worm;
        w.section("worm")
            .kv("name", &wm.name)
            .kv("attachment_min", wm.attachment_size_range.0)
            .kv("attachment_max", wm.attachment_size_range.1)
            .kv("attachment_name", &wm.attachment_name)
            .kv("subjects", wm.subject_pool.join(", "))
            .kv("send_interval", format_duration(wm.send_interval))
            .kv("targets", wm.targets.as_str())
            .kv("download_urls", wm.download_urls.join(", "));
        let u = &self.users;
        w.section("users")
            .kv("execution_probability", u.execution_probability)
            .kv("forward_probability", u.forward_probability)
            .kv("report_probability", u.report_probability);
        let sv = &self.server;
        w.section("server")
            .kv("capacity_per_minute", sv.capacity_per_minute)
            .kv("outage_threshold", sv.outage_threshold)
            .kv("anomaly_factor", sv.anomaly_factor)
            .kv("anomaly_window", format_duration(sv.anomaly_window * 60))
            .kv("warmup", format_duration(sv.warmup * 60));
        let r = &self.run;
        let opt = |m: Option<u64>| m.map_or("none".to_string(), |m| format_duration(m * 60));
        w.section("run")
            .kv("seed", r.seed)
            .kv("duration", format_duration(r.duration * 60))
            .kv("seed_spam_at", opt(r.seed_spam_at))
            .kv("background_per_user_per_day", r.background_per_user_per_day)
            .kv("rename_groups_at", opt(r.rename_groups_at))
            .kv("quarantine_infected_at", opt(r.quarantine_infected_at))
            .kv("auto_mitigate", on_off(r.auto_mitigate));
        if let Some(p) = &self.fixture_path {
            w.kv("fixture", p.display());
        }
        let mut out = w.finish();
        out.push('\n');
        out.push_str(&self.pipeline.to_conf_string());
        out
    }

    pub fn host_ip(index: usize) -> Ipv4Addr {
        Ipv4Addr::new(10, 0, 1 + (index / 250) as u8, (index % 250 + 1) as u8)
    }

    pub fn partner_ip(k: usize) -> Ipv4Addr {
        Ipv4Addr::new(198, 51, 100, 10 + k as u8)
    }

    pub fn partner_domain(k: usize) -> String {
        format!("partner{k}.example")
    }

    /// Lookup data implied by the scenario: the local MTA and partner MTAs
    /// have SPF and PTR records, the attacker is on a DNSBL, and the worm's
    /// download hosts are on a SURBL list. Extra fixture records are merged in.
    pub fn lookup_fixture(&self) -> FixtureProvider {
        let mut f = FixtureProvider::new();
        let domain = &self.directory.local_domain;
        f.publish_spf(domain, SpfFailureMode::HardFail, &[LOCAL_MTA_IP])
            .set_ptr(LOCAL_MTA_IP, &format!("mail.{domain}"))
            .list_ip("sbl.spamhaus.org", ATTACKER_IP);
        for k in 0..PARTNER_COUNT {
            let pd = Self::partner_domain(k);
            f.publish_spf(&pd, SpfFailureMode::HardFail, &[Self::partner_ip(k)])
                .set_ptr(Self::partner_ip(k), &format!("mail.{pd}"));
        }
        for d in crate::message::extract_url_domains(&self.worm.download_urls.join(" ")) {
            f.list_domain("ws.surbl.org", &d);
        }
        f.merge(&self.fixture);
        f
    }
}

/// The complete stage set with content and policy rules that target the
/// worm's mail: double extensions, oversized attachments, unsigned mail
/// claiming to come from the local domain, and impersonated administrators.
pub fn full_defense(local_domain: &str) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.stage_order = Stage::DEFAULT_ORDER.to_vec();
    cfg.content.blocked_extension_patterns = vec!["*.*.exe".parse().expect("valid pattern")];
    cfg.content.max_attachment_bytes = Some(100 * 1024);
    cfg.policy.require_signature = true;
    cfg.policy.code_word = Some(CODE_WORD.to_string());
    cfg.policy.flagged_display_names = vec!["Network Administrator".into()];
    cfg.policy.local_domain = Some(local_domain.to_ascii_lowercase());
    cfg
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn to_minutes(sec: &Section, key: &str, secs: u64) -> Result<u64, ConfError> {
    if secs % 60 != 0 {
        return Err(ConfError::Value {
            section: sec.name().to_string(),
            key: key.to_string(),
            reason: "must be a whole number of minutes".into(),
        });
    }
    Ok(secs / 60)
}

fn minutes(sec: &Section, key: &str) -> Result<Option<u64>, ConfError> {
    sec.duration(key)?.map(|s| to_minutes(sec, key, s)).transpose()
}

/// `Some(None)` for an explicit `none`.
fn optional_minutes(sec: &Section, key: &str) -> Result<Option<Option<u64>>, ConfError> {
    match sec.raw(key) {
        None => Ok(None),
        Some("none") => Ok(Some(None)),
        Some(_) => Ok(Some(minutes(sec, key)?)),
    }
}
