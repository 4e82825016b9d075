//! Labeled corpora: loading message directories and label files, and
//! generating synthetic corpora whose spam is built class by class so that
//! each class is caught by a known set of filters.
//!
//! A corpus spec is sectioned key-value text:
//!
//! ```text
//! [corpus]
//! local_domain = abc.com
//! users = 200
//! ham = 300
//! internal_ham = 60
//! recipients_per_spam = 12
//! start = 0
//! span = 168h
//! seed = 1
//!
//! [spam.zone1_blockable]
//! count = 360
//! zones = relays.ordb.org
//! attachment = report.doc.exe
//! ```
//!
//! Class keys: `count`, `zones`, `ptr`, `forged_local_sender`,
//! `internal_relay`, `attachment`, `attachment_size`, `listed_url`.

use std::collections::BTreeMap;
use std::fs;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bayes::Label;
use crate::conf::{format_duration, on_off, Conf, ConfError, ConfWriter};
use crate::message::{parse_message, EmailAddress, EmailMessage, MessageError};
use crate::sim::{Scenario, CODE_WORD, LOCAL_MTA_IP, PARTNER_COUNT};
use crate::source::{FixtureError, FixtureProvider, SpfFailureMode, DEFAULT_DNSBL_ZONES};

pub const MESSAGES_DIR: &str = "messages";
pub const LABELS_FILE: &str = "labels.txt";
pub const FIXTURE_FILE: &str = "fixture.txt";
pub const CORPUS_SPEC_FILE: &str = "corpus.conf";

/// SURBL list that generated spam URLs are published in.
pub const URL_LIST: &str = "ws.surbl.org";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Message {
        path: PathBuf,
        #[source]
        source: MessageError,
    },
    #[error("{path} line {line}: {reason}")]
    Labels { path: PathBuf, line: usize, reason: String },
    #[error(transparent)]
    Conf(#[from] ConfError),
    #[error("fixture: {0}")]
    Fixture(#[from] FixtureError),
    #[error("invalid corpus spec: {0}")]
    Invalid(String),
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Read {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), CorpusError> {
    fs::write(path, text).map_err(|source| CorpusError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads every `*.msg` file in `dir`, sorted by file name.
pub fn load_messages(dir: &Path) -> Result<Vec<(String, EmailMessage)>, CorpusError> {
    let read_err = |source| CorpusError::Read {
        path: dir.to_path_buf(),
        source,
    };
    let mut names: Vec<String> = Vec::new();
    for entry in fs::read_dir(dir).map_err(read_err)? {
        let entry = entry.map_err(read_err)?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".msg") && entry.path().is_file() {
            names.push(name);
        }
    }
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let path = dir.join(&name);
            let raw = fs::read(&path).map_err(|source| CorpusError::Read {
                path: path.clone(),
                source,
            })?;
            let msg = parse_message(&raw).map_err(|source| CorpusError::Message { path, source })?;
            Ok((name, msg))
        })
        .collect()
}

/// Parses `<filename> <spam|ham>` lines. Blank lines and `#` comments are skipped.
pub fn parse_labels(text: &str, origin: &Path) -> Result<BTreeMap<String, Label>, CorpusError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |reason: String| CorpusError::Labels {
            path: origin.to_path_buf(),
            line: i + 1,
            reason,
        };
        let mut fields = line.split_whitespace();
        let (Some(file), Some(label), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(err("expected `<filename> <spam|ham>`".into()));
        };
        let label: Label = label.parse().map_err(|e| err(format!("{e}")))?;
        if out.insert(file.to_string(), label).is_some() {
            return Err(err(format!("duplicate label for `{file}`")));
        }
    }
    Ok(out)
}

pub fn load_labels(path: &Path) -> Result<BTreeMap<String, Label>, CorpusError> {
    parse_labels(&read(path)?, path)
}

pub fn render_labels(labels: &BTreeMap<String, Label>) -> String {
    labels.iter().map(|(f, l)| format!("{f} {}\n", l.as_str())).collect()
}

/// How one group of spam messages is constructed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpamClass {
    pub name: String,
    pub count: usize,
    /// DNSBL zones listing every source of this class.
    pub zones: Vec<String>,
    /// Whether the source has a PTR record.
    pub ptr: bool,
    /// Sender claims the local domain while connecting from outside.
    pub forged_local_sender: bool,
    /// Sender is a local user relayed through the local MTA, unsigned.
    pub internal_relay: bool,
    pub attachment: Option<String>,
    pub attachment_size: u64,
    /// Body links to a domain on the SURBL list.
    pub listed_url: bool,
}

impl SpamClass {
    pub fn clean(name: &str, count: usize) -> Self {
        Self {
            name: name.to_string(),
            count,
            zones: Vec::new(),
            ptr: true,
            forged_local_sender: false,
            internal_relay: false,
            attachment: None,
            attachment_size: 40 * 1024,
            listed_url: false,
        }
    }

    fn zones(mut self, zones: &[&str]) -> Self {
        self.zones = zones.iter().map(|z| z.to_string()).collect();
        self
    }

    fn attachment(mut self, name: &str) -> Self {
        self.attachment = Some(name.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusSpec {
    pub local_domain: String,
    pub users: usize,
    pub ham: usize,
    /// Ham sent by local users through the local MTA; the rest comes from partners.
    pub internal_ham: usize,
    pub recipients_per_spam: usize,
    pub start: u64,
    /// Seconds covered by message dates.
    pub span: u64,
    pub seed: u64,
    pub classes: Vec<SpamClass>,
}

const ZONE1: &str = DEFAULT_DNSBL_ZONES[0];
const ZONE2: &str = DEFAULT_DNSBL_ZONES[1];
const ZONE3: &str = DEFAULT_DNSBL_ZONES[2];

impl CorpusSpec {
    pub const PRESETS: [&'static str; 2] = ["dnsbl", "mixed"];

    /// Classes are kept sorted by name, the order a spec file yields them in.
    fn base(span: u64, mut classes: Vec<SpamClass>) -> Self {
        classes.sort_by(|a, b| a.name.cmp(&b.name));
        Self {
            local_domain: "abc.com".into(),
            users: 200,
            ham: 300,
            internal_ham: 60,
            recipients_per_spam: 12,
            start: 0,
            span,
            seed: 1,
            classes,
        }
    }

    /// Seven days of spam where the first default zone alone lists 45% of
    /// sources, the other two zones list another 35% (overlapping each other
    /// and partly the first zone), and 20% of sources are unlisted. Of the
    /// first zone's unique sources, 80% carry a double-extension attachment.
    pub fn dnsbl() -> Self {
        Self::base(
            7 * 24 * 3600,
            vec![
                SpamClass::clean("zone1_blockable", 360).zones(&[ZONE1]).attachment("report.doc.exe"),
                SpamClass::clean("zone1_clean", 90).zones(&[ZONE1]),
                SpamClass::clean("zone2", 100).zones(&[ZONE2]),
                SpamClass::clean("zone3", 50).zones(&[ZONE3]),
                SpamClass::clean("zone2_zone3", 150).zones(&[ZONE2, ZONE3]),
                SpamClass::clean("zone1_zone3", 50).zones(&[ZONE1, ZONE3]),
                SpamClass::clean("unlisted", 200),
            ],
        )
    }

    /// Five three-hour sessions of spam, 55% of which one filter layer or
    /// another catches.
    pub fn mixed() -> Self {
        let mut no_ptr = SpamClass::clean("no_ptr", 60);
        no_ptr.ptr = false;
        let mut forged = SpamClass::clean("forged_local", 80);
        forged.forged_local_sender = true;
        let mut url = SpamClass::clean("listed_url", 70);
        url.listed_url = true;
        let mut unsigned = SpamClass::clean("unsigned_internal", 50);
        unsigned.internal_relay = true;
        Self::base(
            5 * 3 * 3600,
            vec![
                SpamClass::clean("blocklisted", 200).zones(&[ZONE2]),
                no_ptr,
                forged,
                SpamClass::clean("double_extension", 90).attachment("invoice.pdf.exe"),
                url,
                unsigned,
                SpamClass::clean("clean", 450),
            ],
        )
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "dnsbl" => Some(Self::dnsbl()),
            "mixed" => Some(Self::mixed()),
            _ => None,
        }
    }

    pub fn spam_total(&self) -> usize {
        self.classes.iter().map(|c| c.count).sum()
    }

    pub fn user_address(&self, i: usize) -> EmailAddress {
        EmailAddress::new(&format!("user{i:03}"), &self.local_domain).expect("generated address")
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::Invalid(m));
        if self.users == 0 {
            return bad("users must be positive".into());
        }
        if self.recipients_per_spam == 0 || self.recipients_per_spam > self.users {
            return bad(format!("recipients_per_spam must be in 1..={}", self.users));
        }
        if self.internal_ham > self.ham {
            return bad("internal_ham exceeds ham".into());
        }
        if self.span == 0 {
            return bad("span must be positive".into());
        }
        if EmailAddress::new("user", &self.local_domain).is_err() {
            return bad(format!("invalid local_domain `{}`", self.local_domain));
        }
        for c in &self.classes {
            if c.forged_local_sender && c.internal_relay {
                return bad(format!("class {}: forged_local_sender and internal_relay are exclusive", c.name));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        Self::from_conf_text(&read(path)?)
    }

    pub fn from_conf_text(text: &str) -> Result<Self, CorpusError> {
        let conf = Conf::parse(text)?;
        let mut spec = Self::base(24 * 3600, Vec::new());
        for name in conf.section_names() {
            if name != "corpus" && !name.starts_with("spam.") {
                return Err(ConfError::UnknownSection(name.to_string()).into());
            }
        }
        if let Some(sec) = conf.section("corpus") {
            sec.expect_keys(&[
                "local_domain",
                "users",
                "ham",
                "internal_ham",
                "recipients_per_spam",
                "start",
                "span",
                "seed",
            ])?;
            if let Some(d) = sec.string("local_domain") {
                spec.local_domain = d.to_ascii_lowercase();
            }
            set(&mut spec.users, sec.parse("users")?);
            set(&mut spec.ham, sec.parse("ham")?);
            set(&mut spec.internal_ham, sec.parse("internal_ham")?);
            set(&mut spec.recipients_per_spam, sec.parse("recipients_per_spam")?);
            set(&mut spec.start, sec.parse("start")?);
            set(&mut spec.span, sec.duration("span")?);
            set(&mut spec.seed, sec.parse("seed")?);
        }
        for name in conf.section_names().filter(|n| n.starts_with("spam.")) {
            let sec = conf.section(name).expect("listed section");
            sec.expect_keys(&[
                "count",
                "zones",
                "ptr",
                "forged_local_sender",
                "internal_relay",
                "attachment",
                "attachment_size",
                "listed_url",
            ])?;
            let mut c = SpamClass::clean(&name["spam.".len()..], 0);
            set(&mut c.count, sec.parse("count")?);
            set(&mut c.zones, sec.list("zones"));
            set(&mut c.ptr, sec.bool("ptr")?);
            set(&mut c.forged_local_sender, sec.bool("forged_local_sender")?);
            set(&mut c.internal_relay, sec.bool("internal_relay")?);
            c.attachment = sec.string("attachment").filter(|a| !a.is_empty());
            set(&mut c.attachment_size, sec.size("attachment_size")?);
            set(&mut c.listed_url, sec.bool("listed_url")?);
            spec.classes.push(c);
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_conf_string(&self) -> String {
        let mut w = ConfWriter::default();
        w.section("corpus")
            .kv("local_domain", &self.local_domain)
            .kv("users", self.users)
            .kv("ham", self.ham)
            .kv("internal_ham", self.internal_ham)
            .kv("recipients_per_spam", self.recipients_per_spam)
            .kv("start", self.start)
            .kv("span", format_duration(self.span))
            .kv("seed", self.seed);
        for c in &self.classes {
            w.section(&format!("spam.{}", c.name)).kv("count", c.count);
            if !c.zones.is_empty() {
                w.kv("zones", c.zones.join(", "));
            }
            w.kv("ptr", on_off(c.ptr))
                .kv("forged_local_sender", on_off(c.forged_local_sender))
                .kv("internal_relay", on_off(c.internal_relay));
            if let Some(a) = &c.attachment {
                w.kv("attachment", a).kv("attachment_size", c.attachment_size);
            }
            w.kv("listed_url", on_off(c.listed_url));
        }
        w.finish()
    }

    /// Builds the corpus. Output depends only on these settings, seed included.
    pub fn generate(&self) -> Corpus {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut fixture = FixtureProvider::new();
        let domain = &self.local_domain;
        let mta_helo = format!("mail.{domain}");
        fixture
            .publish_spf(domain, SpfFailureMode::HardFail, &[LOCAL_MTA_IP])
            .set_ptr(LOCAL_MTA_IP, &mta_helo);
        for k in 0..PARTNER_COUNT {
            let pd = Scenario::partner_domain(k);
            fixture
                .publish_spf(&pd, SpfFailureMode::HardFail, &[Scenario::partner_ip(k)])
                .set_ptr(Scenario::partner_ip(k), &format!("mail.{pd}"));
        }

        enum Item<'a> {
            Spam(usize, &'a SpamClass),
            Ham(usize),
        }
        let mut items: Vec<Item> = Vec::with_capacity(self.spam_total() + self.ham);
        for c in &self.classes {
            items.extend((0..c.count).map(|_| Item::Spam(0, c)));
        }
        items.extend((0..self.ham).map(Item::Ham));
        items.shuffle(&mut rng);
        let mut spam_seen = 0;
        for item in &mut items {
            if let Item::Spam(i, _) = item {
                *i = spam_seen;
                spam_seen += 1;
            }
        }

        let n = items.len() as u64;
        let width = n.to_string().len().max(5);
        let mut messages = Vec::with_capacity(items.len());
        for (j, item) in items.iter().enumerate() {
            let j64 = j as u64;
            let lo = self.start + j64 * self.span / n;
            let hi = self.start + (j64 + 1) * self.span / n;
            let date = if hi > lo { rng.random_range(lo..hi) } else { lo };
            let file = format!("msg{j:0width$}.msg");
            let (label, class, message) = match item {
                Item::Spam(i, c) => (Label::Spam, Some(c.name.clone()), self.spam_message(*i, c, date, &mut rng, &mut fixture)),
                Item::Ham(h) => (Label::Ham, None, self.ham_message(*h, date, &mut rng)),
            };
            messages.push(CorpusMessage {
                file,
                label,
                class,
                message,
            });
        }
        Corpus {
            spec: self.clone(),
            messages,
            fixture,
        }
    }

    fn spam_message(&self, i: usize, c: &SpamClass, date: u64, rng: &mut ChaCha8Rng, fixture: &mut FixtureProvider) -> EmailMessage {
        const SUBJECTS: [&str; 6] = [
            "Limited time offer",
            "You have been selected",
            "Cheap watches and more",
            "Your account needs attention",
            "Re: pending invoice",
            "Lowest mortgage rates",
        ];
        const LINES: [&str; 4] = [
            "Act now to claim your exclusive discount before it expires.",
            "Our best prices of the year are waiting for you.",
            "Click through to confirm your prize and shipping details.",
            "Thousands of satisfied customers cannot be wrong.",
        ];
        let (sender, ip, helo) = if c.internal_relay {
            (self.user_address(rng.random_range(0..self.users)), LOCAL_MTA_IP, format!("mail.{}", self.local_domain))
        } else {
            let ip = Ipv4Addr::from(u32::from(Ipv4Addr::new(198, 18, 0, 1)) + i as u32);
            let helo = format!("mx{i}.bulk-sender.example");
            if c.ptr {
                fixture.set_ptr(ip, &helo);
            }
            for z in &c.zones {
                fixture.list_ip(z, ip);
            }
            let sender = if c.forged_local_sender {
                self.user_address(rng.random_range(0..self.users))
            } else {
                EmailAddress::new("sales", &format!("deals{}.example", i % 40)).expect("generated address")
            };
            (sender, ip, helo)
        };
        let first = (i * self.recipients_per_spam) % self.users;
        let recipients: Vec<EmailAddress> = (0..self.recipients_per_spam)
            .map(|k| self.user_address((first + k) % self.users))
            .collect();
        let mut body = String::from(LINES[rng.random_range(0..LINES.len())]);
        body.push('\n');
        if c.listed_url {
            let d = format!("promo{}.spamvertised.example", i % 20);
            fixture.list_domain(URL_LIST, &d);
            body.push_str(&format!("http://{d}/offer?id={i}\n"));
        }
        let mut b = EmailMessage::builder(&sender)
            .to_all(&recipients)
            .subject(SUBJECTS[rng.random_range(0..SUBJECTS.len())])
            .date(date)
            .received(&helo, ip);
        if let Some(a) = &c.attachment {
            b = b.attachment(a, c.attachment_size);
        }
        b.body(&body).build().expect("spam has recipients")
    }

    fn ham_message(&self, h: usize, date: u64, rng: &mut ChaCha8Rng) -> EmailMessage {
        const SUBJECTS: [&str; 6] = [
            "Quarterly figures",
            "Meeting notes",
            "Shipment schedule",
            "Contract draft",
            "Travel plans for next week",
            "Updated price list",
        ];
        let to = self.user_address(rng.random_range(0..self.users));
        let subject = SUBJECTS[rng.random_range(0..SUBJECTS.len())];
        if h < self.internal_ham {
            let from = self.user_address(rng.random_range(0..self.users));
            EmailMessage::builder(&from)
                .to(&to)
                .subject(subject)
                .date(date)
                .received(&format!("mail.{}", self.local_domain), LOCAL_MTA_IP)
                .signature(&format!("{}, {}", from.local(), self.local_domain))
                .body(&format!("Please see the notes below.\n{CODE_WORD}\n"))
                .build()
                .expect("ham has a recipient")
        } else {
            let k = rng.random_range(0..PARTNER_COUNT);
            let pd = Scenario::partner_domain(k);
            let from = EmailAddress::new("contact", &pd).expect("generated address");
            let mut b = EmailMessage::builder(&from)
                .to(&to)
                .subject(subject)
                .date(date)
                .received(&format!("mail.{pd}"), Scenario::partner_ip(k));
            if rng.random_bool(0.2) {
                b = b.attachment("summary.pdf", rng.random_range(10_000..60_000));
            }
            b.body("Following up on our conversation, details are attached.\n")
                .build()
                .expect("ham has a recipient")
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusMessage {
    pub file: String,
    pub label: Label,
    /// Spam class name; `None` for ham.
    pub class: Option<String>,
    pub message: EmailMessage,
}

/// A generated corpus with the lookup data its classes assume.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub messages: Vec<CorpusMessage>,
    pub fixture: FixtureProvider,
}

impl Corpus {
    pub fn labels(&self) -> BTreeMap<String, Label> {
        self.messages.iter().map(|m| (m.file.clone(), m.label)).collect()
    }

    /// Writes `corpus.conf`, `labels.txt`, `fixture.txt` and `messages/*.msg`
    /// under `dir`, creating it if needed.
    pub fn write_to(&self, dir: &Path) -> Result<(), CorpusError> {
        let msg_dir = dir.join(MESSAGES_DIR);
        fs::create_dir_all(&msg_dir).map_err(|source| CorpusError::Write {
            path: msg_dir.clone(),
            source,
        })?;
        write(&dir.join(CORPUS_SPEC_FILE), &self.spec.to_conf_string())?;
        write(&dir.join(LABELS_FILE), &render_labels(&self.labels()))?;
        write(&dir.join(FIXTURE_FILE), &self.fixture.to_text())?;
        for m in &self.messages {
            write(&msg_dir.join(&m.file), &m.message.render())?;
        }
        Ok(())
    }
}

/// A directory written by [`Corpus::write_to`], read back.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub dir: PathBuf,
    pub spec: CorpusSpec,
    pub messages: Vec<(String, EmailMessage)>,
    pub labels: BTreeMap<String, Label>,
    pub fixture: FixtureProvider,
}

impl Workspace {
    pub fn load(dir: &Path) -> Result<Self, CorpusError> {
        let spec = CorpusSpec::load(&dir.join(CORPUS_SPEC_FILE))?;
        let messages = load_messages(&dir.join(MESSAGES_DIR))?;
        let labels = load_labels(&dir.join(LABELS_FILE))?;
        let fixture = FixtureProvider::parse(&read(&dir.join(FIXTURE_FILE))?)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            spec,
            messages,
            labels,
            fixture,
        })
    }
}
