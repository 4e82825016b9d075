//! Minute-by-minute model of a spam-seeded worm outbreak against one mail
//! server, with the defense pipeline, user reactions, monitoring and
//! operator mitigations.
//!
//! The unit of server work is one (message, envelope recipient) pair: a mail
//! addressed to a group costs one unit and is expanded to mailboxes only
//! after it is accepted.

mod directory;
mod metrics;
mod scenario;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::Ipv4Addr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

pub use directory::{Directory, Group, RenameReport, Resolved};
pub use metrics::{detect_anomaly, Alert, MetricsTimeline, MinuteTraffic, RunSummary, ServerStatus, TickMetrics, CSV_HEADER, MIN_BASELINE};
pub use scenario::{
    full_defense, DirectoryConfig, RunConfig, Scenario, ScenarioError, ServerConfig, UserModel, WormProfile,
    WormTargets, ATTACKER_IP, CODE_WORD, LOCAL_MTA_IP, PARTNER_COUNT,
};

use crate::bayes::Label;
use crate::message::{ConnectionContext, EmailAddress, EmailMessage};
use crate::pipeline::{Disposition, Pipeline, Stage};
use crate::source::FixtureProvider;

/// Minutes a legitimate MTA waits before retrying a temp-failed delivery.
pub const RETRY_DELAY: u64 = 15;

const WORM_CAMPAIGN: u64 = 0;
const STREAM_BACKGROUND: u64 = 1;
const STREAM_BEHAVIOR: u64 = 2;
const STREAM_SEED: u64 = 3;
const STREAM_WORM: u64 = 4;

const LEGIT_SUBJECTS: [&str; 8] = [
    "meeting notes",
    "quarterly plan",
    "lunch on friday",
    "project milestones",
    "invoice copy",
    "travel request",
    "team schedule",
    "budget review",
];

const LEGIT_LINES: [&str; 6] = [
    "Please find the figures we discussed below.",
    "Can we move the review to Thursday afternoon?",
    "The draft looks good, a few comments inline.",
    "Reminding everyone about the deadline next week.",
    "Thanks for the quick turnaround on this.",
    "Let me know if the room booking works for you.",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HostState {
    Clean,
    Infected,
    Quarantined,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Host {
    pub owner: EmailAddress,
    pub ip: Ipv4Addr,
    pub state: HostState,
    /// Minute of infection.
    pub infected_at: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reaction {
    Execute,
    Forward,
    Report,
    Ignore,
}

/// Draws a reaction to an unexpected attachment: execute, forward and
/// report are tried in that order, each with its own probability.
pub fn user_behavior(users: &UserModel, rng: &mut impl Rng) -> Reaction {
    if rng.random::<f64>() < users.execution_probability {
        Reaction::Execute
    } else if rng.random::<f64>() < users.forward_probability {
        Reaction::Forward
    } else if rng.random::<f64>() < users.report_probability {
        Reaction::Report
    } else {
        Reaction::Ignore
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// An RNG whose stream depends only on `parts`, so draws for one host or
/// one tick never shift when unrelated events change.
pub fn keyed_rng(parts: &[u64]) -> ChaCha8Rng {
    let mut h = 0u64;
    for p in parts {
        h = splitmix64(h ^ *p);
    }
    ChaCha8Rng::seed_from_u64(h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MailKind {
    Legit,
    Seed,
    Worm,
    Forward,
}

impl MailKind {
    pub fn is_spam(self) -> bool {
        self != MailKind::Legit
    }
}

/// A message on its way into the server together with the connection it
/// arrives on.
#[derive(Debug, Clone)]
pub struct Submission {
    pub message: Arc<EmailMessage>,
    pub client_ip: Ipv4Addr,
    pub helo: String,
    pub kind: MailKind,
    /// Temp-failed deliveries are retried this many times.
    pub retries: u8,
}

#[derive(Debug, Clone)]
struct Unit {
    message: Arc<EmailMessage>,
    recipient: EmailAddress,
    client_ip: Ipv4Addr,
    helo: String,
    kind: MailKind,
    retries: u8,
}

/// Step-wise simulation state.
pub struct Simulation {
    scenario: Scenario,
    minute: u64,
    directory: Directory,
    hosts: Vec<Host>,
    harvested: Vec<EmailAddress>,
    pipeline: Pipeline,
    provider: FixtureProvider,
    queue: VecDeque<Unit>,
    status: ServerStatus,
    retries: BTreeMap<u64, Vec<Unit>>,
    outbox: Vec<Submission>,
    reacted: BTreeSet<usize>,
    infections: usize,
    background_rng: ChaCha8Rng,
    background: Option<Poisson<f64>>,
    traffic: Vec<MinuteTraffic>,
    alert_active: bool,
    timeline: MetricsTimeline,
    seq: u64,
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self, ScenarioError> {
        scenario.validate()?;
        let d = &scenario.directory;
        let directory = Directory::generate(&d.local_domain, d.users, d.groups);
        let hosts = directory
            .individuals()
            .iter()
            .enumerate()
            .map(|(i, owner)| Host {
                owner: owner.clone(),
                ip: Scenario::host_ip(i),
                state: HostState::Clean,
                infected_at: None,
            })
            .collect();
        let harvested = match scenario.worm.targets {
            WormTargets::GroupsOnly => directory.group_addresses(),
            WormTargets::AllKnown => {
                let mut all = directory.individuals().to_vec();
                all.extend(directory.group_addresses());
                all
            }
        };
        let pipeline = Pipeline::load(scenario.pipeline.clone())?;
        let rate = d.users as f64 * scenario.run.background_per_user_per_day / 1440.0;
        let background = (rate > 0.0).then(|| Poisson::new(rate).expect("positive finite rate"));
        Ok(Self {
            provider: scenario.lookup_fixture(),
            background_rng: keyed_rng(&[scenario.run.seed, STREAM_BACKGROUND]),
            scenario,
            minute: 0,
            directory,
            hosts,
            harvested,
            pipeline,
            queue: VecDeque::new(),
            status: ServerStatus::Up,
            retries: BTreeMap::new(),
            outbox: Vec::new(),
            reacted: BTreeSet::new(),
            infections: 0,
            background,
            traffic: Vec::new(),
            alert_active: false,
            timeline: MetricsTimeline::default(),
            seq: 0,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    /// The next minute to be simulated.
    pub fn minute(&self) -> u64 {
        self.minute
    }

    pub fn is_finished(&self) -> bool {
        self.minute >= self.scenario.run.duration
    }

    pub fn directory(&self) -> &Directory {
        &self.directory
    }

    pub fn hosts(&self) -> &[Host] {
        &self.hosts
    }

    pub fn host(&self, owner: &EmailAddress) -> Option<&Host> {
        self.directory.index_of(owner).map(|i| &self.hosts[i])
    }

    pub fn infected_count(&self) -> usize {
        self.hosts.iter().filter(|h| h.state == HostState::Infected).count()
    }

    pub fn status(&self) -> ServerStatus {
        self.status
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn timeline(&self) -> &MetricsTimeline {
        &self.timeline
    }

    /// Addresses the worm mails, harvested when the simulation started.
    pub fn worm_targets(&self) -> &[EmailAddress] {
        &self.harvested
    }

    pub fn run_to_end(mut self) -> MetricsTimeline {
        while !self.is_finished() {
            self.step();
        }
        self.finish()
    }

    pub fn finish(mut self) -> MetricsTimeline {
        self.timeline.summary = self.summary();
        self.timeline
    }

    fn summary(&self) -> RunSummary {
        let rows = &self.timeline.rows;
        RunSummary {
            minutes: rows.len() as u64,
            time_to_outage: rows.iter().find(|r| r.status == ServerStatus::Down).map(|r| r.minute),
            total_infections: self.infections,
            spam_delivered: rows.iter().map(|r| r.spam_inbox).sum(),
            alerts: self.timeline.alerts.len(),
            peak_queue: rows.iter().map(|r| r.queue).max().unwrap_or(0),
        }
    }

    /// Queues the attack mail for the next step.
    pub fn inject_seed_spam(&mut self) {
        let sub = self.seed_submission();
        self.outbox.push(sub);
    }

    /// Queues arbitrary mail for the next step.
    pub fn submit(&mut self, submission: Submission) {
        self.outbox.push(submission);
    }

    /// Queues legitimate mail from a local user, relayed by the local MTA.
    pub fn send_internal(&mut self, from: usize, to: &[EmailAddress], subject: &str) {
        let sub = self.internal_submission(from, to, subject, LEGIT_LINES[0]);
        self.outbox.push(sub);
    }

    pub fn rename_group_ids(&mut self) -> RenameReport {
        let report = self.directory.rename_group_ids();
        self.timeline
            .events
            .push(format!("minute {} renamed {} group addresses", self.minute, report.remap.len()));
        report
    }

    /// Cuts the host off the network; it sends nothing from the next tick.
    pub fn quarantine_host(&mut self, owner: &EmailAddress) -> Option<&Host> {
        let i = self.directory.index_of(owner)?;
        self.hosts[i].state = HostState::Quarantined;
        self.timeline
            .events
            .push(format!("minute {} quarantined {}", self.minute, owner));
        Some(&self.hosts[i])
    }

    /// Returns a cleaned host to the network.
    pub fn rejoin_host(&mut self, owner: &EmailAddress) -> Option<&Host> {
        let i = self.directory.index_of(owner)?;
        self.hosts[i].state = HostState::Clean;
        self.hosts[i].infected_at = None;
        Some(&self.hosts[i])
    }

    pub fn infect_host(&mut self, owner: &EmailAddress) -> Option<&Host> {
        let i = self.directory.index_of(owner)?;
        self.infect(i);
        Some(&self.hosts[i])
    }

    fn infect(&mut self, i: usize) {
        if self.hosts[i].state == HostState::Clean {
            self.hosts[i].state = HostState::Infected;
            self.hosts[i].infected_at = Some(self.minute);
            self.infections += 1;
        }
    }

    fn quarantine_all_infected(&mut self) {
        let owners: Vec<EmailAddress> = self
            .hosts
            .iter()
            .filter(|h| h.state == HostState::Infected)
            .map(|h| h.owner.clone())
            .collect();
        for o in owners {
            self.quarantine_host(&o);
        }
    }

    fn seed_submission(&self) -> Submission {
        let w = &self.scenario.worm;
        let mut rng = keyed_rng(&[self.scenario.run.seed, STREAM_SEED]);
        let size = rng.random_range(w.attachment_size_range.0..=w.attachment_size_range.1);
        let subject = &w.subject_pool[rng.random_range(0..w.subject_pool.len())];
        let sender = EmailAddress::new("netadmin", self.directory.local_domain()).expect("valid address");
        let body = format!(
            "Dear user,\nA critical security update is attached. Install it immediately.\nMirrors: {}\nNetwork Administrator\n",
            w.download_urls.join(" ")
        );
        let message = EmailMessage::builder(&sender)
            .display_name("Network Administrator")
            .to_all(self.directory.groups().iter().map(|g| &g.address))
            .subject(subject)
            .date(self.minute * 60)
            .received("relay.attacker.example", ATTACKER_IP)
            .attachment(&w.attachment_name, size)
            .body(&body)
            .build();
        Submission {
            message: Arc::new(message.expect("seed mail has recipients")),
            client_ip: ATTACKER_IP,
            helo: "relay.attacker.example".into(),
            kind: MailKind::Seed,
            retries: 0,
        }
    }

    /// Mail produced this minute by infected hosts. A host infected at
    /// minute `t` first emits at `t + 1`.
    pub fn worm_tick(&self, minute: u64) -> Vec<Submission> {
        self.worm_emitters(minute).map(|i| self.worm_submission(i, minute)).collect()
    }

    /// Hosts that emit worm mail this minute.
    fn worm_emitters(&self, minute: u64) -> impl Iterator<Item = usize> + '_ {
        let interval = self.scenario.worm.send_interval.div_ceil(60).max(1);
        self.hosts.iter().enumerate().filter_map(move |(i, host)| {
            let t = host.infected_at?;
            let due = host.state == HostState::Infected && minute > t && (minute - t) % interval == 0;
            (due && self.worm_target_count(i) > 0).then_some(i)
        })
    }

    fn worm_target_count(&self, i: usize) -> usize {
        let owner = &self.hosts[i].owner;
        self.harvested.iter().filter(|a| !a.matches(owner)).count()
    }

    fn worm_submission(&self, i: usize, minute: u64) -> Submission {
        let w = &self.scenario.worm;
        let host = &self.hosts[i];
        let interval = w.send_interval.div_ceil(60).max(1);
        let targets: Vec<&EmailAddress> = self.harvested.iter().filter(|a| !a.matches(&host.owner)).collect();
        {
            let n = (minute - host.infected_at.expect("emitting host is infected")) / interval;
            let mut rng = keyed_rng(&[self.scenario.run.seed, STREAM_WORM, i as u64, minute]);
            let size = rng.random_range(w.attachment_size_range.0..=w.attachment_size_range.1);
            let subject = &w.subject_pool[((n as usize) + i) % w.subject_pool.len()];
            let helo = format!("host{i:03}");
            let message = EmailMessage::builder(&host.owner)
                .to_all(targets)
                .subject(subject)
                .date(minute * 60)
                .received(&helo, host.ip)
                .attachment(&w.attachment_name, size)
                .body(&format!("See attached.\n{}\n", w.download_urls.join(" ")))
                .build()
                .expect("worm mail has recipients");
            Submission {
                message: Arc::new(message),
                client_ip: host.ip,
                helo,
                kind: MailKind::Worm,
                retries: 0,
            }
        }
    }

    fn internal_submission(&self, from: usize, to: &[EmailAddress], subject: &str, line: &str) -> Submission {
        let sender = &self.directory.individuals()[from];
        let helo = format!("mail.{}", self.directory.local_domain());
        let message = EmailMessage::builder(sender)
            .to_all(to)
            .subject(subject)
            .date(self.minute * 60)
            .received(&helo, LOCAL_MTA_IP)
            .signature(&format!("{}, {}", sender.local(), self.directory.local_domain()))
            .body(&format!("{line}\n{CODE_WORD}\n"))
            .build()
            .expect("internal mail has recipients");
        Submission {
            message: Arc::new(message),
            client_ip: LOCAL_MTA_IP,
            helo,
            kind: MailKind::Legit,
            retries: 1,
        }
    }

    fn background_arrivals(&mut self) -> Vec<Submission> {
        let Some(dist) = self.background else {
            return Vec::new();
        };
        let users = self.directory.individuals().len();
        let n = dist.sample(&mut self.background_rng) as u64;
        let mut out = Vec::new();
        for _ in 0..n {
            let rng = &mut self.background_rng;
            let internal = rng.random::<f64>() < 0.7;
            let from = rng.random_range(0..users);
            let partner = rng.random_range(0..PARTNER_COUNT);
            let to_group = rng.random::<f64>() < 0.1;
            let group_pick = rng.random_range(0..usize::MAX);
            let mut to = rng.random_range(0..users);
            let subject = LEGIT_SUBJECTS[rng.random_range(0..LEGIT_SUBJECTS.len())];
            let line = LEGIT_LINES[rng.random_range(0..LEGIT_LINES.len())];
            if to == from && users > 1 {
                to = (to + 1) % users;
            }
            let groups = self.directory.groups();
            let recipient = if internal && to_group && !groups.is_empty() {
                groups[group_pick % groups.len()].address.clone()
            } else {
                self.directory.individuals()[to].clone()
            };
            if internal {
                if self.hosts[from].state == HostState::Quarantined {
                    continue;
                }
                out.push(self.internal_submission(from, &[recipient], subject, line));
            } else {
                let domain = Scenario::partner_domain(partner);
                let sender = EmailAddress::new("contact", &domain).expect("valid address");
                let helo = format!("mail.{domain}");
                let ip = Scenario::partner_ip(partner);
                let message = EmailMessage::builder(&sender)
                    .to(&recipient)
                    .subject(subject)
                    .date(self.minute * 60)
                    .received(&helo, ip)
                    .body(&format!("{line}\nBest regards\n"))
                    .build()
                    .expect("partner mail has a recipient");
                out.push(Submission {
                    message: Arc::new(message),
                    client_ip: ip,
                    helo,
                    kind: MailKind::Legit,
                    retries: 1,
                });
            }
        }
        out
    }

    /// Advances one minute and returns its metrics row.
    pub fn step(&mut self) -> &TickMetrics {
        let minute = self.minute;
        let run = self.scenario.run.clone();
        let mut m = TickMetrics {
            minute,
            ..TickMetrics::default()
        };
        let queue_before = self.queue.len() as u64;

        if run.rename_groups_at == Some(minute) {
            self.rename_group_ids();
        }
        if run.quarantine_infected_at == Some(minute) {
            self.quarantine_all_infected();
        }

        let mut submissions = std::mem::take(&mut self.outbox);
        if run.seed_spam_at == Some(minute) {
            submissions.push(self.seed_submission());
        }
        submissions.extend(self.background_arrivals());
        let mut traffic = MinuteTraffic::default();
        if self.status == ServerStatus::Down {
            // Refused at connect time, so the mail itself never materializes.
            let emitters: Vec<usize> = self.worm_emitters(minute).collect();
            for i in emitters {
                let n = self.worm_target_count(i) as u64;
                m.arrivals += n;
                m.refused += n;
                traffic.arrivals += n;
                *traffic.senders.entry(self.hosts[i].owner.clone()).or_default() += n;
            }
        } else {
            submissions.extend(self.worm_tick(minute));
        }
        let mut units: Vec<Unit> = self.retries.remove(&minute).unwrap_or_default();
        for s in submissions {
            for r in &s.message.envelope_recipients {
                units.push(Unit {
                    message: Arc::clone(&s.message),
                    recipient: r.clone(),
                    client_ip: s.client_ip,
                    helo: s.helo.clone(),
                    kind: s.kind,
                    retries: s.retries,
                });
            }
        }

        for u in units {
            m.arrivals += 1;
            traffic.arrivals += 1;
            *traffic.senders.entry(u.message.envelope_sender.clone()).or_default() += 1;
            if self.status == ServerStatus::Down {
                m.refused += 1;
            } else if self.directory.resolve(&u.recipient).is_none() {
                m.rejected_recipient += 1;
            } else {
                self.queue.push_back(u);
            }
        }

        let capacity = self.scenario.server.capacity_per_minute;
        let mut processed = 0;
        while processed < capacity {
            let Some(u) = self.queue.pop_front() else { break };
            processed += 1;
            self.deliver(u, &mut m);
        }

        let q = self.queue.len() as u64;
        self.status = if q > self.scenario.server.outage_threshold || (self.status == ServerStatus::Down && q > 0) {
            ServerStatus::Down
        } else if q > 0 {
            ServerStatus::Degraded
        } else {
            ServerStatus::Up
        };

        self.traffic.push(traffic);
        self.monitor(&mut m);

        m.queue = q;
        m.queue_change = q as i64 - queue_before as i64;
        m.infected = self.infected_count() as u64;
        m.status = self.status;
        self.timeline.rows.push(m);
        self.minute += 1;
        self.timeline.rows.last().expect("row just pushed")
    }

    fn deliver(&mut self, u: Unit, m: &mut TickMetrics) {
        let (mailboxes, is_group): (Vec<usize>, bool) = match self.directory.resolve(&u.recipient) {
            None => {
                m.rejected_recipient += 1;
                return;
            }
            Some(Resolved::Individual(i)) => (vec![i], false),
            Some(Resolved::Group(g)) => (g.member_ids.clone(), true),
        };
        let message = u.message.with_recipients(vec![u.recipient.clone()]);
        let ctx = ConnectionContext {
            client_ip: u.client_ip,
            helo_hostname: u.helo.clone(),
            mail_from_domain: message.envelope_sender.domain().to_string(),
            timestamp: self.minute * 60,
        };
        self.seq += 1;
        let id = format!("sim-{}-{}", self.minute, self.seq);
        let (verdict, _) = self.pipeline.process(&id, &ctx, &message, &self.provider);
        match verdict.disposition {
            Disposition::Accept => {
                m.delivered += 1;
                if u.kind.is_spam() {
                    m.spam_units_delivered += 1;
                    if is_group && u.kind == MailKind::Worm {
                        m.worm_group_deliveries += 1;
                    }
                } else if is_group {
                    m.legit_group_deliveries += 1;
                }
                if u.kind == MailKind::Legit && u.client_ip == LOCAL_MTA_IP {
                    self.pipeline.learn(&message, Label::Ham);
                }
                for i in mailboxes {
                    m.inbox += 1;
                    if u.kind.is_spam() {
                        m.spam_inbox += 1;
                        self.react(i, &message);
                    }
                }
            }
            Disposition::RejectConnection | Disposition::RejectMessage => match verdict.stage {
                Stage::Dnsbl => m.rejected_dnsbl += 1,
                Stage::Rdns => m.rejected_rdns += 1,
                Stage::Spf => m.rejected_spf += 1,
                Stage::Content => m.rejected_content += 1,
                Stage::Surbl => m.rejected_surbl += 1,
                other => unreachable!("stage {other} never rejects"),
            },
            Disposition::TempFail => {
                m.tempfailed += 1;
                if u.retries > 0 {
                    let retry = Unit {
                        retries: u.retries - 1,
                        ..u
                    };
                    self.retries.entry(self.minute + RETRY_DELAY).or_default().push(retry);
                }
            }
            Disposition::Quarantine => m.trapped += 1,
        }
    }

    /// First exposure of a clean host to the campaign decides its reaction.
    fn react(&mut self, i: usize, message: &EmailMessage) {
        if self.hosts[i].state != HostState::Clean || !self.reacted.insert(i) {
            return;
        }
        let mut rng = keyed_rng(&[self.scenario.run.seed, STREAM_BEHAVIOR, i as u64, WORM_CAMPAIGN]);
        match user_behavior(&self.scenario.users, &mut rng) {
            Reaction::Execute => self.infect(i),
            Reaction::Forward => {
                let owner = self.hosts[i].owner.clone();
                let groups = self.directory.groups_of(&owner);
                let Some(target) = groups.last().cloned() else { return };
                let helo = format!("mail.{}", self.directory.local_domain());
                let mut builder = EmailMessage::builder(&owner)
                    .to(&target)
                    .subject(&format!("Fw: {}", message.subject))
                    .date(self.minute * 60)
                    .received(&helo, LOCAL_MTA_IP)
                    .signature(&format!("{}, {}", owner.local(), self.directory.local_domain()))
                    .body(&format!("FYI\n\n{}", message.body));
                for a in &message.attachments {
                    builder = builder.attachment(&a.filename, a.size_bytes);
                }
                let fwd = builder.build().expect("forward has a recipient");
                self.outbox.push(Submission {
                    message: Arc::new(fwd),
                    client_ip: LOCAL_MTA_IP,
                    helo,
                    kind: MailKind::Forward,
                    retries: 1,
                });
            }
            Reaction::Report => {
                self.pipeline.learn(message, Label::Spam);
            }
            Reaction::Ignore => {}
        }
    }

    fn monitor(&mut self, m: &mut TickMetrics) {
        let server = self.scenario.server;
        let now = self.traffic.len() as u64;
        if now <= server.warmup {
            return;
        }
        let warm = &self.traffic[..server.warmup as usize];
        let baseline = if warm.is_empty() {
            0.0
        } else {
            warm.iter().map(|t| t.arrivals as f64).sum::<f64>() / warm.len() as f64
        };
        let start = self.traffic.len().saturating_sub(server.anomaly_window as usize);
        let alert = detect_anomaly(&self.traffic[start..], baseline, server.anomaly_factor);
        match alert {
            Some(a) => {
                m.alerts = 1;
                if !self.alert_active {
                    self.alert_active = true;
                    if self.scenario.run.auto_mitigate {
                        self.mitigate(&a);
                    }
                    self.timeline.alerts.push((self.minute, a));
                }
            }
            None => self.alert_active = false,
        }
    }

    fn mitigate(&mut self, alert: &Alert) {
        if !self.timeline.events.iter().any(|e| e.contains("renamed")) {
            self.rename_group_ids();
        }
        for (sender, _) in &alert.top_talkers {
            let infected = self
                .directory
                .index_of(sender)
                .is_some_and(|i| self.hosts[i].state == HostState::Infected);
            if infected {
                self.quarantine_host(sender);
            }
        }
    }
}

/// Runs a scenario from start to finish.
pub fn run(scenario: Scenario) -> Result<MetricsTimeline, ScenarioError> {
    Ok(Simulation::new(scenario)?.run_to_end())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet(mut s: Scenario) -> Scenario {
        s.run.background_per_user_per_day = 0.0;
        s
    }

    #[test]
    fn zero_duration_is_empty() {
        let mut s = Scenario::undefended();
        s.run.duration = 0;
        let t = run(s).unwrap();
        assert!(t.rows.is_empty());
        assert_eq!(t.to_csv(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn open_server_delivers_seed_to_every_group() {
        let mut s = quiet(Scenario::undefended());
        s.users.execution_probability = 0.0;
        s.users.forward_probability = 0.0;
        s.run.seed_spam_at = Some(0);
        s.run.duration = 1;
        let t = run(s).unwrap();
        assert_eq!(t.rows[0].arrivals, 20);
        assert_eq!(t.rows[0].delivered, 20);
        assert_eq!(t.rows[0].inbox, 400);
        assert_eq!(t.summary.total_infections, 0);
    }

    #[test]
    fn certain_execution_infects_every_recipient() {
        let mut s = quiet(Scenario::undefended());
        s.users.execution_probability = 1.0;
        s.run.seed_spam_at = Some(0);
        s.run.duration = 1;
        let mut sim = Simulation::new(s).unwrap();
        sim.step();
        assert_eq!(sim.infected_count(), 200);
    }

    #[test]
    fn seed_mail_profile() {
        let sim = Simulation::new(Scenario::undefended()).unwrap();
        let seed = sim.seed_submission();
        let a = &seed.message.attachments[0];
        assert!((143_360..=184_320).contains(&a.size_bytes));
        assert_eq!(seed.message.envelope_sender.domain(), "abc.com");
        assert!(!seed.message.has_header("X-Signature"));
        assert_eq!(seed.message.envelope_recipients.len(), 20);
    }

    #[test]
    fn one_infected_host_sends_twenty_units_per_minute() {
        let mut s = quiet(Scenario::undefended());
        s.users.execution_probability = 0.0;
        s.users.forward_probability = 0.0;
        s.run.seed_spam_at = None;
        let mut sim = Simulation::new(s).unwrap();
        let owner = sim.directory().individuals()[0].clone();
        sim.infect_host(&owner);
        assert_eq!(sim.worm_tick(0).len(), 0);
        sim.step();
        let row = sim.step().clone();
        assert_eq!(row.arrivals, 20);
        sim.quarantine_host(&owner);
        assert_eq!(sim.step().arrivals, 0);
    }

    #[test]
    fn worm_queue_arithmetic() {
        let mut s = quiet(Scenario::undefended());
        s.users.execution_probability = 0.0;
        s.users.forward_probability = 0.0;
        s.run.seed_spam_at = None;
        s.server.outage_threshold = u64::MAX;
        s.run.duration = 61;
        let mut sim = Simulation::new(s).unwrap();
        for i in 0..5 {
            let o = sim.directory().individuals()[i].clone();
            sim.infect_host(&o);
        }
        let t = sim.run_to_end();
        let arrivals: u64 = t.rows.iter().map(|r| r.arrivals).sum();
        assert_eq!(arrivals, 5 * 60 * 20);
        assert_eq!(t.rows.last().unwrap().queue, 5 * 60 * 20 - 60 * 50);
    }

    #[test]
    fn partner_mail_is_greylisted_then_accepted() {
        let mut s = quiet(Scenario::defended());
        s.run.seed_spam_at = None;
        s.run.duration = 20;
        let mut sim = Simulation::new(s).unwrap();
        let sender = EmailAddress::new("contact", "partner3.example").unwrap();
        let rcpt = sim.directory().individuals()[7].clone();
        let msg = EmailMessage::builder(&sender).to(&rcpt).subject("hello").body("hi").build().unwrap();
        sim.submit(Submission {
            message: Arc::new(msg),
            client_ip: Scenario::partner_ip(3),
            helo: "mail.partner3.example".into(),
            kind: MailKind::Legit,
            retries: 1,
        });
        let t = sim.run_to_end();
        assert_eq!(t.rows[0].tempfailed, 1);
        assert_eq!(t.rows[RETRY_DELAY as usize].delivered, 1);
    }
}
