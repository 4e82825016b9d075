use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::message::EmailAddress;

pub const CSV_HEADER: &str = "minute,arrivals,delivered,rejected_dnsbl,rejected_rdns,rejected_spf,rejected_content,rejected_surbl,rejected_recipient,refused,tempfailed,inbox,spam_inbox,alerts,trapped,queue,infected,status";

/// Floor applied to the anomaly baseline so a near-silent warm-up does not
/// make ordinary bursts look like attacks.
pub const MIN_BASELINE: f64 = 1.0;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum ServerStatus {
    #[default]
    Up,
    Degraded,
    Down,
}

impl ServerStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ServerStatus::Up => "up",
            ServerStatus::Degraded => "degraded",
            ServerStatus::Down => "down",
        }
    }
}

/// Counts for one simulated minute. Unit counts are (message, recipient)
/// pairs; `inbox` and `spam_inbox` count mailbox deliveries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TickMetrics {
    pub minute: u64,
    pub arrivals: u64,
    pub delivered: u64,
    pub rejected_dnsbl: u64,
    pub rejected_rdns: u64,
    pub rejected_spf: u64,
    pub rejected_content: u64,
    pub rejected_surbl: u64,
    pub rejected_recipient: u64,
    pub refused: u64,
    pub tempfailed: u64,
    pub inbox: u64,
    pub spam_inbox: u64,
    pub alerts: u64,
    pub trapped: u64,
    pub queue: u64,
    pub infected: u64,
    pub status: ServerStatus,
    pub queue_change: i64,
    pub spam_units_delivered: u64,
    pub worm_group_deliveries: u64,
    pub legit_group_deliveries: u64,
}

impl TickMetrics {
    pub fn rejections(&self) -> u64 {
        self.rejected_dnsbl + self.rejected_rdns + self.rejected_spf + self.rejected_content + self.rejected_surbl
    }

    /// Every arriving unit is delivered, rejected, refused, deferred,
    /// trapped or still queued.
    pub fn conserves(&self) -> bool {
        let out = self.delivered + self.rejections() + self.rejected_recipient + self.refused + self.tempfailed + self.trapped;
        self.arrivals as i64 == out as i64 + self.queue_change
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.minute,
            self.arrivals,
            self.delivered,
            self.rejected_dnsbl,
            self.rejected_rdns,
            self.rejected_spf,
            self.rejected_content,
            self.rejected_surbl,
            self.rejected_recipient,
            self.refused,
            self.tempfailed,
            self.inbox,
            self.spam_inbox,
            self.alerts,
            self.trapped,
            self.queue,
            self.infected,
            self.status.as_str()
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub minutes: u64,
    /// First minute the server was down.
    pub time_to_outage: Option<u64>,
    pub total_infections: usize,
    pub spam_delivered: u64,
    pub alerts: usize,
    pub peak_queue: u64,
}

impl RunSummary {
    pub fn to_text(&self) -> String {
        let outage = self.time_to_outage.map_or("none".to_string(), |m| format!("minute {m}"));
        format!(
            "minutes simulated: {}\ntime to outage: {}\ntotal infections: {}\nspam delivered to inboxes: {}\nanomaly alerts: {}\npeak queue: {}\n",
            self.minutes, outage, self.total_infections, self.spam_delivered, self.alerts, self.peak_queue
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alert {
    /// Mean arrivals per minute over the window.
    pub rate: f64,
    pub baseline: f64,
    /// Busiest senders in the window, most active first.
    pub top_talkers: Vec<(EmailAddress, u64)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsTimeline {
    pub rows: Vec<TickMetrics>,
    pub alerts: Vec<(u64, Alert)>,
    pub events: Vec<String>,
    pub summary: RunSummary,
}

impl MetricsTimeline {
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }

    pub fn summary_text(&self) -> String {
        let mut s = self.summary.to_text();
        for (minute, a) in &self.alerts {
            let talkers: Vec<String> = a.top_talkers.iter().take(3).map(|(t, n)| format!("{t}={n}")).collect();
            let _ = writeln!(
                s,
                "alert at minute {minute}: rate {:.1}/min vs baseline {:.2}/min; top talkers {}",
                a.rate,
                a.baseline,
                talkers.join(" ")
            );
        }
        for e in &self.events {
            let _ = writeln!(s, "{e}");
        }
        s
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MinuteTraffic {
    pub arrivals: u64,
    pub senders: BTreeMap<EmailAddress, u64>,
}

/// Alerts when the mean arrival rate over `window` exceeds `factor` times
/// the baseline (floored at [`MIN_BASELINE`]).
pub fn detect_anomaly(window: &[MinuteTraffic], baseline: f64, factor: f64) -> Option<Alert> {
    if window.is_empty() {
        return None;
    }
    let rate = window.iter().map(|m| m.arrivals as f64).sum::<f64>() / window.len() as f64;
    if rate <= factor * baseline.max(MIN_BASELINE) {
        return None;
    }
    let mut totals: BTreeMap<&EmailAddress, u64> = BTreeMap::new();
    for m in window {
        for (s, n) in &m.senders {
            *totals.entry(s).or_default() += n;
        }
    }
    let mut top: Vec<(EmailAddress, u64)> = totals.into_iter().map(|(s, n)| (s.clone(), n)).collect();
    top.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    top.truncate(10);
    Some(Alert {
        rate,
        baseline,
        top_talkers: top,
    })
}
