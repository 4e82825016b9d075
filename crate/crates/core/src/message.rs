//! Message representation and the on-disk corpus format.
//!
//! A corpus message is a header block of `Name: value` lines, one blank line,
//! then the body. Attachments are declared metadata only
//! (`X-Attachment: name;size_bytes`), there is no MIME decoding.

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MessageError {
    #[error("invalid email address `{0}`")]
    InvalidAddress(String),
    #[error("line {line}: malformed header `{text}`")]
    MalformedHeader { line: usize, text: String },
    #[error("line {line}: malformed attachment declaration `{text}`")]
    MalformedAttachment { line: usize, text: String },
    #[error("line {line}: malformed Date header `{text}`")]
    MalformedDate { line: usize, text: String },
    #[error("missing required header `{0}`")]
    MissingHeader(&'static str),
    #[error("message has no envelope recipients")]
    NoRecipients,
    #[error("message is not valid UTF-8")]
    NotUtf8,
}

/// `local@domain`, domain lowercased.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EmailAddress {
    local: String,
    domain: String,
}

impl EmailAddress {
    pub fn new(local: &str, domain: &str) -> Result<Self, MessageError> {
        let bad = |s: &str| s.is_empty() || s.contains('@') || s.chars().any(char::is_whitespace);
        if bad(local) || bad(domain) {
            return Err(MessageError::InvalidAddress(format!("{local}@{domain}")));
        }
        Ok(Self {
            local: local.to_string(),
            domain: domain.to_ascii_lowercase(),
        })
    }

    pub fn local(&self) -> &str {
        &self.local
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    /// Case-insensitive comparison over the whole address.
    pub fn matches(&self, other: &EmailAddress) -> bool {
        self.domain == other.domain && self.local.eq_ignore_ascii_case(&other.local)
    }

    /// Extracts the address from a header value that may carry a display
    /// name, e.g. `Network Administrator <admin@abc.com>`.
    pub fn from_header_value(value: &str) -> Result<Self, MessageError> {
        let value = value.trim();
        let inner = match (value.rfind('<'), value.rfind('>')) {
            (Some(open), Some(close)) if open < close => &value[open + 1..close],
            _ => value,
        };
        inner.parse()
    }
}

impl FromStr for EmailAddress {
    type Err = MessageError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (local, domain) = s
            .split_once('@')
            .ok_or_else(|| MessageError::InvalidAddress(s.to_string()))?;
        Self::new(local, domain).map_err(|_| MessageError::InvalidAddress(s.to_string()))
    }
}

impl fmt::Display for EmailAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.local, self.domain)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttachmentMeta {
    pub filename: String,
    pub size_bytes: u64,
    pub declared_extensions: Vec<String>,
}

impl AttachmentMeta {
    pub fn new(filename: &str, size_bytes: u64) -> Self {
        Self {
            filename: filename.to_string(),
            size_bytes,
            declared_extensions: extension_chain(filename),
        }
    }

    /// Base name followed by the extension chain, all lowercase.
    pub fn segments(&self) -> Vec<String> {
        let base = self.filename.split('.').next().unwrap_or("").to_lowercase();
        std::iter::once(base)
            .chain(self.declared_extensions.iter().cloned())
            .collect()
    }

    fn header_value(&self) -> String {
        format!("{};{}", self.filename, self.size_bytes)
    }
}

/// Dot-separated suffix tokens after the base name, lowercased.
///
/// `update.doc.exe` gives `[doc, exe]`; a name without a dot gives `[]`.
pub fn extension_chain(filename: &str) -> Vec<String> {
    filename.split('.').skip(1).map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmailMessage {
    pub envelope_sender: EmailAddress,
    pub envelope_recipients: Vec<EmailAddress>,
    pub subject: String,
    /// Every header line in file order, including the recognized ones.
    pub headers: Vec<(String, String)>,
    pub body: String,
    pub attachments: Vec<AttachmentMeta>,
}

impl EmailMessage {
    pub fn builder(from: &EmailAddress) -> MessageBuilder {
        MessageBuilder::new(from)
    }

    /// First header with this name, compared case-insensitively.
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn has_header(&self, name: &str) -> bool {
        self.header(name).is_some()
    }

    /// `Date` header as seconds since epoch.
    pub fn date(&self) -> Option<u64> {
        self.header("Date").and_then(|v| v.trim().parse().ok())
    }

    /// Connection details recorded in the topmost
    /// `Received: from <helo> ([<ip>])` header.
    pub fn received_from(&self) -> Option<(String, Ipv4Addr)> {
        let value = self.header("Received")?;
        let rest = value.trim().strip_prefix("from ")?;
        let (helo, tail) = rest.split_once(' ')?;
        let open = tail.find('(')?;
        let close = tail[open..].find(')')? + open;
        let ip = tail[open + 1..close]
            .trim_matches(|c| c == '[' || c == ']')
            .parse()
            .ok()?;
        Some((helo.to_string(), ip))
    }

    /// Synthesizes the connection context a corpus message arrived with.
    /// Messages without a `Received` header come from `0.0.0.0` with HELO `unknown`.
    pub fn connection_context(&self) -> ConnectionContext {
        let (helo, ip) = self
            .received_from()
            .unwrap_or_else(|| ("unknown".to_string(), Ipv4Addr::UNSPECIFIED));
        ConnectionContext {
            client_ip: ip,
            helo_hostname: helo,
            mail_from_domain: self.envelope_sender.domain().to_string(),
            timestamp: self.date().unwrap_or(0),
        }
    }

    /// Renders the corpus file form.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (name, value) in &self.headers {
            out.push_str(name);
            out.push_str(": ");
            out.push_str(value);
            out.push('\n');
        }
        out.push('\n');
        out.push_str(&self.body);
        out
    }

    /// A copy with new envelope recipients; the `To` header is left as written.
    pub fn with_recipients(&self, recipients: Vec<EmailAddress>) -> Self {
        Self {
            envelope_recipients: recipients,
            ..self.clone()
        }
    }
}

/// Builds messages whose derived fields agree with their header list.
#[derive(Debug, Clone)]
pub struct MessageBuilder {
    from_value: String,
    sender: EmailAddress,
    to: Vec<EmailAddress>,
    subject: Option<String>,
    extra: Vec<(String, String)>,
    attachments: Vec<AttachmentMeta>,
    body: String,
}

impl MessageBuilder {
    pub fn new(from: &EmailAddress) -> Self {
        Self {
            from_value: from.to_string(),
            sender: from.clone(),
            to: Vec::new(),
            subject: None,
            extra: Vec::new(),
            attachments: Vec::new(),
            body: String::new(),
        }
    }

    pub fn display_name(mut self, name: &str) -> Self {
        self.from_value = format!("{} <{}>", name, self.sender);
        self
    }

    pub fn to(mut self, addr: &EmailAddress) -> Self {
        self.to.push(addr.clone());
        self
    }

    pub fn to_all<'a>(mut self, addrs: impl IntoIterator<Item = &'a EmailAddress>) -> Self {
        self.to.extend(addrs.into_iter().cloned());
        self
    }

    pub fn subject(mut self, subject: &str) -> Self {
        self.subject = Some(subject.trim().to_string());
        self
    }

    pub fn date(self, secs: u64) -> Self {
        self.header("Date", &secs.to_string())
    }

    pub fn received(self, helo: &str, ip: Ipv4Addr) -> Self {
        self.header("Received", &format!("from {helo} ([{ip}])"))
    }

    pub fn signature(self, text: &str) -> Self {
        self.header("X-Signature", text)
    }

    pub fn attachment(mut self, filename: &str, size_bytes: u64) -> Self {
        self.attachments.push(AttachmentMeta::new(filename, size_bytes));
        self
    }

    pub fn header(mut self, name: &str, value: &str) -> Self {
        self.extra.push((name.to_string(), value.trim().to_string()));
        self
    }

    pub fn body(mut self, body: &str) -> Self {
        self.body = body.to_string();
        self
    }

    pub fn build(self) -> Result<EmailMessage, MessageError> {
        if self.to.is_empty() {
            return Err(MessageError::NoRecipients);
        }
        let mut headers = vec![
            ("From".to_string(), self.from_value),
            (
                "To".to_string(),
                self.to.iter().map(ToString::to_string).collect::<Vec<_>>().join(", "),
            ),
        ];
        let subject = self.subject.unwrap_or_default();
        headers.push(("Subject".to_string(), subject.clone()));
        headers.extend(self.extra);
        for a in &self.attachments {
            headers.push(("X-Attachment".to_string(), a.header_value()));
        }
        Ok(EmailMessage {
            envelope_sender: self.sender,
            envelope_recipients: self.to,
            subject,
            headers,
            body: self.body,
            attachments: self.attachments,
        })
    }
}

/// Parses one corpus message file.
pub fn parse_message(raw: &[u8]) -> Result<EmailMessage, MessageError> {
    let text = std::str::from_utf8(raw).map_err(|_| MessageError::NotUtf8)?;

    let mut headers = Vec::new();
    let mut header_lines = Vec::new();
    let mut rest = text;
    let mut line_no = 0;
    let mut body = "";
    loop {
        if rest.is_empty() {
            break;
        }
        let (line, next) = match rest.find('\n') {
            Some(i) => (&rest[..i], &rest[i + 1..]),
            None => (rest, ""),
        };
        line_no += 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            body = next;
            break;
        }
        let (name, value) = line
            .split_once(':')
            .filter(|(n, _)| !n.trim().is_empty() && !n.contains(char::is_whitespace))
            .ok_or_else(|| MessageError::MalformedHeader {
                line: line_no,
                text: line.to_string(),
            })?;
        headers.push((name.to_string(), value.trim().to_string()));
        header_lines.push(line_no);
        rest = next;
    }

    let mut sender = None;
    let mut recipients = Vec::new();
    let mut saw_to = false;
    let mut subject = String::new();
    let mut attachments = Vec::new();
    for ((name, value), &line) in headers.iter().zip(&header_lines) {
        match name.to_ascii_lowercase().as_str() {
            "from" if sender.is_none() => sender = Some(EmailAddress::from_header_value(value)?),
            "to" => {
                saw_to = true;
                for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                    recipients.push(EmailAddress::from_header_value(part)?);
                }
            }
            "subject" => subject = value.clone(),
            "date" => {
                value.parse::<u64>().map_err(|_| MessageError::MalformedDate {
                    line,
                    text: value.clone(),
                })?;
            }
            "x-attachment" => {
                let malformed = || MessageError::MalformedAttachment {
                    line,
                    text: value.clone(),
                };
                let (name, size) = value.rsplit_once(';').ok_or_else(malformed)?;
                let size = size.trim().parse::<u64>().map_err(|_| malformed())?;
                if name.trim().is_empty() {
                    return Err(malformed());
                }
                attachments.push(AttachmentMeta::new(name.trim(), size));
            }
            _ => {}
        }
    }
    let envelope_sender = sender.ok_or(MessageError::MissingHeader("From"))?;
    if !saw_to {
        return Err(MessageError::MissingHeader("To"));
    }
    if recipients.is_empty() {
        return Err(MessageError::NoRecipients);
    }
    Ok(EmailMessage {
        envelope_sender,
        envelope_recipients: recipients,
        subject,
        headers,
        body: body.to_string(),
        attachments,
    })
}

/// Distinct hosts of `http://` and `https://` URLs in first-appearance order,
/// lowercased. Unparseable fragments are skipped.
pub fn extract_url_domains(body: &str) -> Vec<String> {
    let lower = body.to_lowercase();
    let mut out: Vec<String> = Vec::new();
    let mut pos = 0;
    while let Some(rel) = lower[pos..].find("http") {
        let start = pos + rel;
        let after = &lower[start..];
        let scheme_len = if after.starts_with("https://") {
            8
        } else if after.starts_with("http://") {
            7
        } else {
            pos = start + 4;
            continue;
        };
        let authority_start = start + scheme_len;
        let authority: &str = lower[authority_start..]
            .split(|c: char| {
                c.is_whitespace() || matches!(c, '/' | '?' | '#' | '"' | '\'' | '<' | '>' | '(' | ')' | '[' | ']' | ',')
            })
            .next()
            .unwrap_or("");
        pos = authority_start + authority.len();
        if let Some(host) = host_of(authority) {
            if !out.contains(&host) {
                out.push(host);
            }
        }
    }
    out
}

fn host_of(authority: &str) -> Option<String> {
    let host = authority.rsplit_once('@').map_or(authority, |(_, h)| h);
    let host = host.split(':').next().unwrap_or("");
    let host = host.trim_end_matches('.');
    if host.is_empty() {
        return None;
    }
    if let Ok(ip) = host.parse::<Ipv4Addr>() {
        return Some(ip.to_string());
    }
    let valid = host
        .split('.')
        .all(|label| !label.is_empty() && label.chars().all(|c| c.is_alphanumeric() || c == '-'));
    valid.then(|| host.to_string())
}

/// Identity of the sending server as seen at connection time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionContext {
    pub client_ip: Ipv4Addr,
    pub helo_hostname: String,
    pub mail_from_domain: String,
    /// Seconds since the scenario epoch.
    pub timestamp: u64,
}
