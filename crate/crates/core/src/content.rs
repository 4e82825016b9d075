//! Post-DATA content rules and organisational mail policies.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::message::{AttachmentMeta, EmailAddress, EmailMessage};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RuleError {
    #[error("invalid extension pattern `{0}`")]
    BadPattern(String),
    #[error("allowlist mode needs at least one allowed sender")]
    EmptyAllowlist,
    #[error("max attachment size must be positive")]
    ZeroAttachmentCap,
    #[error("code word must not be empty")]
    EmptyCodeWord,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Any,
    Literal(String),
}

/// A dot-separated pattern over `basename.ext1.ext2...`.
///
/// The first segment matches the base name. In extension positions a `*`
/// stands for one or more extensions and a literal for exactly one, so
/// `*.exe` matches only single-extension `.exe` files while `*.*.exe` needs
/// at least two extensions ending in `exe`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtensionPattern {
    text: String,
    base: Segment,
    extensions: Vec<Segment>,
}

impl ExtensionPattern {
    pub fn matches(&self, attachment: &AttachmentMeta) -> bool {
        let segments = attachment.segments();
        let (base, exts) = segments.split_first().expect("segments always has a base");
        let base_ok = match &self.base {
            Segment::Any => true,
            Segment::Literal(l) => l == base,
        };
        base_ok && match_extensions(&self.extensions, exts)
    }
}

fn match_extensions(pattern: &[Segment], exts: &[String]) -> bool {
    match pattern.split_first() {
        None => exts.is_empty(),
        Some((Segment::Literal(l), rest)) => exts.first() == Some(l) && match_extensions(rest, &exts[1..]),
        Some((Segment::Any, rest)) => (1..=exts.len()).any(|n| match_extensions(rest, &exts[n..])),
    }
}

impl FromStr for ExtensionPattern {
    type Err = RuleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let text = s.trim().to_lowercase();
        let mut segments = text.split('.').map(|seg| match seg {
            "*" => Ok(Segment::Any),
            "" => Err(RuleError::BadPattern(s.to_string())),
            lit if lit.contains('*') => Err(RuleError::BadPattern(s.to_string())),
            lit => Ok(Segment::Literal(lit.to_string())),
        });
        let base = segments.next().ok_or_else(|| RuleError::BadPattern(s.to_string()))??;
        let extensions = segments.collect::<Result<Vec<_>, _>>()?;
        Ok(Self { text, base, extensions })
    }
}

impl fmt::Display for ExtensionPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContentRules {
    pub blocked_subject_terms: Vec<String>,
    pub blocked_body_terms: Vec<String>,
    pub blocked_senders: Vec<EmailAddress>,
    pub blocked_domains: BTreeSet<String>,
    pub allowlist_mode: bool,
    pub allowed_senders: Vec<EmailAddress>,
    pub max_attachment_bytes: Option<u64>,
    pub blocked_extension_patterns: Vec<ExtensionPattern>,
}

impl ContentRules {
    pub fn validate(&self) -> Result<(), RuleError> {
        if self.allowlist_mode && self.allowed_senders.is_empty() {
            return Err(RuleError::EmptyAllowlist);
        }
        if self.max_attachment_bytes == Some(0) {
            return Err(RuleError::ZeroAttachmentCap);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermLocation {
    Subject,
    Body,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContentRejection {
    Keyword { term: String, location: TermLocation },
    BlockedSender,
    BlockedDomain,
    NotAllowlisted,
    AttachmentSize { filename: String },
    AttachmentExtension { filename: String, pattern: String },
}

impl ContentRejection {
    /// Short machine-friendly tag.
    pub fn kind(&self) -> &'static str {
        match self {
            ContentRejection::Keyword { .. } => "keyword",
            ContentRejection::BlockedSender => "blocked_sender",
            ContentRejection::BlockedDomain => "blocked_domain",
            ContentRejection::NotAllowlisted => "not_allowlisted",
            ContentRejection::AttachmentSize { .. } => "size",
            ContentRejection::AttachmentExtension { .. } => "extension",
        }
    }
}

impl fmt::Display for ContentRejection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContentRejection::Keyword { term, location } => {
                let loc = match location {
                    TermLocation::Subject => "subject",
                    TermLocation::Body => "body",
                };
                write!(f, "keyword term=\"{term}\" in={loc}")
            }
            ContentRejection::AttachmentSize { filename } => write!(f, "size file={filename}"),
            ContentRejection::AttachmentExtension { filename, pattern } => {
                write!(f, "extension file={filename} pattern={pattern}")
            }
            other => f.write_str(other.kind()),
        }
    }
}

/// Case-insensitive substring match; subject terms first, then body terms.
pub fn keyword_filter(message: &EmailMessage, rules: &ContentRules) -> Option<ContentRejection> {
    let subject = message.subject.to_lowercase();
    let body = message.body.to_lowercase();
    let scan = |terms: &[String], text: &str, location| {
        terms
            .iter()
            .map(|t| t.trim())
            .filter(|t| !t.is_empty())
            .find(|t| text.contains(&t.to_lowercase()))
            .map(|t| ContentRejection::Keyword {
                term: t.to_string(),
                location,
            })
    };
    scan(&rules.blocked_subject_terms, &subject, TermLocation::Subject)
        .or_else(|| scan(&rules.blocked_body_terms, &body, TermLocation::Body))
}

pub fn sender_filter(message: &EmailMessage, rules: &ContentRules) -> Option<ContentRejection> {
    let sender = &message.envelope_sender;
    if rules.blocked_senders.iter().any(|b| b.matches(sender)) {
        return Some(ContentRejection::BlockedSender);
    }
    if rules
        .blocked_domains
        .iter()
        .any(|d| d.eq_ignore_ascii_case(sender.domain()))
    {
        return Some(ContentRejection::BlockedDomain);
    }
    if rules.allowlist_mode && !rules.allowed_senders.iter().any(|a| a.matches(sender)) {
        return Some(ContentRejection::NotAllowlisted);
    }
    None
}

/// Extension patterns are checked before the size cap so that a disguised
/// executable is reported as such even when it is also oversized.
pub fn attachment_filter(message: &EmailMessage, rules: &ContentRules) -> Option<ContentRejection> {
    for a in &message.attachments {
        if let Some(p) = rules.blocked_extension_patterns.iter().find(|p| p.matches(a)) {
            return Some(ContentRejection::AttachmentExtension {
                filename: a.filename.clone(),
                pattern: p.to_string(),
            });
        }
    }
    let cap = rules.max_attachment_bytes?;
    message
        .attachments
        .iter()
        .find(|a| a.size_bytes > cap)
        .map(|a| ContentRejection::AttachmentSize {
            filename: a.filename.clone(),
        })
}

/// Runs sender, attachment and keyword rules in that order.
pub fn content_check(message: &EmailMessage, rules: &ContentRules) -> Option<ContentRejection> {
    sender_filter(message, rules)
        .or_else(|| attachment_filter(message, rules))
        .or_else(|| keyword_filter(message, rules))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyRules {
    pub require_signature: bool,
    pub code_word: Option<String>,
    pub flagged_display_names: Vec<String>,
    /// The organisation's own domain. When set, the signature and code-word
    /// rules apply only to mail claiming to come from it, and display-name
    /// impersonation is only flagged for it.
    pub local_domain: Option<String>,
}

impl PolicyRules {
    pub fn validate(&self) -> Result<(), RuleError> {
        if matches!(&self.code_word, Some(w) if w.trim().is_empty()) {
            return Err(RuleError::EmptyCodeWord);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyViolation {
    MissingSignature,
    MissingCodeWord,
    ImpersonatedDisplayName,
}

impl PolicyViolation {
    pub fn as_str(self) -> &'static str {
        match self {
            PolicyViolation::MissingSignature => "missing_signature",
            PolicyViolation::MissingCodeWord => "missing_code_word",
            PolicyViolation::ImpersonatedDisplayName => "impersonated_display_name",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PolicyReport {
    pub violations: Vec<PolicyViolation>,
}

impl PolicyReport {
    pub fn score(&self) -> usize {
        self.violations.len()
    }

    pub fn is_suspicious(&self) -> bool {
        self.score() >= 1
    }
}

/// Counts violated policies; one point each.
pub fn policy_check(message: &EmailMessage, rules: &PolicyRules) -> PolicyReport {
    let mut violations = Vec::new();
    let local = rules
        .local_domain
        .as_deref()
        .map_or(true, |d| d.eq_ignore_ascii_case(message.envelope_sender.domain()));

    if rules.require_signature && local && !message.has_header("X-Signature") {
        violations.push(PolicyViolation::MissingSignature);
    }
    if let Some(word) = &rules.code_word {
        if local && !message.body.to_lowercase().contains(&word.to_lowercase()) {
            violations.push(PolicyViolation::MissingCodeWord);
        }
    }
    if rules.local_domain.is_some() && local {
        let from = message.header("From").unwrap_or("").to_lowercase();
        let flagged = rules
            .flagged_display_names
            .iter()
            .map(|n| n.trim().to_lowercase())
            .any(|n| !n.is_empty() && from.contains(&n));
        if flagged {
            violations.push(PolicyViolation::ImpersonatedDisplayName);
        }
    }
    PolicyReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn addr(s: &str) -> EmailAddress {
        s.parse().unwrap()
    }

    fn base() -> crate::message::MessageBuilder {
        EmailMessage::builder(&addr("someone@ext.com")).to(&addr("user@abc.com"))
    }

    fn pat(s: &str) -> ExtensionPattern {
        s.parse().unwrap()
    }

    #[test]
    fn keyword_rules() {
        let rules = ContentRules {
            blocked_subject_terms: vec!["server report".into()],
            blocked_body_terms: vec!["viagra".into(), "".into()],
            ..ContentRules::default()
        };
        let m = base().subject("Server report").body("hi").build().unwrap();
        assert_eq!(
            keyword_filter(&m, &rules),
            Some(ContentRejection::Keyword {
                term: "server report".into(),
                location: TermLocation::Subject
            })
        );
        let m = base().subject("hello").body("cheap ViAgRa here").build().unwrap();
        assert_eq!(keyword_filter(&m, &rules).unwrap().kind(), "keyword");
        let m = base().subject("lunch").body("see you at noon").build().unwrap();
        assert_eq!(keyword_filter(&m, &rules), None);
    }

    #[test]
    fn sender_rules() {
        let mut rules = ContentRules::default();
        rules.blocked_domains.insert("bad.com".into());
        let m = EmailMessage::builder(&addr("spammer@BAD.com"))
            .to(&addr("u@abc.com"))
            .build()
            .unwrap();
        assert_eq!(sender_filter(&m, &rules), Some(ContentRejection::BlockedDomain));

        let rules = ContentRules {
            blocked_senders: vec![addr("Boss@ext.com")],
            ..ContentRules::default()
        };
        let m = EmailMessage::builder(&addr("boss@ext.com")).to(&addr("u@abc.com")).build().unwrap();
        assert_eq!(sender_filter(&m, &rules), Some(ContentRejection::BlockedSender));

        let rules = ContentRules {
            allowlist_mode: true,
            allowed_senders: vec![addr("a@x.com")],
            ..ContentRules::default()
        };
        let m = EmailMessage::builder(&addr("b@y.com")).to(&addr("u@abc.com")).build().unwrap();
        assert_eq!(sender_filter(&m, &rules), Some(ContentRejection::NotAllowlisted));
        let m = EmailMessage::builder(&addr("a@x.com")).to(&addr("u@abc.com")).build().unwrap();
        assert_eq!(sender_filter(&m, &rules), None);
        assert_eq!(sender_filter(&m, &ContentRules::default()), None);
    }

    #[test]
    fn extension_patterns() {
        let single = pat("*.exe");
        let double = pat("*.*.exe");
        let a = |f: &str| AttachmentMeta::new(f, 1);
        assert!(single.matches(&a("update.exe")));
        assert!(!single.matches(&a("update.doc.exe")));
        assert!(double.matches(&a("update.doc.exe")));
        assert!(double.matches(&a("Update_KB2546_x86.BAK.exe")));
        assert!(double.matches(&a("a.b.c.EXE")));
        assert!(!double.matches(&a("update.exe")));
        assert!(!double.matches(&a("update.exe.txt")));
        assert!(pat("setup.*").matches(&a("SETUP.msi")));
        assert!(!pat("setup.*").matches(&a("setup")));
        assert!(pat("*").matches(&a("README")));
        assert!("*.ex*".parse::<ExtensionPattern>().is_err());
        assert!("*..exe".parse::<ExtensionPattern>().is_err());
    }

    #[test]
    fn attachment_rules() {
        let rules = ContentRules {
            max_attachment_bytes: Some(100 * 1024),
            blocked_extension_patterns: vec![pat("*.exe"), pat("*.*.exe")],
            ..ContentRules::default()
        };
        let m = base().attachment("Update_KB2546_x86.BAK.exe", 143_360).build().unwrap();
        assert_eq!(attachment_filter(&m, &rules).unwrap().kind(), "extension");
        let m = base().attachment("photos.zip", 150 * 1024).build().unwrap();
        assert_eq!(attachment_filter(&m, &rules).unwrap().kind(), "size");
        let m = base().attachment("report.pdf", 50 * 1024).build().unwrap();
        assert_eq!(attachment_filter(&m, &rules), None);
        let m = base().attachment("anything.doc.exe", u64::MAX).build().unwrap();
        assert_eq!(attachment_filter(&m, &ContentRules::default()), None);
    }

    #[test]
    fn content_check_order_is_sender_attachment_keyword() {
        let mut rules = ContentRules {
            blocked_body_terms: vec!["update".into()],
            blocked_extension_patterns: vec![pat("*.*.exe")],
            ..ContentRules::default()
        };
        let m = base().body("please update").attachment("x.doc.exe", 10).build().unwrap();
        assert_eq!(content_check(&m, &rules).unwrap().kind(), "extension");
        rules.blocked_domains.insert("ext.com".into());
        assert_eq!(content_check(&m, &rules).unwrap().kind(), "blocked_domain");
    }

    #[test]
    fn policy_rules() {
        let rules = PolicyRules {
            require_signature: true,
            code_word: Some("In His Service".into()),
            flagged_display_names: vec!["network administrator".into()],
            local_domain: Some("abc.com".into()),
        };
        let forged = EmailMessage::builder(&addr("admin@abc.com"))
            .display_name("Network Administrator")
            .to(&addr("allstaff@abc.com"))
            .body("run the attached update\nregards")
            .build()
            .unwrap();
        let report = policy_check(&forged, &rules);
        assert_eq!(
            report.violations,
            vec![
                PolicyViolation::MissingSignature,
                PolicyViolation::MissingCodeWord,
                PolicyViolation::ImpersonatedDisplayName
            ]
        );
        assert_eq!(report.score(), 3);

        let genuine = EmailMessage::builder(&addr("jane@abc.com"))
            .to(&addr("allstaff@abc.com"))
            .signature("Jane, Accounts")
            .body("minutes attached\nIn His Service")
            .build()
            .unwrap();
        assert_eq!(policy_check(&genuine, &rules).score(), 0);

        // External mail is outside the signature and code-word policy.
        let external = base().body("hello").build().unwrap();
        assert_eq!(policy_check(&external, &rules).score(), 0);
        assert_eq!(policy_check(&forged, &PolicyRules::default()).score(), 0);
    }

    #[test]
    fn rule_validation() {
        let rules = ContentRules {
            allowlist_mode: true,
            ..ContentRules::default()
        };
        assert_eq!(rules.validate(), Err(RuleError::EmptyAllowlist));
        let rules = ContentRules {
            max_attachment_bytes: Some(0),
            ..ContentRules::default()
        };
        assert_eq!(rules.validate(), Err(RuleError::ZeroAttachmentCap));
        let policy = PolicyRules {
            code_word: Some(" ".into()),
            ..PolicyRules::default()
        };
        assert_eq!(policy.validate(), Err(RuleError::EmptyCodeWord));
    }
}
