//! Token-table Bayesian classifier.
//!
//! The dictionary keeps per-token occurrence counts for spam and legitimate
//! mail plus the number of messages of each kind. A token's spam probability
//! is `s / (s + h)` where `s` and `h` are its per-message occurrence rates in
//! the two tables; message scores combine the most decisive tokens with the
//! product rule `Πp / (Πp + Π(1-p))`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use thiserror::Error;

use crate::message::EmailMessage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BayesError {
    #[error("token table has no {0} messages; probabilities are undefined")]
    EmptyTotals(&'static str),
    #[error("invalid bayes configuration: {0}")]
    InvalidConfig(String),
    #[error("token table line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    Spam,
    Ham,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Spam => "spam",
            Label::Ham => "ham",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "spam" => Ok(Label::Spam),
            "ham" => Ok(Label::Ham),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TokenCounts {
    pub spam: u64,
    pub ham: u64,
}

impl TokenCounts {
    pub fn total(&self) -> u64 {
        self.spam + self.ham
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BayesConfig {
    pub threshold: f64,
    pub dictionary_cap: usize,
    pub probability_floor: f64,
    pub probability_ceiling: f64,
    pub max_tokens_scored: usize,
}

impl Default for BayesConfig {
    fn default() -> Self {
        Self {
            threshold: 0.7,
            dictionary_cap: 50_000,
            probability_floor: 0.01,
            probability_ceiling: 0.99,
            max_tokens_scored: 15,
        }
    }
}

impl BayesConfig {
    pub fn validate(&self) -> Result<(), BayesError> {
        let (f, c) = (self.probability_floor, self.probability_ceiling);
        if !(0.0 < f && f < 0.5 && 0.5 < c && c < 1.0) {
            return Err(BayesError::InvalidConfig(format!(
                "need 0 < floor < 0.5 < ceiling < 1, got floor {f} ceiling {c}"
            )));
        }
        if !(0.5..=1.0).contains(&self.threshold) {
            return Err(BayesError::InvalidConfig(format!(
                "threshold {} outside [0.5, 1]",
                self.threshold
            )));
        }
        if self.max_tokens_scored == 0 {
            return Err(BayesError::InvalidConfig("max_tokens_scored must be positive".into()));
        }
        Ok(())
    }
}

/// The spam/legitimate dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTable {
    tokens: BTreeMap<String, TokenCounts>,
    pub spam_message_total: u64,
    pub ham_message_total: u64,
    pub spam_learning_enabled: bool,
    pub ham_learning_enabled: bool,
}

impl Default for TokenTable {
    fn default() -> Self {
        Self {
            tokens: BTreeMap::new(),
            spam_message_total: 0,
            ham_message_total: 0,
            spam_learning_enabled: true,
            ham_learning_enabled: true,
        }
    }
}

impl TokenTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_totals(spam_message_total: u64, ham_message_total: u64) -> Self {
        Self {
            spam_message_total,
            ham_message_total,
            ..Self::default()
        }
    }

    /// Sets raw counts for a token; a token with both counts zero is dropped.
    pub fn set_counts(&mut self, token: &str, spam: u64, ham: u64) {
        if spam == 0 && ham == 0 {
            self.tokens.remove(token);
        } else {
            self.tokens.insert(token.to_string(), TokenCounts { spam, ham });
        }
    }

    pub fn counts(&self, token: &str) -> TokenCounts {
        self.tokens.get(token).copied().unwrap_or_default()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.tokens.contains_key(token)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, TokenCounts)> {
        self.tokens.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn is_trained(&self) -> bool {
        self.spam_message_total > 0 && self.ham_message_total > 0
    }

    /// Adds the message's tokens to the labeled table. Returns `false` and
    /// leaves the table untouched when learning for that label is disabled.
    pub fn learn(&mut self, message: &EmailMessage, label: Label) -> bool {
        let enabled = match label {
            Label::Spam => self.spam_learning_enabled,
            Label::Ham => self.ham_learning_enabled,
        };
        if !enabled {
            return false;
        }
        let mut occurrences: BTreeMap<String, u64> = BTreeMap::new();
        for token in message_tokens(message) {
            *occurrences.entry(token).or_default() += 1;
        }
        for (token, n) in occurrences {
            let entry = self.tokens.entry(token).or_default();
            match label {
                Label::Spam => entry.spam += n,
                Label::Ham => entry.ham += n,
            }
        }
        match label {
            Label::Spam => self.spam_message_total += 1,
            Label::Ham => self.ham_message_total += 1,
        }
        true
    }

    /// Keeps the `cap` tokens with the highest combined count, ties broken
    /// lexicographically ascending.
    pub fn prune(&mut self, cap: usize) {
        if self.tokens.len() <= cap {
            return;
        }
        let mut ranked: Vec<(&String, u64)> = self.tokens.iter().map(|(k, v)| (k, v.total())).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let keep: BTreeSet<String> = ranked.into_iter().take(cap).map(|(k, _)| k.clone()).collect();
        self.tokens.retain(|k, _| keep.contains(k));
    }

    /// Text form: `totals <spam> <ham>` then `<token> <spam> <ham>` lines in
    /// lexicographic order.
    pub fn to_text(&self) -> String {
        let mut out = format!("totals {} {}\n", self.spam_message_total, self.ham_message_total);
        for (token, c) in &self.tokens {
            let _ = writeln!(out, "{} {} {}", token, c.spam, c.ham);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, BayesError> {
        let mut lines = text.lines().enumerate();
        let parse_err = |line: usize, reason: &str| BayesError::Parse {
            line: line + 1,
            reason: reason.to_string(),
        };
        let (i, first) = lines.next().ok_or_else(|| parse_err(0, "empty file"))?;
        let fields: Vec<&str> = first.split(' ').collect();
        let (spam_total, ham_total) = match fields.as_slice() {
            ["totals", s, h] => (
                s.parse().map_err(|_| parse_err(i, "bad spam total"))?,
                h.parse().map_err(|_| parse_err(i, "bad ham total"))?,
            ),
            _ => return Err(parse_err(i, "expected `totals <spam> <ham>`")),
        };
        let mut table = Self::with_totals(spam_total, ham_total);
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(' ').collect();
            let [token, s, h] = fields.as_slice() else {
                return Err(parse_err(i, "expected `<token> <spam> <ham>`"));
            };
            let s: u64 = s.parse().map_err(|_| parse_err(i, "bad spam count"))?;
            let h: u64 = h.parse().map_err(|_| parse_err(i, "bad ham count"))?;
            if s == 0 && h == 0 {
                return Err(parse_err(i, "token with zero counts"));
            }
            if table.tokens.insert(token.to_string(), TokenCounts { spam: s, ham: h }).is_some() {
                return Err(parse_err(i, "duplicate token"));
            }
        }
        Ok(table)
    }
}

/// Lowercased alphanumeric runs of at least two characters.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
}

/// Tokens of the subject followed by the body.
pub fn message_tokens(message: &EmailMessage) -> Vec<String> {
    tokenize(&message.subject).chain(tokenize(&message.body)).collect()
}

/// Spam probability of a single token.
///
/// Occurrence rates are capped at one per message, so a token that has
/// appeared more often than there are messages counts as present in all of
/// them. The result is clamped to `[floor, ceiling]`; a token never seen in
/// either table is neutral.
pub fn token_probability(token: &str, table: &TokenTable, config: &BayesConfig) -> Result<f64, BayesError> {
    if table.spam_message_total == 0 {
        return Err(BayesError::EmptyTotals("spam"));
    }
    if table.ham_message_total == 0 {
        return Err(BayesError::EmptyTotals("ham"));
    }
    let c = table.counts(token);
    let s = (c.spam as f64 / table.spam_message_total as f64).min(1.0);
    let h = (c.ham as f64 / table.ham_message_total as f64).min(1.0);
    if s + h == 0.0 {
        return Ok(0.5);
    }
    Ok((s / (s + h)).clamp(config.probability_floor, config.probability_ceiling))
}

/// Combines probabilities as `Πp / (Πp + Π(1-p))`, in log space.
pub fn combine(probabilities: &[f64]) -> f64 {
    if probabilities.is_empty() {
        return 0.5;
    }
    let (log_p, log_q) = probabilities
        .iter()
        .fold((0.0, 0.0), |(lp, lq), &p| (lp + p.ln(), lq + (1.0 - p).ln()));
    1.0 / (1.0 + (log_q - log_p).exp())
}

/// The tokens that decide a message score, most decisive first.
pub fn decisive_tokens(message: &EmailMessage, table: &TokenTable, config: &BayesConfig) -> Vec<(String, f64)> {
    if !table.is_trained() {
        return Vec::new();
    }
    let distinct: BTreeSet<String> = message_tokens(message).into_iter().collect();
    let mut scored: Vec<(String, f64)> = distinct
        .into_iter()
        .filter(|t| table.contains(t))
        .map(|t| {
            let p = token_probability(&t, table, config).unwrap_or(0.5);
            (t, p)
        })
        .collect();
    scored.sort_by(|a, b| {
        let da = (a.1 - 0.5).abs();
        let db = (b.1 - 0.5).abs();
        db.total_cmp(&da).then_with(|| a.0.cmp(&b.0))
    });
    scored.truncate(config.max_tokens_scored);
    scored
}

/// Message-level spam probability. An untrained table, or a message with no
/// known tokens, scores exactly 0.5.
pub fn score_message(message: &EmailMessage, table: &TokenTable, config: &BayesConfig) -> f64 {
    let probs: Vec<f64> = decisive_tokens(message, table, config)
        .into_iter()
        .map(|(_, p)| p)
        .collect();
    combine(&probs)
}

/// Spam iff the score is strictly above the threshold.
pub fn classify(score: f64, config: &BayesConfig) -> Label {
    if score > config.threshold {
        Label::Spam
    } else {
        Label::Ham
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::message::EmailAddress;

    fn msg(subject: &str, body: &str) -> EmailMessage {
        let a: EmailAddress = "a@x.com".parse().unwrap();
        let b: EmailAddress = "b@y.com".parse().unwrap();
        EmailMessage::builder(&a).to(&b).subject(subject).body(body).build().unwrap()
    }

    fn table_with(token: &str, spam: u64, spam_total: u64, ham: u64, ham_total: u64) -> TokenTable {
        let mut t = TokenTable::with_totals(spam_total, ham_total);
        t.set_counts(token, spam, ham);
        t
    }

    #[test]
    fn worked_viagra_example() {
        let t = table_with("viagra", 400, 3000, 5, 300);
        let p = token_probability("viagra", &t, &BayesConfig::default()).unwrap();
        // (400/3000) / (5/300 + 400/3000) = 0.1333.. / 0.15
        assert!((p - 0.888_888_9).abs() < 1e-4, "{p}");
    }

    #[test]
    fn symmetric_rates_are_neutral() {
        let t = table_with("x", 10, 100, 10, 100);
        assert_eq!(token_probability("x", &t, &BayesConfig::default()).unwrap(), 0.5);
    }

    #[test]
    fn one_sided_token_is_clamped() {
        let t = table_with("x", 50, 1000, 0, 500);
        assert_eq!(token_probability("x", &t, &BayesConfig::default()).unwrap(), 0.99);
        let t = table_with("x", 0, 1000, 3, 500);
        assert_eq!(token_probability("x", &t, &BayesConfig::default()).unwrap(), 0.01);
    }

    #[test]
    fn unknown_token_is_neutral_and_zero_totals_error() {
        let t = TokenTable::with_totals(5, 5);
        assert_eq!(token_probability("nope", &t, &BayesConfig::default()).unwrap(), 0.5);
        let t = TokenTable::with_totals(0, 5);
        assert_eq!(
            token_probability("x", &t, &BayesConfig::default()),
            Err(BayesError::EmptyTotals("spam"))
        );
    }

    #[test]
    fn product_rule() {
        // 0.9 * 0.9 * 0.1 = 0.081; 0.1 * 0.1 * 0.9 = 0.009
        assert!((combine(&[0.9, 0.9, 0.1]) - 0.9).abs() < 1e-12);
        assert_eq!(combine(&[0.5, 0.5, 0.5]), 0.5);
        assert_eq!(combine(&[]), 0.5);
    }

    #[test]
    fn scoring_neutral_and_empty_messages() {
        let mut t = TokenTable::with_totals(10, 10);
        t.set_counts("alpha", 3, 3);
        t.set_counts("beta", 5, 5);
        let cfg = BayesConfig::default();
        assert_eq!(score_message(&msg("alpha", "beta alpha"), &t, &cfg), 0.5);
        assert_eq!(score_message(&msg("", ""), &t, &cfg), 0.5);
        assert_eq!(score_message(&msg("unknown", "words only"), &t, &cfg), 0.5);
    }

    #[test]
    fn scoring_uses_most_extreme_tokens() {
        let mut t = TokenTable::with_totals(100, 100);
        t.set_counts("aa", 90, 10); // 0.9
        t.set_counts("bb", 90, 10); // 0.9
        t.set_counts("cc", 10, 90); // 0.1
        t.set_counts("dd", 55, 45); // 0.55, least decisive
        let cfg = BayesConfig {
            max_tokens_scored: 3,
            ..BayesConfig::default()
        };
        let s = score_message(&msg("aa bb", "cc dd"), &t, &cfg);
        assert!((s - 0.9).abs() < 1e-9, "{s}");
    }

    #[test]
    fn classification_is_strict() {
        let cfg = BayesConfig::default();
        assert_eq!(classify(0.8889, &cfg), Label::Spam);
        assert_eq!(classify(0.7, &cfg), Label::Ham);
        assert_eq!(classify(0.0, &cfg), Label::Ham);
    }

    #[test]
    fn learning_counts_occurrences() {
        let mut t = TokenTable::new();
        let m = msg("", "viagra and viagra");
        assert!(t.learn(&m, Label::Spam));
        assert_eq!(t.counts("viagra").spam, 2);
        assert_eq!(t.counts("and").spam, 1);
        assert_eq!(t.spam_message_total, 1);
        assert!(t.learn(&m, Label::Spam));
        assert_eq!(t.counts("viagra").spam, 4);
        assert_eq!(t.spam_message_total, 2);
    }

    #[test]
    fn disabled_learning_leaves_table_unchanged() {
        let mut t = TokenTable::with_totals(3, 3);
        t.ham_learning_enabled = false;
        let before = t.clone();
        assert!(!t.learn(&msg("hello", "world"), Label::Ham));
        assert_eq!(t, before);
    }

    #[test]
    fn pruning() {
        let mut t = TokenTable::with_totals(1, 1);
        t.set_counts("a", 10, 0);
        t.set_counts("b", 2, 3);
        t.set_counts("c", 0, 1);
        let before = t.clone();
        t.prune(5);
        assert_eq!(t, before);
        t.prune(2);
        assert_eq!(t.iter().map(|(k, _)| k).collect::<Vec<_>>(), vec!["a", "b"]);

        let mut t = TokenTable::with_totals(1, 1);
        t.set_counts("b", 5, 0);
        t.set_counts("a", 0, 5);
        t.prune(1);
        assert_eq!(t.iter().map(|(k, _)| k).collect::<Vec<_>>(), vec!["a"]);
    }

    #[test]
    fn text_form() {
        let mut t = TokenTable::with_totals(3000, 300);
        t.set_counts("viagra", 400, 5);
        t.set_counts("meeting", 2, 120);
        let text = t.to_text();
        assert_eq!(text, "totals 3000 300\nmeeting 2 120\nviagra 400 5\n");
        assert_eq!(TokenTable::from_text(&text).unwrap().to_text(), text);
        assert!(TokenTable::from_text("tot 1 2\n").is_err());
        assert!(matches!(
            TokenTable::from_text("totals 1 1\nx 1\n"),
            Err(BayesError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(BayesConfig::default().validate().is_ok());
        let bad = BayesConfig {
            probability_floor: 0.6,
            ..BayesConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = BayesConfig {
            threshold: 0.3,
            ..BayesConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
