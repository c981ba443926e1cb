//! Answer extraction, canonicalization, and per-model answer histograms.
//!
//! Raw completions are reduced to a [`CanonicalAnswer`] by an ordered
//! [`Ruleset`] of capture patterns. Samples from one model on one query are
//! tallied into an [`AnswerHistogram`], which carries the consistency signal
//! (Shannon entropy, unanimity) used by switching and voting.

use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use indexmap::IndexMap;
use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnswersError {
    #[error("no extractable answers to tally")]
    EmptyAnswerList,
}

#[derive(Debug, Error)]
pub enum RulesetError {
    #[error("ruleset has no rules")]
    Empty,
    #[error("rule `{name}`: invalid pattern: {source}")]
    InvalidPattern {
        name: String,
        #[source]
        source: regex::Error,
    },
    #[error("rule `{name}`: pattern has no capture group")]
    MissingCapture { name: String },
    #[error("unknown built-in ruleset `{0}` (expected numeric, choice or freeform)")]
    UnknownBuiltin(String),
    #[error("cannot parse ruleset: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("cannot read ruleset {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// How an answer string is normalized before comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerKind {
    Numeric,
    Choice,
    Freeform,
}

impl fmt::Display for AnswerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnswerKind::Numeric => "numeric",
            AnswerKind::Choice => "choice",
            AnswerKind::Freeform => "freeform",
        })
    }
}

/// A normalized answer. Two raw strings that normalize to the same value
/// are the same answer everywhere answers are counted.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CanonicalAnswer {
    kind: AnswerKind,
    value: String,
}

impl CanonicalAnswer {
    /// Canonicalizes `raw` under `kind`; `None` when nothing is left after
    /// normalization.
    pub fn parse(raw: &str, kind: AnswerKind) -> Option<Self> {
        let value = match kind {
            AnswerKind::Numeric => canonical_numeric(raw),
            AnswerKind::Choice => canonical_choice(raw),
            AnswerKind::Freeform => normalize_text(raw),
        };
        if value.is_empty() {
            None
        } else {
            Some(Self { kind, value })
        }
    }

    pub fn value(&self) -> &str {
        &self.value
    }

    pub fn kind(&self) -> AnswerKind {
        self.kind
    }
}

impl fmt::Display for CanonicalAnswer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.value)
    }
}

/// Canonical string form of `raw` under `kind` (empty if nothing remains).
pub fn canonicalize(raw: &str, kind: AnswerKind) -> String {
    CanonicalAnswer::parse(raw, kind)
        .map(|a| a.value)
        .unwrap_or_default()
}

/// Trim, lowercase, collapse internal whitespace, drop wrapping `$` and
/// trailing periods. Repeats until stable so the result is a fixed point.
fn normalize_text(raw: &str) -> String {
    let mut cur = raw.to_string();
    loop {
        let collapsed = cur.split_whitespace().collect::<Vec<_>>().join(" ");
        let mut s = collapsed.to_lowercase();
        while s.ends_with('.') {
            s.pop();
        }
        if s.len() >= 2 && s.starts_with('$') && s.ends_with('$') {
            s = s[1..s.len() - 1].to_string();
        }
        let s = s.trim().to_string();
        if s == cur {
            return s;
        }
        cur = s;
    }
}

fn canonical_choice(raw: &str) -> String {
    let mut s = normalize_text(raw);
    loop {
        let stripped = s
            .strip_prefix('(')
            .and_then(|t| t.strip_suffix(')'))
            .or_else(|| s.strip_prefix('[').and_then(|t| t.strip_suffix(']')));
        match stripped {
            Some(inner) => s = normalize_text(inner),
            None => break,
        }
    }
    s.to_ascii_uppercase()
}

fn canonical_numeric(raw: &str) -> String {
    let text = normalize_text(raw);
    match parse_rational(&text) {
        Some(r) => format_rational(&r),
        None => text,
    }
}

fn frac_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(-)?\\[dt]?frac\{([^{}]+)\}\{([^{}]+)\}$").expect("static pattern")
    })
}

fn decimal_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^([+-])?(\d{1,3}(?:,\d{3})+|\d+)?(?:\.(\d+))?$").expect("static pattern")
    })
}

/// Parses integers (with optional thousands separators), decimals, `a/b`
/// fractions and `\frac{a}{b}` into an exact rational.
pub(crate) fn parse_rational(text: &str) -> Option<BigRational> {
    let text = text.trim();
    if let Some(caps) = frac_regex().captures(text) {
        let num = parse_rational(&caps[2])?;
        let den = parse_rational(&caps[3])?;
        if den.is_zero() {
            return None;
        }
        let r = num / den;
        return Some(if caps.get(1).is_some() { -r } else { r });
    }
    if let Some((a, b)) = text.split_once('/') {
        let num = parse_decimal(a.trim())?;
        let den = parse_decimal(b.trim())?;
        if den.is_zero() {
            return None;
        }
        return Some(num / den);
    }
    parse_decimal(text)
}

fn parse_decimal(text: &str) -> Option<BigRational> {
    let caps = decimal_regex().captures(text)?;
    let int_part = caps.get(2).map(|m| m.as_str().replace(',', ""));
    let frac_part = caps.get(3).map(|m| m.as_str());
    if int_part.is_none() && frac_part.is_none() {
        return None;
    }
    let digits = format!(
        "{}{}",
        int_part.as_deref().unwrap_or("0"),
        frac_part.unwrap_or("")
    );
    let mut num: BigInt = digits.parse().ok()?;
    if caps.get(1).map(|m| m.as_str()) == Some("-") {
        num = -num;
    }
    let den = BigInt::from(10u32).pow(frac_part.map_or(0, str::len) as u32);
    Some(BigRational::new(num, den))
}

/// Terminating rationals print as exact decimals, everything else as `p/q`.
pub(crate) fn format_rational(r: &BigRational) -> String {
    let r = r.reduced();
    let (num, den) = (r.numer().clone(), r.denom().clone());
    if den == BigInt::from(1) {
        return num.to_string();
    }
    let mut rest = den.clone();
    let (mut twos, mut fives) = (0u32, 0u32);
    let two = BigInt::from(2);
    let five = BigInt::from(5);
    while rest.is_multiple_of(&two) {
        rest /= &two;
        twos += 1;
    }
    while rest.is_multiple_of(&five) {
        rest /= &five;
        fives += 1;
    }
    if rest != BigInt::from(1) {
        return format!("{num}/{den}");
    }
    let places = twos.max(fives);
    let scaled = (num.abs() * BigInt::from(10u32).pow(places)) / &den;
    let digits = format!("{:0>width$}", scaled.to_string(), width = places as usize + 1);
    let split = digits.len() - places as usize;
    let sign = if num.is_negative() { "-" } else { "" };
    format!("{sign}{}.{}", &digits[..split], &digits[split..])
}

/// Where in the text a rule takes its match from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Occurrence {
    First,
    #[default]
    Last,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RuleSpec {
    pub name: String,
    pub pattern: String,
    #[serde(default)]
    pub occurrence: Occurrence,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RulesetSpec {
    pub kind: AnswerKind,
    pub rules: Vec<RuleSpec>,
}

#[derive(Debug, Clone)]
struct Rule {
    name: String,
    regex: Regex,
    occurrence: Occurrence,
}

/// An ordered list of extraction patterns. The first rule that yields a
/// non-empty canonical answer wins.
#[derive(Debug, Clone)]
pub struct Ruleset {
    kind: AnswerKind,
    rules: Vec<Rule>,
    spec: RulesetSpec,
}

const BOXED: &str = r"\\boxed\{((?:[^{}]|\{(?:[^{}]|\{[^{}]*\})*\})*)\}";

impl Ruleset {
    pub fn from_spec(spec: RulesetSpec) -> Result<Self, RulesetError> {
        if spec.rules.is_empty() {
            return Err(RulesetError::Empty);
        }
        let rules = spec
            .rules
            .iter()
            .map(|r| {
                let regex = Regex::new(&r.pattern).map_err(|source| {
                    RulesetError::InvalidPattern {
                        name: r.name.clone(),
                        source,
                    }
                })?;
                if regex.captures_len() < 2 {
                    return Err(RulesetError::MissingCapture {
                        name: r.name.clone(),
                    });
                }
                Ok(Rule {
                    name: r.name.clone(),
                    regex,
                    occurrence: r.occurrence,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            kind: spec.kind,
            rules,
            spec,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self, RulesetError> {
        Self::from_spec(toml::from_str(text)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, RulesetError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| RulesetError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    /// `numeric`, `choice` or `freeform`.
    pub fn builtin(name: &str) -> Result<Self, RulesetError> {
        match name {
            "numeric" => Ok(Self::numeric()),
            "choice" => Ok(Self::choice()),
            "freeform" => Ok(Self::freeform()),
            other => Err(RulesetError::UnknownBuiltin(other.to_string())),
        }
    }

    /// Boxed expression, then an "answer is N" tail, then the last number.
    pub fn numeric() -> Self {
        let number = r"(-?\d[\d,]*(?:\.\d+)?(?:\s*/\s*\d+)?|-?\.\d+)";
        Self::from_spec(RulesetSpec {
            kind: AnswerKind::Numeric,
            rules: vec![
                rule("boxed", BOXED),
                rule(
                    "answer_is",
                    &format!(r"(?i)answer\s+is\s*:?\s*\$?\s*{number}"),
                ),
                rule("last_number", number),
            ],
        })
        .expect("built-in numeric ruleset")
    }

    /// Boxed expression, then "answer is (X)", then the last parenthesized letter.
    pub fn choice() -> Self {
        Self::from_spec(RulesetSpec {
            kind: AnswerKind::Choice,
            rules: vec![
                rule("boxed", BOXED),
                rule(
                    "answer_is",
                    r"(?i)answer\s+is\s*:?\s*\(?([a-j])\)?(?:[^a-z]|$)",
                ),
                rule("last_letter", r"\(([A-J])\)"),
            ],
        })
        .expect("built-in choice ruleset")
    }

    /// Boxed expression, then the rest of the line after "answer is".
    pub fn freeform() -> Self {
        Self::from_spec(RulesetSpec {
            kind: AnswerKind::Freeform,
            rules: vec![
                rule("boxed", BOXED),
                rule("answer_is", r"(?i)answer\s+is\s*:?\s*([^\n]+)"),
            ],
        })
        .expect("built-in freeform ruleset")
    }

    pub fn kind(&self) -> AnswerKind {
        self.kind
    }

    pub fn spec(&self) -> &RulesetSpec {
        &self.spec
    }

    pub fn rule_names(&self) -> impl Iterator<Item = &str> {
        self.rules.iter().map(|r| r.name.as_str())
    }

    pub fn extract(&self, sample: &str) -> Option<CanonicalAnswer> {
        for rule in &self.rules {
            let captures = rule
                .regex
                .captures_iter(sample)
                .filter_map(|c| c.get(1).map(|m| m.as_str()));
            let hit = match rule.occurrence {
                Occurrence::First => {
                    captures.into_iter().find_map(|c| CanonicalAnswer::parse(c, self.kind))
                }
                Occurrence::Last => captures
                    .collect::<Vec<_>>()
                    .into_iter()
                    .rev()
                    .find_map(|c| CanonicalAnswer::parse(c, self.kind)),
            };
            if hit.is_some() {
                return hit;
            }
        }
        None
    }
}

fn rule(name: &str, pattern: &str) -> RuleSpec {
    RuleSpec {
        name: name.to_string(),
        pattern: pattern.to_string(),
        occurrence: Occurrence::Last,
    }
}

pub fn extract_answer(sample: &str, rules: &Ruleset) -> Option<CanonicalAnswer> {
    rules.extract(sample)
}

/// Multiset of canonical answers for one model on one query. Iteration
/// follows first-seen order, which is what the earlier-first tie rules use.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerHistogram {
    counts: IndexMap<CanonicalAnswer, usize>,
    total: usize,
}

impl AnswerHistogram {
    pub fn tally<I>(answers: I) -> Result<Self, AnswersError>
    where
        I: IntoIterator<Item = CanonicalAnswer>,
    {
        let mut counts: IndexMap<CanonicalAnswer, usize> = IndexMap::new();
        let mut total = 0;
        for a in answers {
            *counts.entry(a).or_insert(0) += 1;
            total += 1;
        }
        if total == 0 {
            return Err(AnswersError::EmptyAnswerList);
        }
        Ok(Self { counts, total })
    }

    /// Builds a histogram from explicit `(answer, count)` pairs; zero
    /// counts are skipped.
    pub fn from_counts<I>(pairs: I) -> Result<Self, AnswersError>
    where
        I: IntoIterator<Item = (CanonicalAnswer, usize)>,
    {
        let mut counts: IndexMap<CanonicalAnswer, usize> = IndexMap::new();
        for (a, c) in pairs.into_iter().filter(|(_, c)| *c > 0) {
            *counts.entry(a).or_insert(0) += c;
        }
        let total = counts.values().sum();
        if total == 0 {
            return Err(AnswersError::EmptyAnswerList);
        }
        Ok(Self { counts, total })
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn count(&self, answer: &CanonicalAnswer) -> usize {
        self.counts.get(answer).copied().unwrap_or(0)
    }

    /// Answers with counts, first-seen order.
    pub fn iter(&self) -> impl Iterator<Item = (&CanonicalAnswer, usize)> {
        self.counts.iter().map(|(a, c)| (a, *c))
    }

    pub fn position(&self, answer: &CanonicalAnswer) -> Option<usize> {
        self.counts.get_index_of(answer)
    }

    pub fn fully_consistent(&self) -> bool {
        self.counts.len() == 1
    }

    /// First-seen answer (the unanimous answer when fully consistent).
    pub fn first(&self) -> &CanonicalAnswer {
        self.counts
            .get_index(0)
            .map(|(a, _)| a)
            .expect("histogram is never empty")
    }

    pub fn max_count(&self) -> usize {
        self.counts.values().copied().max().unwrap_or(0)
    }

    /// Shannon entropy of `count/total`, in bits.
    pub fn entropy_bits(&self) -> f64 {
        let total = self.total as f64;
        let h: f64 = self
            .counts
            .values()
            .map(|&c| {
                let p = c as f64 / total;
                -p * p.log2()
            })
            .sum();
        h.clamp(0.0, total.log2())
    }

    /// Pointwise sum; answers new to `self` are appended in `other`'s order.
    pub fn merge(&self, other: &AnswerHistogram) -> AnswerHistogram {
        let mut counts = self.counts.clone();
        for (a, c) in &other.counts {
            *counts.entry(a.clone()).or_insert(0) += c;
        }
        AnswerHistogram {
            counts,
            total: self.total + other.total,
        }
    }
}

pub fn tally(answers: &[CanonicalAnswer]) -> Result<AnswerHistogram, AnswersError> {
    AnswerHistogram::tally(answers.iter().cloned())
}

pub fn entropy_bits(h: &AnswerHistogram) -> f64 {
    h.entropy_bits()
}

pub fn fully_consistent(h: &AnswerHistogram) -> bool {
    h.fully_consistent()
}

/// Exact-rational value of a numeric canonical answer, for callers that
/// need to compare magnitudes.
pub fn numeric_value(answer: &CanonicalAnswer) -> Option<f64> {
    if answer.kind != AnswerKind::Numeric {
        return None;
    }
    let r = parse_rational(&answer.value)?;
    r.numer().to_f64().zip(r.denom().to_f64()).map(|(n, d)| n / d)
}
