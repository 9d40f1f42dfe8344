//! Cacheability labels. Rules are matched against raw input bytes in
//! declaration order; the first match decides and the default is cacheable.

use std::fmt;
use std::str::FromStr;

use crate::cache::key::InputAtom;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Cacheable,
    NonCacheable,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Cacheable => "cacheable",
            Verdict::NonCacheable => "non-cacheable",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Pattern {
    Exact(Vec<u8>),
    Prefix(Vec<u8>),
}

impl Pattern {
    pub fn matches(&self, input: &[u8]) -> bool {
        match self {
            Pattern::Exact(p) => input == p.as_slice(),
            Pattern::Prefix(p) => input.starts_with(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CacheabilityRule {
    pub pattern: Pattern,
    pub verdict: Verdict,
}

impl CacheabilityRule {
    pub fn exact(bytes: impl Into<Vec<u8>>, verdict: Verdict) -> Self {
        Self {
            pattern: Pattern::Exact(bytes.into()),
            verdict,
        }
    }

    pub fn prefix(bytes: impl Into<Vec<u8>>, verdict: Verdict) -> Self {
        Self {
            pattern: Pattern::Prefix(bytes.into()),
            verdict,
        }
    }
}

pub fn classify(rules: &[CacheabilityRule], input: &InputAtom) -> Verdict {
    rules
        .iter()
        .find(|r| r.pattern.matches(input.as_bytes()))
        .map_or(Verdict::Cacheable, |r| r.verdict)
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("rules line {line}: {reason}")]
pub struct RuleParseError {
    pub line: usize,
    pub reason: String,
}

impl FromStr for CacheabilityRule {
    type Err = String;

    /// `exact <bytes> <verdict>` or `prefix <bytes> <verdict>`. The pattern is
    /// everything between the first and the last space, so it may itself
    /// contain spaces, or be empty.
    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let (kind, rest) = line.split_once(' ').ok_or_else(|| {
            format!("expected `<exact|prefix> <pattern> <verdict>`, got {line:?}")
        })?;
        let (pattern, verdict) = match rest.rsplit_once(' ') {
            Some((p, v)) => (p, v),
            None => ("", rest),
        };
        let verdict = match verdict {
            "cacheable" => Verdict::Cacheable,
            "non-cacheable" => Verdict::NonCacheable,
            other => return Err(format!("unknown verdict {other:?}")),
        };
        let pattern = pattern.as_bytes().to_vec();
        match kind {
            "exact" => Ok(Self::exact(pattern, verdict)),
            "prefix" => Ok(Self::prefix(pattern, verdict)),
            other => Err(format!("unknown matcher {other:?}")),
        }
    }
}

/// Parses a rules file: one rule per line, `#` comments and blank lines
/// ignored.
pub fn parse_rules(text: &str) -> Result<Vec<CacheabilityRule>, RuleParseError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| {
            l.trim_end_matches('\r')
                .parse()
                .map_err(|reason| RuleParseError {
                    line: i + 1,
                    reason,
                })
        })
        .collect()
}
