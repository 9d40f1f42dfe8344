use std::fmt;
use std::str::FromStr;

use crate::descriptor::BackendDescriptor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RunMode {
    /// Every step goes to the live backend and is persisted.
    Record,
    /// Every step is served from cache; no backend is touched.
    Replay,
    /// Cache first, live backend on misses.
    Hybrid,
}

impl fmt::Display for RunMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunMode::Record => "record",
            RunMode::Replay => "replay",
            RunMode::Hybrid => "hybrid",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum VersionPolicy {
    Strict,
    #[default]
    Warn,
    Ignore,
}

impl FromStr for VersionPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "strict" => Ok(Self::Strict),
            "warn" => Ok(Self::Warn),
            "ignore" => Ok(Self::Ignore),
            other => Err(format!("unknown version policy {other:?}")),
        }
    }
}

impl fmt::Display for VersionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VersionPolicy::Strict => "strict",
            VersionPolicy::Warn => "warn",
            VersionPolicy::Ignore => "ignore",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VersionVerdict {
    Proceed,
    ProceedWithWarning,
    Abort,
}

/// Compares version and configuration fingerprint exactly.
pub fn check_version(
    stored: &BackendDescriptor,
    live: &BackendDescriptor,
    policy: VersionPolicy,
) -> VersionVerdict {
    if stored.same_revision(live) {
        return VersionVerdict::Proceed;
    }
    match policy {
        VersionPolicy::Strict => VersionVerdict::Abort,
        VersionPolicy::Warn => VersionVerdict::ProceedWithWarning,
        VersionPolicy::Ignore => VersionVerdict::Proceed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cas(version: &str) -> BackendDescriptor {
        BackendDescriptor::new("cas", version, "")
    }

    #[test]
    fn identical_descriptors_proceed_under_any_policy() {
        for p in [
            VersionPolicy::Strict,
            VersionPolicy::Warn,
            VersionPolicy::Ignore,
        ] {
            assert_eq!(
                check_version(&cas("1.0"), &cas("1.0"), p),
                VersionVerdict::Proceed
            );
        }
    }

    #[test]
    fn mismatch_follows_policy() {
        let (a, b) = (cas("1.0"), cas("2.0"));
        assert_eq!(
            check_version(&a, &b, VersionPolicy::Strict),
            VersionVerdict::Abort
        );
        assert_eq!(
            check_version(&a, &b, VersionPolicy::Warn),
            VersionVerdict::ProceedWithWarning
        );
        assert_eq!(
            check_version(&a, &b, VersionPolicy::Ignore),
            VersionVerdict::Proceed
        );
    }

    #[test]
    fn fingerprint_counts_as_revision() {
        let a = BackendDescriptor::new("cas", "1.0", "-q");
        let b = BackendDescriptor::new("cas", "1.0", "-v");
        assert_eq!(
            check_version(&a, &b, VersionPolicy::Strict),
            VersionVerdict::Abort
        );
    }

    #[test]
    fn parses_policy_names() {
        assert_eq!("strict".parse(), Ok(VersionPolicy::Strict));
        assert_eq!("warn".parse(), Ok(VersionPolicy::Warn));
        assert_eq!("ignore".parse(), Ok(VersionPolicy::Ignore));
        assert!("lenient".parse::<VersionPolicy>().is_err());
    }
}
