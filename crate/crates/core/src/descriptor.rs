use std::fmt;

use serde::{Deserialize, Serialize};

/// Identity of a black-box tool: what it is, which version answered, and how
/// it was launched.
///
/// Every field participates in the session root, so two descriptors that
/// differ anywhere never share key chains.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub name: String,
    pub version: String,
    pub config_fingerprint: String,
}

impl BackendDescriptor {
    pub fn new(
        name: impl Into<String>,
        version: impl Into<String>,
        config_fingerprint: impl Into<String>,
    ) -> Self {
        Self {
            name: name.into(),
            version: version.into(),
            config_fingerprint: config_fingerprint.into(),
        }
    }

    /// Same tool, same version, same launch configuration.
    pub fn same_revision(&self, other: &BackendDescriptor) -> bool {
        self.version == other.version && self.config_fingerprint == other.config_fingerprint
    }
}

impl fmt::Display for BackendDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.name, self.version)?;
        if !self.config_fingerprint.is_empty() {
            write!(f, " [{}]", self.config_fingerprint)?;
        }
        Ok(())
    }
}
