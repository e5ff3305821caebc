use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("schema has no issues")]
    NoIssues,
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("element {element} references unknown issue {issue}")]
    DanglingIssue { element: String, issue: String },
    #[error("issue {0} has no elements")]
    IssueWithoutElements(String),
    #[error("empty keyword set on {0}")]
    EmptyKeywords(String),
    #[error("element {element} has {count} missing-evidence descriptions, expected 1-3")]
    MissingEvidenceCount { element: String, count: usize },
    #[error("element {0} has no requirements")]
    NoRequirements(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("link {evidence_id} -> {element_id} rejected: score {score:.3} below threshold")]
    RejectedLink {
        evidence_id: String,
        element_id: String,
        score: f64,
    },
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("round {requested} out of order (map is at round {current})")]
    RoundOutOfOrder { current: usize, requested: usize },
    #[error("integrity violation: {0}")]
    Integrity(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("element coverage is undefined for an empty element set")]
    UndefinedCoverage,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {what}: {source}")]
    Parse {
        what: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("invalid record {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("integrity check failed for {what}: expected {expected}, found {found}")]
    Checksum {
        what: String,
        expected: String,
        found: String,
    },
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

#[derive(Debug, Error)]
pub enum SelectorError {
    #[error("selector unavailable after {attempts} attempts: {message}")]
    Unavailable { attempts: usize, message: String },
    #[error("protocol error: {message}; raw reply: {raw}")]
    Protocol { message: String, raw: String },
    #[error("selector configuration error: {0}")]
    Config(String),
}

impl SelectorError {
    /// Raw reply payload for protocol errors.
    pub fn raw_payload(&self) -> Option<&str> {
        match self {
            SelectorError::Protocol { raw, .. } => Some(raw),
            _ => None,
        }
    }
}
