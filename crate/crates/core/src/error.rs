use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CryptoError {
    #[error("value is not below the signer modulus")]
    OutOfRange,
    #[error("RSA key generation failed: {0}")]
    KeyGeneration(String),
    #[error("modulus of {0} bits is too small to carry a report message")]
    ModulusTooSmall(usize),
    #[error("envelope could not be opened")]
    Envelope,
    #[error("malformed {0}")]
    Malformed(&'static str),
}

/// Why the server refused a positive-report credential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportRejection {
    #[error("signature does not verify")]
    BadSignature,
    #[error("message is not A || h(A)")]
    BadStructure,
    #[error("credential was already used")]
    Replay,
}

#[derive(Debug, Error)]
pub enum IssuerError {
    #[error("requester {0} is not registered as tested positive")]
    NotAuthorized(usize),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema_version {0}")]
    Schema(u32),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("cannot read log: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("log has no header record")]
    MissingHeader,
    #[error("unsupported log schema_version {0}")]
    Schema(u32),
}
