//! Proximity tracing in which phones never exchange identifiers.
//!
//! Users report salted microcell tags and pole-relative coordinates to a
//! server that matches co-located pseudonyms per time slot. Short-range radio
//! only refines positions. The crate also contains a deterministic world
//! simulator, an independent replay oracle and an adversary suite.

pub mod attacks;
pub mod client;
pub mod crypto;
pub mod error;
pub mod geometry;
pub mod issuers;
pub mod oracle;
pub mod pnp;
pub mod scenarios;
pub mod server;
pub mod simnet;
pub mod summary;

pub use attacks::{Attack, AttackOptions, AttackReport, Outcome};
pub use error::{ConfigError, CryptoError, LogError, ReportRejection};
pub use geometry::{CellId, Lattice, LatticeConfig, Point, PolarCoord};
pub use oracle::{replay, OracleReport};
pub use simnet::{AgentSpec, Event, ScenarioLog, World, WorldConfig};
pub use summary::{summarize, RunSummary};
