//! Append-only scenario record, exported as one JSON object per line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::config::WorldConfig;
use crate::crypto::{AreaSalt, CellTag, Pseudonym};
use crate::error::LogError;
use crate::geometry::{CellId, Point, PolarCoord};
use crate::server::{BroadcastBundle, ContactBurst, ContactObservation};

pub const LOG_SCHEMA_VERSION: u32 = 1;

/// Ground truth and noise for one agent after the slot's negotiations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub slot: u64,
    pub agent: usize,
    pub position: Point,
    /// Raw fix minus true position.
    pub gps_noise: Point,
    pub raw_gps: Point,
    pub locked: bool,
    pub estimate: Point,
    pub pseudonym: Pseudonym,
    /// Sender whose beacon this agent negotiated against in this slot.
    pub negotiated_with: Option<usize>,
    /// Beacons rejected by the plausibility guard.
    pub dropped: usize,
}

/// A beacon delivered over the short-range channel, in processing order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reception {
    pub slot: u64,
    pub receiver: usize,
    pub sender: usize,
    #[serde(with = "hex::serde")]
    pub payload: Vec<u8>,
    pub d_bl: f64,
    /// Delivered by amplification rather than a physical link.
    pub forged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub slot: u64,
    pub agent: usize,
    pub cell: CellId,
    pub tag: CellTag,
    pub pseudonym: Pseudonym,
    pub coord: PolarCoord,
    pub arrival: f64,
    pub ingested: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveOutcome {
    Accepted,
    NoConsent,
    Refused,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    Header {
        schema_version: u32,
        config: WorldConfig,
    },
    /// A salt as distributed to users, logged on first use.
    Salt {
        epoch: u64,
        salt: AreaSalt,
    },
    Agent(AgentRecord),
    Beacon(Reception),
    Sniff {
        slot: u64,
        sniffer: usize,
        sender: usize,
        #[serde(with = "hex::serde")]
        payload: Vec<u8>,
    },
    Report(ReportRecord),
    Contact(ContactObservation),
    Positive {
        slot: u64,
        agent: usize,
        outcome: PositiveOutcome,
        pseudonyms: Vec<Pseudonym>,
    },
    Bundle {
        slot: u64,
        bundle: BroadcastBundle,
    },
    Alert {
        slot: u64,
        agent: usize,
        total_risk: f64,
        alerted: bool,
        matched: usize,
    },
    Burst(ContactBurst),
    End {
        slots: u64,
        reports_emitted: u64,
        ingested: u64,
        dropped: u64,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioLog {
    events: Vec<Event>,
}

impl ScenarioLog {
    pub fn new() -> Self {
        ScenarioLog::default()
    }

    pub fn push(&mut self, event: Event) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn config(&self) -> Option<&WorldConfig> {
        match self.events.first() {
            Some(Event::Header { config, .. }) => Some(config),
            _ => None,
        }
    }

    pub fn write_ndjson<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn to_ndjson(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_ndjson(&mut buf).expect("writing to memory");
        buf
    }

    /// Parses a log and checks that it opens with a supported header.
    pub fn read_ndjson<R: BufRead>(input: R) -> Result<Self, LogError> {
        let mut events = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let event = serde_json::from_str(&line).map_err(|source| LogError::Parse {
                line: n + 1,
                source,
            })?;
            events.push(event);
        }
        match events.first() {
            Some(Event::Header { schema_version, .. }) if *schema_version != LOG_SCHEMA_VERSION => {
                Err(LogError::Schema(*schema_version))
            }
            Some(Event::Header { .. }) => Ok(ScenarioLog { events }),
            _ => Err(LogError::MissingHeader),
        }
    }
}

impl<'a> IntoIterator for &'a ScenarioLog {
    type Item = &'a Event;
    type IntoIter = std::slice::Iter<'a, Event>;

    fn into_iter(self) -> Self::IntoIter {
        self.events.iter()
    }
}
