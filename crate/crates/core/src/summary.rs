//! Run summary derived from a scenario log and attack reports.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::attacks::AttackReport;
use crate::crypto::Pseudonym;
use crate::geometry::Point;
use crate::server::PartialRisk;
use crate::simnet::{Event, PositiveOutcome, ScenarioLog};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub emitted: u64,
    pub ingested: u64,
    pub dropped: u64,
}

/// Detection against ground truth, counted per (pair, slot).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    /// Distance under which a pair counts as a true contact.
    pub d_risk: f64,
    /// Pairs whose true distance is below `d_risk`.
    pub true_contacts: u64,
    /// True contacts the server matched in the same slot.
    pub detected: u64,
    /// Server co-location observations.
    pub observations: u64,
    /// Observations whose true distance is within the match distance `d`.
    pub true_observations: u64,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlertCounts {
    pub positives_accepted: u64,
    pub positives_refused: u64,
    pub bundles: u64,
    pub alerted_agents: u64,
    pub max_total_risk: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub seed: u64,
    pub agents: usize,
    pub slots: u64,
    pub reports: ReportCounts,
    pub bursts: u64,
    pub max_burst_n: u32,
    pub detection: Detection,
    pub alerts: AlertCounts,
    /// Wall-clock milliseconds per phase.
    pub timings_ms: BTreeMap<String, f64>,
    pub attacks: Vec<AttackReport>,
    /// Number of oracle divergences, when the replay was run.
    pub oracle_diffs: Option<usize>,
}

pub fn summarize(log: &ScenarioLog) -> RunSummary {
    let Some(cfg) = log.config() else {
        return RunSummary::default();
    };
    let d_risk = match cfg.partial_risk {
        PartialRisk::Quadratic { d_risk } => d_risk,
        PartialRisk::Exponential { .. } => cfg.d,
    };
    let mut s = RunSummary {
        schema_version: SUMMARY_SCHEMA_VERSION,
        seed: cfg.seed,
        agents: cfg.agents.len(),
        ..Default::default()
    };
    s.detection.d_risk = d_risk;

    let mut positions: BTreeMap<u64, Vec<Point>> = BTreeMap::new();
    let mut owner: HashMap<(u64, Pseudonym), usize> = HashMap::new();
    let mut contacts: HashSet<(u64, usize, usize)> = HashSet::new();
    let mut alerted = HashSet::new();
    for e in log {
        match e {
            Event::Agent(a) => {
                positions.entry(a.slot).or_default().push(a.position);
                owner.insert((a.slot, a.pseudonym), a.agent);
            }
            Event::Burst(b) => {
                s.bursts += 1;
                s.max_burst_n = s.max_burst_n.max(b.n);
            }
            Event::Positive { outcome, .. } => match outcome {
                PositiveOutcome::Accepted => s.alerts.positives_accepted += 1,
                _ => s.alerts.positives_refused += 1,
            },
            Event::Bundle { .. } => s.alerts.bundles += 1,
            Event::Alert {
                agent,
                alerted: yes,
                total_risk,
                ..
            } => {
                if *yes {
                    alerted.insert(*agent);
                }
                s.alerts.max_total_risk = s.alerts.max_total_risk.max(*total_risk);
            }
            Event::End {
                slots,
                reports_emitted,
                ingested,
                dropped,
            } => {
                s.slots = *slots;
                s.reports = ReportCounts {
                    emitted: *reports_emitted,
                    ingested: *ingested,
                    dropped: *dropped,
                };
            }
            _ => {}
        }
    }
    // Contact events follow the agent records of their slot.
    for e in log {
        if let Event::Contact(c) = e {
            s.detection.observations += 1;
            let (Some(&x), Some(&y)) = (owner.get(&(c.slot, c.a)), owner.get(&(c.slot, c.b))) else {
                continue;
            };
            let (x, y) = (x.min(y), x.max(y));
            contacts.insert((c.slot, x, y));
            if let Some(p) = positions.get(&c.slot) {
                if p[x].distance(&p[y]) <= cfg.d {
                    s.detection.true_observations += 1;
                }
            }
        }
    }
    for (&slot, p) in &positions {
        for x in 0..p.len() {
            for y in x + 1..p.len() {
                if p[x].distance(&p[y]) < d_risk {
                    s.detection.true_contacts += 1;
                    s.detection.detected += contacts.contains(&(slot, x, y)) as u64;
                }
            }
        }
    }
    let ratio = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
    s.detection.recall = ratio(s.detection.detected, s.detection.true_contacts);
    s.detection.precision = ratio(s.detection.true_observations, s.detection.observations);
    s.alerts.alerted_agents = alerted.len() as u64;
    s
}
