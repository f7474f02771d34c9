//! The user agent: pseudonym schedule, per-slot reporting for both containing
//! cells, positive reporting and alert evaluation.

use std::collections::VecDeque;

use num_bigint::BigUint;
use num_traits::One;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use crate::crypto::{
    blind, blind_with_factor, cell_tag, gen_report_message, unblind, CellTag, Pseudonym,
    ReportCredential, SealingKey,
};
use crate::error::{IssuerError, ReportRejection};
use crate::geometry::{cells_of, centroid, to_polar, CellId, Point};
use crate::issuers::{AreaGrid, HealthFacility, Tsp};
use crate::pnp::PnpState;
use crate::server::{AlertPair, BroadcastBundle, LocationReport, Server};

/// Total risk `g` over the matched partial risks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TotalRisk {
    #[default]
    Sum,
    Max,
}

impl TotalRisk {
    pub fn evaluate(&self, partials: &[f64]) -> f64 {
        match self {
            TotalRisk::Sum => partials.iter().sum(),
            TotalRisk::Max => partials.iter().copied().fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientConfig {
    /// Pseudonym lifetime in slots.
    pub rotation_slots: u64,
    /// How long expired pseudonyms are kept, in slots.
    pub retention_slots: u64,
    pub alert_threshold: f64,
    pub total_risk: TotalRisk,
}

/// How the credential request is blinded. `Unit` uses `r = 1` and exists only
/// as a broken control for the unlinkability experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BlindingMode {
    #[default]
    Uniform,
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudonymSpan {
    pub pseudonym: Pseudonym,
    pub first_slot: u64,
    pub last_slot: u64,
}

/// A sealed report together with the plaintext and cell it came from. Only
/// `envelope` ever leaves the device.
#[derive(Debug, Clone)]
pub struct EmittedReport {
    pub cell: CellId,
    pub report: LocationReport,
    pub envelope: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlertOutcome {
    pub total_risk: f64,
    pub alerted: bool,
    pub matched: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum PositiveReportError {
    #[error("user has not consented to report")]
    NoConsent,
    #[error("health facility refused: {0}")]
    Refused(#[from] IssuerError),
    #[error("server rejected the report: {0}")]
    Rejected(#[from] ReportRejection),
}

#[derive(Debug, Clone)]
pub struct UserAgent {
    /// Simulator label; never transmitted.
    pub id: usize,
    pub current_pseudonym: Pseudonym,
    pub current_since: u64,
    pub pseudonym_history: VecDeque<PseudonymSpan>,
    pub pnp: PnpState,
    /// Simulator ground truth.
    pub true_position: Point,
    pub raw_gps: Point,
    pub consent: bool,
    pub config: ClientConfig,
    matched: Vec<AlertPair>,
}

impl UserAgent {
    pub fn new<R: RngCore + CryptoRng>(id: usize, position: Point, config: ClientConfig, rng: &mut R) -> Self {
        UserAgent {
            id,
            current_pseudonym: Pseudonym::random(rng),
            current_since: 0,
            pseudonym_history: VecDeque::new(),
            pnp: PnpState::unlocked(position),
            true_position: position,
            raw_gps: position,
            consent: false,
            config,
            matched: Vec::new(),
        }
    }

    /// Draws a fresh pseudonym at every multiple of the rotation period and
    /// forgets archived ones past retention. Returns whether it rotated.
    pub fn rotate_pseudonym<R: RngCore + CryptoRng>(&mut self, slot: u64, rng: &mut R) -> bool {
        let rotate = slot > self.current_since && slot % self.config.rotation_slots == 0;
        if rotate {
            self.pseudonym_history.push_back(PseudonymSpan {
                pseudonym: self.current_pseudonym,
                first_slot: self.current_since,
                last_slot: slot - 1,
            });
            self.current_pseudonym = Pseudonym::random(rng);
            self.current_since = slot;
        }
        let keep = self.config.retention_slots;
        while self
            .pseudonym_history
            .front()
            .is_some_and(|s| s.last_slot + keep < slot)
        {
            self.pseudonym_history.pop_front();
        }
        rotate
    }

    /// Every pseudonym still inside the retention window, oldest first.
    pub fn pseudonyms(&self) -> Vec<Pseudonym> {
        self.pseudonym_history
            .iter()
            .map(|s| s.pseudonym)
            .chain(std::iter::once(self.current_pseudonym))
            .collect()
    }

    /// Position reported to the server: adjusted while locked, raw otherwise.
    pub fn estimate(&self) -> Point {
        if self.pnp.locked {
            self.pnp.position
        } else {
            self.raw_gps
        }
    }

    /// One sealed report per containing cell, or nothing without coverage.
    pub fn emit_reports<R: RngCore + CryptoRng>(
        &self,
        grid: &AreaGrid,
        tsp: &Tsp,
        slot: u64,
        server_key: &SealingKey,
        rng: &mut R,
    ) -> Vec<EmittedReport> {
        if grid.area_of(self.true_position).is_none() {
            return Vec::new();
        }
        let estimate = self.estimate();
        let (a, b) = cells_of(estimate, &grid.lattice);
        [a, b]
            .into_iter()
            .map(|cell| {
                let salt = tsp.current_salt(grid.area_of_cell(cell), slot);
                let report = LocationReport {
                    tag: cell_tag(cell, &salt.value),
                    pseudonym: self.current_pseudonym,
                    coord: to_polar(estimate, centroid(cell, &grid.lattice).position),
                };
                let envelope = server_key.seal(&report.encode(), rng);
                EmittedReport {
                    cell,
                    report,
                    envelope,
                }
            })
            .collect()
    }

    /// Obtains `(M, sigma(M))` from the health facility without revealing `M`.
    pub fn request_credential<R: RngCore + CryptoRng>(
        &self,
        hf: &mut HealthFacility,
        slot: u64,
        mode: BlindingMode,
        rng: &mut R,
    ) -> Result<ReportCredential, IssuerError> {
        let key = hf.public_key().clone();
        let message = gen_report_message(&key, rng);
        let blinded = match mode {
            BlindingMode::Uniform => blind(&message, &key, rng),
            BlindingMode::Unit => {
                blind_with_factor(&message, &key, &BigUint::one()).expect("1 is invertible")
            }
        };
        let signed = hf.hf_sign(&blinded.value, self.id, slot)?;
        Ok(ReportCredential {
            sigma: unblind(&signed, &blinded.unblinder, &key.n),
            message,
        })
    }

    /// Full positive-report flow: credential from the facility, then the
    /// credential and every retained pseudonym to the server.
    pub fn report_positive<R: RngCore + CryptoRng>(
        &self,
        hf: &mut HealthFacility,
        server: &mut Server,
        slot: u64,
        rng: &mut R,
    ) -> Result<BroadcastBundle, PositiveReportError> {
        if !self.consent {
            return Err(PositiveReportError::NoConsent);
        }
        let credential = self.request_credential(hf, slot, BlindingMode::Uniform, rng)?;
        Ok(server.process_positive(&credential, &self.pseudonyms(), slot)?)
    }

    /// Matches a broadcast against this user's pseudonyms and re-evaluates the
    /// total risk over everything matched so far.
    pub fn process_alerts(&mut self, pairs: &[AlertPair]) -> AlertOutcome {
        let mine = self.pseudonyms();
        self.matched
            .extend(pairs.iter().filter(|p| mine.contains(&p.pseudonym)).copied());
        self.alert_state()
    }

    pub fn alert_state(&self) -> AlertOutcome {
        if self.matched.is_empty() {
            return AlertOutcome {
                total_risk: 0.0,
                alerted: false,
                matched: 0,
            };
        }
        let partials: Vec<f64> = self.matched.iter().map(|p| p.partial_risk).collect();
        let total_risk = self.config.total_risk.evaluate(&partials);
        AlertOutcome {
            total_risk,
            alerted: total_risk >= self.config.alert_threshold,
            matched: self.matched.len(),
        }
    }

    pub fn matched_pairs(&self) -> &[AlertPair] {
        &self.matched
    }
}

/// Recomputes a report's tag from its cell and the active salt.
pub fn expected_tag(cell: CellId, grid: &AreaGrid, tsp: &Tsp, slot: u64) -> CellTag {
    cell_tag(cell, &tsp.current_salt(grid.area_of_cell(cell), slot).value)
}
