//! The back-end: slotted report ingestion, same-cell matching, contact bursts
//! and positive-report broadcasts.
//!
//! Nothing stored here identifies a place. Reports carry salted cell tags and
//! coordinates relative to an unknown pole.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::crypto::{
    verify_report, CellTag, OpeningKey, Pseudonym, ReplayLedger, ReportCredential, RsaPublicKey,
    PSEUDONYM_LEN,
};
use crate::error::{CryptoError, ReportRejection};
use crate::geometry::{polar_distance, PolarCoord};

/// Plaintext layout inside an envelope: tag, pseudonym, rho, theta.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationReport {
    pub tag: CellTag,
    pub pseudonym: Pseudonym,
    pub coord: PolarCoord,
}

impl LocationReport {
    pub const ENCODED_LEN: usize = 32 + PSEUDONYM_LEN + 16;

    pub fn encode(&self) -> [u8; Self::ENCODED_LEN] {
        let mut out = [0u8; Self::ENCODED_LEN];
        out[..32].copy_from_slice(&self.tag.0);
        out[32..48].copy_from_slice(&self.pseudonym.0);
        out[48..56].copy_from_slice(&self.coord.rho.to_le_bytes());
        out[56..64].copy_from_slice(&self.coord.theta.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() != Self::ENCODED_LEN {
            return Err(CryptoError::Malformed("location report"));
        }
        let rho = f64::from_le_bytes(bytes[48..56].try_into().unwrap());
        let theta = f64::from_le_bytes(bytes[56..64].try_into().unwrap());
        if !(rho.is_finite() && rho >= 0.0 && theta.is_finite()) {
            return Err(CryptoError::Malformed("location report"));
        }
        Ok(LocationReport {
            tag: CellTag(bytes[..32].try_into().unwrap()),
            pseudonym: Pseudonym(bytes[32..48].try_into().unwrap()),
            coord: PolarCoord { rho, theta },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlottedReport {
    pub tag: CellTag,
    pub pseudonym: Pseudonym,
    pub coord: PolarCoord,
    pub slot: u64,
}

/// Partial risk `f(D, n)` for one contact burst.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartialRisk {
    /// `sum over D of max(0, 1 - d / d_risk)^2`.
    Quadratic { d_risk: f64 },
    /// `sum over D of exp(-d / scale)`.
    Exponential { scale: f64 },
}

impl Default for PartialRisk {
    fn default() -> Self {
        PartialRisk::Quadratic { d_risk: 2.0 }
    }
}

impl PartialRisk {
    pub fn evaluate(&self, distances: &[f64]) -> f64 {
        match *self {
            PartialRisk::Quadratic { d_risk } => partial_risk_default(distances, d_risk),
            PartialRisk::Exponential { scale } => distances.iter().map(|d| (-d / scale).exp()).sum(),
        }
    }
}

/// Grows with every counted slot and shrinks as distances grow; zero at or
/// beyond `d_risk`.
pub fn partial_risk_default(distances: &[f64], d_risk: f64) -> f64 {
    distances
        .iter()
        .map(|d| {
            let w = (1.0 - d / d_risk).max(0.0);
            w * w
        })
        .sum()
}

/// One slot of co-location between two pseudonyms; `a < b` bytewise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactObservation {
    pub a: Pseudonym,
    pub b: Pseudonym,
    pub distance: f64,
    pub slot: u64,
}

impl ContactObservation {
    pub fn new(x: Pseudonym, y: Pseudonym, distance: f64, slot: u64) -> Self {
        let (a, b) = if x <= y { (x, y) } else { (y, x) };
        ContactObservation { a, b, distance, slot }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactBurst {
    pub a: Pseudonym,
    pub b: Pseudonym,
    pub n: u32,
    pub distances: Vec<f64>,
    pub partial_risk: f64,
    pub last_slot: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlertPair {
    pub pseudonym: Pseudonym,
    pub partial_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BroadcastBundle {
    pub pairs: Vec<AlertPair>,
    pub epoch: u64,
}

impl BroadcastBundle {
    /// `count (u32 LE)` then `pseudonym || risk (f64 LE)` per pair.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + self.pairs.len() * 24);
        out.extend_from_slice(&(self.pairs.len() as u32).to_le_bytes());
        for p in &self.pairs {
            out.extend_from_slice(&p.pseudonym.0);
            out.extend_from_slice(&p.partial_risk.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], epoch: u64) -> Result<Self, CryptoError> {
        let bad = || CryptoError::Malformed("broadcast bundle");
        let count = u32::from_le_bytes(bytes.get(..4).ok_or_else(bad)?.try_into().unwrap()) as usize;
        let body = &bytes[4..];
        if body.len() != count * 24 {
            return Err(bad());
        }
        let pairs = body
            .chunks_exact(24)
            .map(|c| AlertPair {
                pseudonym: Pseudonym(c[..16].try_into().unwrap()),
                partial_risk: f64::from_le_bytes(c[16..].try_into().unwrap()),
            })
            .collect();
        Ok(BroadcastBundle { pairs, epoch })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServerConfig {
    /// Slot length in seconds.
    pub tau: f64,
    /// Observations farther apart than this are discarded (the lattice `d`).
    pub match_distance: f64,
    pub retention_slots: u64,
    pub partial_risk: PartialRisk,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerStats {
    pub ingested: u64,
    pub dropped: u64,
    pub positives_accepted: u64,
    pub positives_rejected: u64,
}

pub struct Server {
    cfg: ServerConfig,
    opening: OpeningKey,
    hf_key: RsaPublicKey,
    buckets: BTreeMap<u64, Vec<SlottedReport>>,
    bursts: BTreeMap<(Pseudonym, Pseudonym), ContactBurst>,
    bundles: Vec<BroadcastBundle>,
    ledger: ReplayLedger,
    stats: ServerStats,
}

/// Everything the server holds, in serializable form.
#[derive(Debug, Serialize)]
pub struct ServerView<'a> {
    pub reports: Vec<&'a SlottedReport>,
    pub bursts: Vec<&'a ContactBurst>,
    pub bundles: &'a [BroadcastBundle],
    pub stats: ServerStats,
}

impl Server {
    pub fn new(cfg: ServerConfig, opening: OpeningKey, hf_key: RsaPublicKey) -> Self {
        Server {
            cfg,
            opening,
            hf_key,
            buckets: BTreeMap::new(),
            bursts: BTreeMap::new(),
            bundles: Vec::new(),
            ledger: ReplayLedger::default(),
            stats: ServerStats::default(),
        }
    }

    pub fn config(&self) -> &ServerConfig {
        &self.cfg
    }

    pub fn slot_of(&self, t_arrival: f64) -> u64 {
        (t_arrival / self.cfg.tau).floor().max(0.0) as u64
    }

    /// Opens and files a report under the slot of its arrival time.
    /// Undecryptable or malformed envelopes are counted and dropped.
    pub fn ingest(&mut self, envelope: &[u8], t_arrival: f64) -> Result<u64, CryptoError> {
        let report = self
            .opening
            .open(envelope)
            .and_then(|plain| LocationReport::decode(&plain));
        match report {
            Ok(r) => {
                let slot = self.slot_of(t_arrival);
                self.buckets.entry(slot).or_default().push(SlottedReport {
                    tag: r.tag,
                    pseudonym: r.pseudonym,
                    coord: r.coord,
                    slot,
                });
                self.stats.ingested += 1;
                Ok(slot)
            }
            Err(e) => {
                self.stats.dropped += 1;
                Err(e)
            }
        }
    }

    pub fn reports(&self, slot: u64) -> &[SlottedReport] {
        self.buckets.get(&slot).map_or(&[], Vec::as_slice)
    }

    pub fn all_reports(&self) -> impl Iterator<Item = &SlottedReport> {
        self.buckets.values().flatten()
    }

    /// Co-located pseudonym pairs in slot `k`, one per pair (the closer of
    /// the two shared cells), within the match distance.
    pub fn match_slot(&self, k: u64) -> Vec<ContactObservation> {
        let mut groups: BTreeMap<CellTag, Vec<&SlottedReport>> = BTreeMap::new();
        for r in self.reports(k) {
            groups.entry(r.tag).or_default().push(r);
        }
        let mut best: BTreeMap<(Pseudonym, Pseudonym), f64> = BTreeMap::new();
        for group in groups.values() {
            for (x, rx) in group.iter().enumerate() {
                for ry in &group[x + 1..] {
                    if rx.pseudonym == ry.pseudonym {
                        continue;
                    }
                    let d = polar_distance(rx.coord, ry.coord);
                    let obs = ContactObservation::new(rx.pseudonym, ry.pseudonym, d, k);
                    best.entry((obs.a, obs.b))
                        .and_modify(|m| *m = m.min(d))
                        .or_insert(d);
                }
            }
        }
        best.into_iter()
            .filter(|&(_, d)| d <= self.cfg.match_distance)
            .map(|((a, b), distance)| ContactObservation { a, b, distance, slot: k })
            .collect()
    }

    pub fn update_burst(&mut self, obs: &ContactObservation) {
        let key = if obs.a <= obs.b { (obs.a, obs.b) } else { (obs.b, obs.a) };
        let f = self.cfg.partial_risk;
        let burst = self.bursts.entry(key).or_insert_with(|| ContactBurst {
            a: key.0,
            b: key.1,
            n: 0,
            distances: Vec::new(),
            partial_risk: 0.0,
            last_slot: obs.slot,
        });
        burst.n += 1;
        burst.distances.push(obs.distance);
        burst.partial_risk = f.evaluate(&burst.distances);
        burst.last_slot = burst.last_slot.max(obs.slot);
    }

    /// Matches a closed slot, folds the observations into bursts and expires
    /// bursts older than the retention window.
    pub fn close_slot(&mut self, k: u64) -> Vec<ContactObservation> {
        let observations = self.match_slot(k);
        for obs in &observations {
            self.update_burst(obs);
        }
        let keep = self.cfg.retention_slots;
        self.bursts.retain(|_, b| b.last_slot + keep > k);
        observations
    }

    pub fn bursts(&self) -> impl Iterator<Item = &ContactBurst> {
        self.bursts.values()
    }

    pub fn burst(&self, x: Pseudonym, y: Pseudonym) -> Option<&ContactBurst> {
        let key = if x <= y { (x, y) } else { (y, x) };
        self.bursts.get(&key)
    }

    /// Verifies a positive-report credential, then publishes the counterpart
    /// of every burst involving one of the submitted pseudonyms.
    pub fn process_positive(
        &mut self,
        credential: &ReportCredential,
        pseudonyms: &[Pseudonym],
        epoch: u64,
    ) -> Result<BroadcastBundle, ReportRejection> {
        if let Err(e) = verify_report(credential, &self.hf_key, &mut self.ledger) {
            self.stats.positives_rejected += 1;
            return Err(e);
        }
        self.stats.positives_accepted += 1;
        let infected: BTreeSet<Pseudonym> = pseudonyms.iter().copied().collect();
        let pairs = self
            .bursts
            .values()
            .filter_map(|b| match (infected.contains(&b.a), infected.contains(&b.b)) {
                (true, false) => Some(b.b),
                (false, true) => Some(b.a),
                _ => None,
            }
            .map(|other| AlertPair {
                pseudonym: other,
                partial_risk: b.partial_risk,
            }))
            .collect();
        let bundle = BroadcastBundle { pairs, epoch };
        self.bundles.push(bundle.clone());
        Ok(bundle)
    }

    pub fn bundles(&self) -> &[BroadcastBundle] {
        &self.bundles
    }

    pub fn stats(&self) -> ServerStats {
        self.stats
    }

    pub fn view(&self) -> ServerView<'_> {
        ServerView {
            reports: self.all_reports().collect(),
            bursts: self.bursts.values().collect(),
            bundles: &self.bundles,
            stats: self.stats,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{
        blind, cell_tag, gen_report_message, sign_blinded, unblind, EnvelopeKind, RsaKeyPair,
    };
    use crate::geometry::{cells_of, centroid, to_polar, LatticeConfig, Point};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::f64::consts::PI;

    struct Fixture {
        server: Server,
        hf: RsaKeyPair,
        rng: ChaCha20Rng,
    }

    fn fixture() -> Fixture {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let hf = RsaKeyPair::generate(512, &mut rng).unwrap();
        let opening = OpeningKey::generate(EnvelopeKind::Transparent, &mut rng);
        let cfg = ServerConfig {
            tau: 60.0,
            match_distance: 10.0,
            retention_slots: 100,
            partial_risk: PartialRisk::Quadratic { d_risk: 2.0 },
        };
        Fixture {
            server: Server::new(cfg, opening, hf.public.clone()),
            hf,
            rng,
        }
    }

    fn p(b: u8) -> Pseudonym {
        Pseudonym([b; 16])
    }

    fn send(fx: &mut Fixture, tag: CellTag, who: Pseudonym, coord: PolarCoord, t: f64) {
        let plain = LocationReport { tag, pseudonym: who, coord }.encode();
        let env = fx.server.opening.sealing_key().seal(&plain, &mut fx.rng);
        fx.server.ingest(&env, t).unwrap();
    }

    fn credential(fx: &mut Fixture) -> ReportCredential {
        let m = gen_report_message(&fx.hf.public, &mut fx.rng);
        let b = blind(&m, &fx.hf.public, &mut fx.rng);
        let s = sign_blinded(&b.value, &fx.hf).unwrap();
        ReportCredential {
            sigma: unblind(&s, &b.unblinder, &fx.hf.public.n),
            message: m,
        }
    }

    #[test]
    fn slot_assignment_and_drops() {
        let mut fx = fixture();
        let tag = CellTag([1; 32]);
        send(&mut fx, tag, p(1), PolarCoord::default(), 59.9);
        send(&mut fx, tag, p(2), PolarCoord::default(), 60.0);
        assert_eq!(fx.server.reports(0).len(), 1);
        assert_eq!(fx.server.reports(1).len(), 1);
        assert!(fx.server.ingest(b"garbage", 1.0).is_err());
        assert_eq!(fx.server.stats().dropped, 1);
        assert_eq!(fx.server.stats().ingested, 2);
    }

    #[test]
    fn same_tag_right_angle() {
        let mut fx = fixture();
        let tag = CellTag([9; 32]);
        send(&mut fx, tag, p(1), PolarCoord { rho: 3.0, theta: 0.0 }, 5.0);
        send(&mut fx, tag, p(2), PolarCoord { rho: 4.0, theta: PI / 2.0 }, 7.0);
        send(&mut fx, CellTag([8; 32]), p(3), PolarCoord { rho: 3.0, theta: 0.0 }, 7.0);
        let obs = fx.server.match_slot(0);
        assert_eq!(obs.len(), 1);
        assert!((obs[0].distance - 5.0).abs() < 1e-12);
        assert_eq!((obs[0].a, obs[0].b), (p(1), p(2)));
    }

    #[test]
    fn pairs_sharing_both_cells_are_counted_once() {
        // Build genuine two-cell reports and compare against a brute-force pass.
        let mut fx = fixture();
        let lattice = LatticeConfig::new(10.0);
        let salt = [4u8; 16];
        let users = [
            (p(1), Point::new(5.0, 5.0)),
            (p(2), Point::new(6.0, 6.5)),
            (p(3), Point::new(21.0, 5.0)),
            (p(4), Point::new(19.0, 5.0)),
        ];
        for &(who, at) in &users {
            let (ca, cb) = cells_of(at, &lattice);
            for c in [ca, cb] {
                let coord = to_polar(at, centroid(c, &lattice).position);
                send(&mut fx, cell_tag(c, &salt), who, coord, 30.0);
            }
        }
        let obs = fx.server.match_slot(0);

        let mut expected = Vec::new();
        for (x, &(px, ux)) in users.iter().enumerate() {
            for &(py, uy) in &users[x + 1..] {
                let share = crate::geometry::shared_cells(ux, uy, &lattice);
                let d = ux.distance(&uy);
                if !share.is_empty() && d <= 10.0 {
                    expected.push(ContactObservation::new(px, py, d, 0));
                }
            }
        }
        expected.sort_by_key(|o| (o.a, o.b));
        assert_eq!(obs.len(), expected.len());
        for (o, e) in obs.iter().zip(&expected) {
            assert_eq!((o.a, o.b), (e.a, e.b));
            assert!((o.distance - e.distance).abs() < 1e-9);
        }
        // (5,5)-(6,6.5) share A and B cells yet appear exactly once.
        assert_eq!(obs.iter().filter(|o| o.a == p(1) && o.b == p(2)).count(), 1);
    }

    #[test]
    fn self_pairs_and_far_pairs_are_excluded() {
        let mut fx = fixture();
        let tag = CellTag([2; 32]);
        send(&mut fx, tag, p(1), PolarCoord { rho: 1.0, theta: 0.0 }, 1.0);
        send(&mut fx, tag, p(1), PolarCoord { rho: 1.0, theta: 1.0 }, 2.0);
        send(&mut fx, tag, p(2), PolarCoord { rho: 12.0, theta: PI }, 2.0);
        assert!(fx.server.match_slot(0).is_empty());
    }

    #[test]
    fn bursts_accumulate_under_canonical_key() {
        let mut fx = fixture();
        fx.server.update_burst(&ContactObservation::new(p(2), p(1), 1.0, 0));
        let b = fx.server.burst(p(1), p(2)).unwrap();
        assert_eq!((b.n, b.distances.clone()), (1, vec![1.0]));
        assert!((b.partial_risk - 0.25).abs() < 1e-12);
        fx.server.update_burst(&ContactObservation::new(p(1), p(2), 0.0, 1));
        let b = fx.server.burst(p(2), p(1)).unwrap();
        assert_eq!(b.n, 2);
        assert_eq!(b.distances.len(), 2);
        assert!((b.partial_risk - 1.25).abs() < 1e-12);
        assert_eq!(fx.server.bursts().count(), 1);
    }

    #[test]
    fn default_risk_values() {
        assert_eq!(partial_risk_default(&[0.0], 2.0), 1.0);
        assert_eq!(partial_risk_default(&[2.0], 2.0), 0.0);
        assert_eq!(partial_risk_default(&[1.0], 2.0), 0.25);
        assert_eq!(partial_risk_default(&[5.0], 2.0), 0.0);
    }

    #[test]
    fn positive_report_publishes_counterparts_only() {
        let mut fx = fixture();
        let cred = credential(&mut fx);
        let empty = fx.server.process_positive(&cred, &[p(7)], 3).unwrap();
        assert!(empty.pairs.is_empty());

        fx.server.bursts.insert(
            (p(1), p(5)),
            ContactBurst {
                a: p(1),
                b: p(5),
                n: 2,
                distances: vec![1.0, 1.2],
                partial_risk: 0.4,
                last_slot: 2,
            },
        );
        let cred = credential(&mut fx);
        let bundle = fx.server.process_positive(&cred, &[p(5), p(6)], 3).unwrap();
        assert_eq!(
            bundle.pairs,
            vec![AlertPair {
                pseudonym: p(1),
                partial_risk: 0.4
            }]
        );
        assert_eq!(
            fx.server.process_positive(&cred, &[p(5)], 4),
            Err(ReportRejection::Replay)
        );
        let mut bad = credential(&mut fx);
        bad.sigma += 1u32;
        assert_eq!(
            fx.server.process_positive(&bad, &[p(5)], 4),
            Err(ReportRejection::BadSignature)
        );
        assert_eq!(fx.server.bundles().len(), 2);
    }

    #[test]
    fn bundle_wire_format() {
        let bundle = BroadcastBundle {
            pairs: vec![
                AlertPair { pseudonym: p(3), partial_risk: 0.5 },
                AlertPair { pseudonym: p(4), partial_risk: 1.25 },
            ],
            epoch: 9,
        };
        let bytes = bundle.encode();
        assert_eq!(bytes.len(), 4 + 2 * 24);
        assert_eq!(&bytes[..4], &2u32.to_le_bytes());
        assert_eq!(BroadcastBundle::decode(&bytes, 9).unwrap(), bundle);
        assert!(BroadcastBundle::decode(&bytes[..10], 9).is_err());
    }

    #[test]
    fn report_payload_layout() {
        let r = LocationReport {
            tag: CellTag([0xab; 32]),
            pseudonym: p(0xcd),
            coord: PolarCoord { rho: 2.5, theta: -1.0 },
        };
        let bytes = r.encode();
        assert_eq!(bytes.len(), 64);
        assert_eq!(&bytes[48..56], &2.5f64.to_le_bytes());
        assert_eq!(LocationReport::decode(&bytes).unwrap(), r);
        assert!(LocationReport::decode(&bytes[1..]).is_err());
    }

    #[test]
    fn retention_expires_old_bursts() {
        let mut fx = fixture();
        fx.server.cfg.retention_slots = 3;
        fx.server.update_burst(&ContactObservation::new(p(1), p(2), 1.0, 0));
        fx.server.close_slot(2);
        assert_eq!(fx.server.bursts().count(), 1);
        fx.server.close_slot(3);
        assert_eq!(fx.server.bursts().count(), 0);
    }
}
