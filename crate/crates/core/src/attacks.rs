//! Adversary experiments. Each attack runs against a scenario derived from a
//! base configuration and decides its outcome from measured evidence; each
//! also runs a control variant that the same decision rule must classify the
//! other way.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::client::{BlindingMode, UserAgent};
use crate::crypto::{cell_tag, AreaSalt, CellTag, ReportCredential, RsaKeyPair, SALT_LEN};
use crate::error::ConfigError;
use crate::geometry::{CellId, Point};
use crate::issuers::{mask_bits, HealthFacility, HfLogEntry, QId};
use crate::server::{AlertPair, BroadcastBundle};
use crate::simnet::{AgentSpec, Event, ForgedPayload, RadioBehavior, World, WorldConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attack {
    Paparazzi,
    Orwell,
    Brutus,
    Gossip,
    Matteotti,
    Missile,
    Fregoli,
    Battleship,
}

impl Attack {
    pub const ALL: [Attack; 8] = [
        Attack::Paparazzi,
        Attack::Orwell,
        Attack::Brutus,
        Attack::Gossip,
        Attack::Matteotti,
        Attack::Missile,
        Attack::Fregoli,
        Attack::Battleship,
    ];

    /// The outcome the protocol's design claims.
    pub fn expected(self) -> Outcome {
        match self {
            Attack::Matteotti => Outcome::Vulnerable,
            _ => Outcome::Resists,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Attack::Paparazzi => "paparazzi",
            Attack::Orwell => "orwell",
            Attack::Brutus => "brutus",
            Attack::Gossip => "gossip",
            Attack::Matteotti => "matteotti",
            Attack::Missile => "missile",
            Attack::Fregoli => "fregoli",
            Attack::Battleship => "battleship",
        }
    }

    /// Parses `all` or a comma-separated list of names.
    pub fn parse_list(s: &str) -> Result<Vec<Attack>, String> {
        if s.trim() == "all" {
            return Ok(Attack::ALL.to_vec());
        }
        s.split(',').map(|p| p.trim().parse()).collect()
    }
}

impl fmt::Display for Attack {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attack {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Attack::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown attack {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Resists,
    Vulnerable,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Resists => "resists",
            Outcome::Vulnerable => "vulnerable",
        })
    }
}

pub type Evidence = BTreeMap<String, f64>;

/// A deliberately altered variant and how the detector classified it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlResult {
    pub description: String,
    pub expected: Outcome,
    pub outcome: Outcome,
    pub evidence: Evidence,
}

impl ControlResult {
    pub fn passed(&self) -> bool {
        self.outcome == self.expected
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackReport {
    pub attack: Attack,
    pub outcome: Outcome,
    pub evidence: Evidence,
    pub control: ControlResult,
}

impl AttackReport {
    pub fn matches_expected(&self) -> bool {
        self.outcome == self.attack.expected()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AttackError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("the distinguishing game needs at least two requesters, got {0}")]
    Undefined(usize),
}

/// Knobs for the expensive experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackOptions {
    pub brutus_requesters: usize,
    pub brutus_trials: usize,
    pub battleship_budget: u64,
    /// Run independent attacks on separate threads.
    pub parallel: bool,
}

impl Default for AttackOptions {
    fn default() -> Self {
        AttackOptions {
            brutus_requesters: 100,
            brutus_trials: 1000,
            battleship_budget: 100_000,
            parallel: true,
        }
    }
}

fn ev<const N: usize>(pairs: [(&str, f64); N]) -> Evidence {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn center(cfg: &WorldConfig) -> Point {
    let r = cfg.region;
    Point::new(0.5 * (r.min.x + r.max.x), 0.5 * (r.min.y + r.max.y))
}

fn offset(p: Point, dx: f64, dy: f64) -> Point {
    Point::new(p.x + dx, p.y + dy)
}

/// Indices of agents planted on top of the base population.
#[derive(Debug, Clone, Copy)]
struct Planted {
    infected: usize,
    contact: usize,
    victim: usize,
}

/// Base population plus an infected user at the center, a contact 1 m away
/// and a victim at least 60 m away near the western edge.
fn planted(base: &WorldConfig) -> (WorldConfig, Planted) {
    let mut cfg = base.clone();
    let c = center(base);
    let k = cfg.agents.len();
    cfg.agents.push(AgentSpec::at(c.x, c.y).infected());
    cfg.agents.push(AgentSpec::at(c.x + 1.0, c.y));
    cfg.agents.push(AgentSpec::at(base.region.min.x + 25.0, c.y));
    (
        cfg,
        Planted {
            infected: k,
            contact: k + 1,
            victim: k + 2,
        },
    )
}

/// Pseudonyms that leave the server: broadcast counterparts and the
/// pseudonyms submitted with positive reports.
fn published_pseudonyms(world: &World) -> HashSet<[u8; 16]> {
    let mut out = HashSet::new();
    for e in world.log.events() {
        match e {
            Event::Bundle { bundle, .. } => out.extend(bundle.pairs.iter().map(|p| p.pseudonym.0)),
            Event::Positive { pseudonyms, .. } => out.extend(pseudonyms.iter().map(|p| p.0)),
            _ => {}
        }
    }
    out
}

/// Number of transcripts containing any published pseudonym as a substring.
pub fn transcript_hits<'a>(transcripts: impl IntoIterator<Item = &'a [u8]>, published: &HashSet<[u8; 16]>) -> usize {
    transcripts
        .into_iter()
        .filter(|t| t.windows(16).any(|w| published.contains(w)))
        .count()
}

fn linkage_outcome(hits: usize) -> Outcome {
    if hits == 0 {
        Outcome::Resists
    } else {
        Outcome::Vulnerable
    }
}

fn paparazzi_once(cfg: WorldConfig) -> Result<(Outcome, Evidence), ConfigError> {
    let mut cfg = cfg;
    cfg.sniffers = cfg.agents.iter().map(|a| a.position).collect();
    let world = World::run(cfg)?;
    let published = published_pseudonyms(&world);
    let transcripts: Vec<&[u8]> = world
        .log
        .events()
        .iter()
        .filter_map(|e| match e {
            Event::Sniff { payload, .. } => Some(payload.as_slice()),
            _ => None,
        })
        .collect();
    let hits = transcript_hits(transcripts.iter().copied(), &published);
    Ok((
        linkage_outcome(hits),
        ev([
            ("sniffers", world.config.sniffers.len() as f64),
            ("sniffed_payloads", transcripts.len() as f64),
            ("published_pseudonyms", published.len() as f64),
            ("intersection", hits as f64),
        ]),
    ))
}

/// Passive sniffers at every user's starting point try to link captured
/// beacon bytes to pseudonyms the server later publishes.
pub fn run_paparazzi(base: &WorldConfig) -> Result<AttackReport, AttackError> {
    let (cfg, p) = planted(base);
    let (outcome, evidence) = paparazzi_once(cfg.clone())?;
    let mut broken = cfg;
    broken.agents[p.contact].radio = RadioBehavior::LeakPseudonym;
    let (c_outcome, c_evidence) = paparazzi_once(broken)?;
    Ok(AttackReport {
        attack: Attack::Paparazzi,
        outcome,
        evidence,
        control: ControlResult {
            description: "contact's client appends its pseudonym to beacons".into(),
            expected: Outcome::Vulnerable,
            outcome: c_outcome,
            evidence: c_evidence,
        },
    })
}

fn gossip_once(cfg: WorldConfig, adversary: usize) -> Result<(Outcome, Evidence), ConfigError> {
    let world = World::run(cfg)?;
    let published = published_pseudonyms(&world);
    let archive: Vec<&[u8]> = world
        .log
        .events()
        .iter()
        .filter_map(|e| match e {
            Event::Beacon(r) if r.receiver == adversary => Some(r.payload.as_slice()),
            _ => None,
        })
        .collect();
    let hits = transcript_hits(archive.iter().copied(), &published);
    Ok((
        linkage_outcome(hits),
        ev([
            ("archived_payloads", archive.len() as f64),
            ("published_pseudonyms", published.len() as f64),
            ("intersection", hits as f64),
        ]),
    ))
}

/// A user next to an infected person archives everything received over the
/// radio and tries to prove the encounter once the infection is published.
pub fn run_gossip(base: &WorldConfig) -> Result<AttackReport, AttackError> {
    let (cfg, p) = planted(base);
    let (outcome, evidence) = gossip_once(cfg.clone(), p.contact)?;
    let mut broken = cfg;
    broken.agents[p.infected].radio = RadioBehavior::LeakPseudonym;
    let (c_outcome, c_evidence) = gossip_once(broken, p.contact)?;
    Ok(AttackReport {
        attack: Attack::Gossip,
        outcome,
        evidence,
        control: ControlResult {
            description: "infected user's client appends its pseudonym to beacons".into(),
            expected: Outcome::Vulnerable,
            outcome: c_outcome,
            evidence: c_evidence,
        },
    })
}

/// Every logged report's true cell and tag.
fn report_truth(world: &World) -> Vec<(CellId, CellTag)> {
    world
        .log
        .events()
        .iter()
        .filter_map(|e| match e {
            Event::Report(r) if r.ingested => Some((r.cell, r.tag)),
            _ => None,
        })
        .collect()
}

fn logged_salts(world: &World) -> Vec<AreaSalt> {
    world
        .log
        .events()
        .iter()
        .filter_map(|e| match e {
            Event::Salt { salt, .. } => Some(*salt),
            _ => None,
        })
        .collect()
}

/// The public centroid set: every cell near the covered region. Estimates can
/// stray past the region edge by GPS error plus one negotiation step.
pub fn public_cells(world: &World) -> Vec<CellId> {
    let m = 5.0 * world.config.sigma_gps + world.config.ble_range;
    let r = world.grid.region;
    world
        .grid
        .lattice
        .cells_covering(offset(r.min, -m, -m), offset(r.max, m, m))
}

fn dictionary(cells: &[CellId], salts: &[[u8; SALT_LEN]]) -> HashMap<CellTag, CellId> {
    let mut out = HashMap::with_capacity(cells.len() * salts.len());
    for salt in salts {
        for &c in cells {
            out.insert(cell_tag(c, salt), c);
        }
    }
    out
}

/// Fraction of reports recovered inside and outside the colluded areas.
pub fn orwell_recovery(world: &World, colluded: &BTreeSet<QId>) -> Evidence {
    let mut salts: Vec<[u8; SALT_LEN]> = logged_salts(world)
        .into_iter()
        .filter(|s| colluded.contains(&s.area))
        .map(|s| s.value)
        .collect();
    // Also try the unsalted tags.
    salts.push([0; SALT_LEN]);
    let dict = dictionary(&public_cells(world), &salts);
    let (mut inside, mut inside_hit, mut outside, mut outside_hit) = (0u64, 0u64, 0u64, 0u64);
    for (cell, tag) in report_truth(world) {
        let hit = dict.get(&tag) == Some(&cell);
        if colluded.contains(&world.grid.area_of_cell(cell)) {
            inside += 1;
            inside_hit += hit as u64;
        } else {
            outside += 1;
            outside_hit += hit as u64;
        }
    }
    let rate = |h: u64, n: u64| if n == 0 { 0.0 } else { h as f64 / n as f64 };
    ev([
        ("colluded_areas", colluded.len() as f64),
        ("areas", world.grid.areas().len() as f64),
        ("reports_inside", inside as f64),
        ("reports_outside", outside as f64),
        ("recovery_inside", rate(inside_hit, inside)),
        ("recovery_outside", rate(outside_hit, outside)),
    ])
}

fn orwell_outcome(e: &Evidence) -> Outcome {
    let local = e["recovery_outside"] == 0.0 && e["reports_inside"] > 0.0 && e["recovery_inside"] == 1.0;
    if local {
        Outcome::Resists
    } else {
        Outcome::Vulnerable
    }
}

/// The server colludes with partners who receive the salts of some areas.
/// Compromise must stay confined to those areas.
pub fn run_orwell(base: &WorldConfig, colluded: &BTreeSet<QId>) -> Result<AttackReport, AttackError> {
    let world = World::run(base.clone())?;
    let evidence = orwell_recovery(&world, colluded);
    let mut broken = base.clone();
    broken.salt_bits = 0;
    let c_world = World::run(broken)?;
    let c_evidence = orwell_recovery(&c_world, colluded);
    Ok(AttackReport {
        attack: Attack::Orwell,
        outcome: orwell_outcome(&evidence),
        evidence,
        control: ControlResult {
            description: "salts carry no entropy".into(),
            expected: Outcome::Vulnerable,
            outcome: orwell_outcome(&c_evidence),
            evidence: c_evidence,
        },
    })
}

/// Requester identities with their facility log entries, and the credentials
/// the server later sees, keyed by the (hidden) requester.
pub struct BrutusView {
    pub hf_log: Vec<HfLogEntry>,
    pub credentials: Vec<(usize, ReportCredential)>,
}

pub fn brutus_view(rsa_bits: usize, requesters: usize, mode: BlindingMode, seed: u64) -> Result<BrutusView, ConfigError> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let keys = RsaKeyPair::generate(rsa_bits, &mut rng).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    let mut hf = HealthFacility::new(keys);
    let client = crate::client::ClientConfig {
        rotation_slots: 1,
        retention_slots: 1,
        alert_threshold: 1.0,
        total_risk: Default::default(),
    };
    let mut credentials = Vec::with_capacity(requesters);
    for id in 0..requesters {
        hf.register_positive(id);
        let user = UserAgent::new(id, Point::default(), client, &mut rng);
        let cred = user
            .request_credential(&mut hf, 0, mode, &mut rng)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        credentials.push((id, cred));
    }
    Ok(BrutusView {
        hf_log: hf.log().to_vec(),
        credentials,
    })
}

/// Colluding facility and server: shown two log entries and one credential,
/// guess which requester it belongs to by picking the blinded value closest
/// to the message. Returns the accuracy.
pub fn brutus_game<R: RngCore>(view: &BrutusView, trials: usize, rng: &mut R) -> Result<f64, AttackError> {
    let n = view.credentials.len();
    if n < 2 {
        return Err(AttackError::Undefined(n));
    }
    let entry = |id: usize| view.hf_log.iter().find(|e| e.requester == id).expect("every requester signed");
    let gap = |a: &BigUint, b: &BigUint| if a > b { a - b } else { b - a };
    let mut correct = 0;
    for _ in 0..trials {
        let (x, cred) = &view.credentials[rng.gen_range(0..n)];
        let y = loop {
            let y = view.credentials[rng.gen_range(0..n)].0;
            if y != *x {
                break y;
            }
        };
        let mut pair = [*x, y];
        pair.shuffle(rng);
        let m = cred.message.to_int();
        let guess = if gap(&entry(pair[0]).blinded, &m) <= gap(&entry(pair[1]).blinded, &m) {
            pair[0]
        } else {
            pair[1]
        };
        correct += (guess == *x) as usize;
    }
    Ok(correct as f64 / trials as f64)
}

fn brutus_outcome(accuracy: f64) -> Outcome {
    if (0.45..=0.55).contains(&accuracy) {
        Outcome::Resists
    } else {
        Outcome::Vulnerable
    }
}

pub fn run_brutus(base: &WorldConfig, opts: &AttackOptions) -> Result<AttackReport, AttackError> {
    let run = |mode, stream: u64| -> Result<Evidence, AttackError> {
        let view = brutus_view(base.rsa_bits, opts.brutus_requesters, mode, base.seed ^ stream)?;
        let mut rng = ChaCha20Rng::seed_from_u64(base.seed ^ stream ^ 0xb5);
        let accuracy = brutus_game(&view, opts.brutus_trials, &mut rng)?;
        Ok(ev([
            ("requesters", opts.brutus_requesters as f64),
            ("trials", opts.brutus_trials as f64),
            ("accuracy", accuracy),
        ]))
    };
    let evidence = run(BlindingMode::Uniform, 0x1000)?;
    let c_evidence = run(BlindingMode::Unit, 0x2000)?;
    Ok(AttackReport {
        attack: Attack::Brutus,
        outcome: brutus_outcome(evidence["accuracy"]),
        control: ControlResult {
            description: "blinding factor fixed to 1".into(),
            expected: Outcome::Vulnerable,
            outcome: brutus_outcome(c_evidence["accuracy"]),
            evidence: c_evidence,
        },
        evidence,
    })
}

/// A malicious server pushes a fabricated pair to a victim who met nobody.
pub fn run_matteotti(base: &WorldConfig) -> Result<AttackReport, AttackError> {
    let (cfg, p) = planted(base);
    let world = World::run(cfg)?;
    let victim = &world.agents[p.victim];
    let threshold = world.config.alert_threshold;
    let fabricate = |risk: f64| {
        let mut v = victim.clone();
        let bundle = BroadcastBundle {
            pairs: vec![AlertPair {
                pseudonym: v.current_pseudonym,
                partial_risk: risk,
            }],
            epoch: world.slot(),
        };
        v.process_alerts(&bundle.pairs)
    };
    let above = fabricate(2.0 * threshold);
    let below = fabricate(0.2 * threshold);
    let honest = victim.alert_state();
    let decide = |alerted: bool| if alerted { Outcome::Vulnerable } else { Outcome::Resists };
    Ok(AttackReport {
        attack: Attack::Matteotti,
        outcome: decide(above.alerted && !honest.alerted),
        evidence: ev([
            ("fabricated_risk", 2.0 * threshold),
            ("victim_alerted", above.alerted as u8 as f64),
            ("below_threshold_alerted", below.alerted as u8 as f64),
            ("honest_alerted", honest.alerted as u8 as f64),
        ]),
        control: ControlResult {
            description: "server publishes only genuine bursts".into(),
            expected: Outcome::Resists,
            outcome: decide(honest.alerted),
            evidence: ev([("victim_total_risk", honest.total_risk)]),
        },
    })
}

fn victim_alert(world: &World, victim: usize) -> (f64, bool) {
    let s = world.agents[victim].alert_state();
    (s.total_risk, s.alerted)
}

fn victim_metrics(world: &World, victim: usize, attacker: usize) -> (usize, usize, usize) {
    let mut forged = 0;
    let mut locked_on = 0;
    let mut dropped = 0;
    for e in world.log.events() {
        match e {
            Event::Beacon(r) if r.receiver == victim && r.forged => forged += 1,
            Event::Agent(a) if a.agent == victim => {
                locked_on += (a.negotiated_with == Some(attacker)) as usize;
                dropped += a.dropped;
            }
            _ => {}
        }
    }
    (forged, locked_on, dropped)
}

/// An infected attacker far away amplifies beacons into the victim's radio
/// neighborhood, hoping to be matched with the victim.
pub fn run_missile(base: &WorldConfig) -> Result<AttackReport, AttackError> {
    let c = center(base);
    let k = base.agents.len();
    let (victim, attacker) = (k, k + 1);
    let victim_at = Point::new(base.region.min.x + 25.0, c.y);
    let attacker_at = Point::new(base.region.min.x + 135.0, c.y);
    let build = |attacker_at: Point, radio: RadioBehavior| {
        let mut cfg = base.clone();
        cfg.agents.push(AgentSpec::at(victim_at.x, victim_at.y));
        cfg.agents.push(AgentSpec {
            radio,
            ..AgentSpec::at(attacker_at.x, attacker_at.y).infected()
        });
        cfg
    };
    let amplified = |payload| RadioBehavior::Amplified {
        targets: vec![victim],
        apparent_distance: 1.0,
        payload,
    };

    let world = World::run(build(
        attacker_at,
        amplified(ForgedPayload::SpoofNear {
            target: victim,
            offset: Point::new(1.0, 0.0),
        }),
    ))?;
    let (risk, alerted) = victim_alert(&world, victim);
    let (forged, locked_on, _) = victim_metrics(&world, victim, attacker);

    let guard = World::run(build(attacker_at, amplified(ForgedPayload::Spoof { at: attacker_at })))?;
    let (guard_risk, _) = victim_alert(&guard, victim);
    let (_, _, guard_dropped) = victim_metrics(&guard, victim, attacker);

    let control = World::run(build(offset(victim_at, 1.0, 0.0), RadioBehavior::Honest))?;
    let (c_risk, c_alerted) = victim_alert(&control, victim);

    let decide = |risk: f64, alerted: bool| {
        if risk == 0.0 && !alerted {
            Outcome::Resists
        } else {
            Outcome::Vulnerable
        }
    };
    Ok(AttackReport {
        attack: Attack::Missile,
        outcome: decide(risk, alerted),
        evidence: ev([
            ("attacker_distance", victim_at.distance(&attacker_at)),
            ("forged_beacons_delivered", forged as f64),
            ("victim_locked_on_forgery", locked_on as f64),
            ("victim_total_risk", risk),
            ("guard_dropped", guard_dropped as f64),
            ("guard_victim_total_risk", guard_risk),
        ]),
        control: ControlResult {
            description: "infected attacker actually stands 1 m from the victim".into(),
            expected: Outcome::Vulnerable,
            outcome: decide(c_risk, c_alerted),
            evidence: ev([("victim_total_risk", c_risk), ("victim_alerted", c_alerted as u8 as f64)]),
        },
    })
}

/// Final alert decision and risk of every agent.
fn alert_table(world: &World) -> Vec<(bool, f64)> {
    world
        .agents
        .iter()
        .map(|a| {
            let s = a.alert_state();
            (s.alerted, s.total_risk)
        })
        .collect()
}

fn alert_diff(a: &[(bool, f64)], b: &[(bool, f64)]) -> usize {
    a.iter()
        .zip(b)
        .filter(|(x, y)| x.0 != y.0 || (x.1 - y.1).abs() > 1e-9)
        .count()
        + a.len().abs_diff(b.len())
}

/// An adversary next to an infected user replays the beacons it captures to
/// a distant victim, as if they were its own.
pub fn run_fregoli(base: &WorldConfig) -> Result<AttackReport, AttackError> {
    let (cfg, p) = planted(base);
    let replayer = p.contact;
    let baseline = World::run(cfg.clone())?;
    let mut attack = cfg.clone();
    attack.agents[replayer].radio = RadioBehavior::Amplified {
        targets: vec![p.victim],
        apparent_distance: 1.0,
        payload: ForgedPayload::Replay,
    };
    let attacked = World::run(attack)?;
    let diff = alert_diff(&alert_table(&baseline), &alert_table(&attacked));
    let (replayed, _, dropped) = victim_metrics(&attacked, p.victim, replayer);

    let mut control = cfg;
    let v = control.agents[p.victim].position;
    control.agents[replayer] = AgentSpec::at(v.x + 1.0, v.y).infected();
    let controlled = World::run(control)?;
    let c_diff = alert_diff(&alert_table(&baseline), &alert_table(&controlled));
    let v_pseudonyms = controlled.agents[p.victim].pseudonyms();
    let r_pseudonyms = controlled.agents[replayer].pseudonyms();
    let contact_recorded = controlled
        .server
        .bursts()
        .any(|b| (v_pseudonyms.contains(&b.a) && r_pseudonyms.contains(&b.b)) || (v_pseudonyms.contains(&b.b) && r_pseudonyms.contains(&b.a)));

    let decide = |diff: usize| if diff == 0 { Outcome::Resists } else { Outcome::Vulnerable };
    Ok(AttackReport {
        attack: Attack::Fregoli,
        outcome: decide(diff),
        evidence: ev([
            ("replayed_beacons", replayed as f64),
            ("victim_guard_drops", dropped as f64),
            ("alert_diff_vs_baseline", diff as f64),
        ]),
        control: ControlResult {
            description: "infected adversary physically next to the victim".into(),
            expected: Outcome::Vulnerable,
            outcome: decide(c_diff),
            evidence: ev([
                ("alert_diff_vs_baseline", c_diff as f64),
                ("contact_recorded", contact_recorded as u8 as f64),
            ]),
        },
    })
}

/// Dictionary attack on the server's tags.
///
/// With `known_salts` the dictionary is every cell under every given salt.
/// Without, it tries `budget` salt guesses drawn from the configured salt
/// space (the whole space when it is no larger than the budget) against
/// every cell. Returns recovered and total report counts.
pub fn battleship<R: RngCore>(world: &World, known_salts: Option<&[AreaSalt]>, budget: u64, rng: &mut R) -> (u64, u64) {
    let truth = report_truth(world);
    let cells = public_cells(world);
    let mut wanted: HashMap<CellTag, CellId> = truth.iter().map(|&(c, t)| (t, c)).collect();
    let total = truth.len() as u64;
    let mut found: HashSet<CellTag> = HashSet::new();
    let mut try_salt = |salt: &[u8; SALT_LEN], wanted: &mut HashMap<CellTag, CellId>| {
        for &c in &cells {
            let t = cell_tag(c, salt);
            if wanted.get(&t) == Some(&c) {
                wanted.remove(&t);
                found.insert(t);
            }
        }
    };
    match known_salts {
        Some(salts) => {
            for s in salts {
                try_salt(&s.value, &mut wanted);
            }
        }
        None => {
            let bits = world.config.salt_bits;
            if bits < 64 && (1u64 << bits) <= budget {
                for v in 0..(1u64 << bits) {
                    let mut salt = [0u8; SALT_LEN];
                    // Salt bits are the leading bits of the value.
                    let shifted = if bits == 0 { 0 } else { v << (64 - bits) };
                    salt[..8].copy_from_slice(&shifted.to_be_bytes());
                    try_salt(&salt, &mut wanted);
                }
            } else {
                for _ in 0..budget {
                    let mut salt = [0u8; SALT_LEN];
                    rng.fill_bytes(&mut salt);
                    mask_bits(&mut salt, bits);
                    try_salt(&salt, &mut wanted);
                    if wanted.is_empty() {
                        break;
                    }
                }
            }
        }
    }
    let recovered = truth.iter().filter(|(_, t)| found.contains(t)).count() as u64;
    (recovered, total)
}

fn battleship_evidence(world: &World, budget: u64, seed: u64) -> Evidence {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let salts = logged_salts(world);
    let (known, total) = battleship(world, Some(&salts), 0, &mut rng);
    let (blind, _) = battleship(world, None, budget, &mut rng);
    let rate = |r: u64| if total == 0 { 0.0 } else { r as f64 / total as f64 };
    ev([
        ("salt_bits", world.config.salt_bits as f64),
        ("centroids", public_cells(world).len() as f64),
        ("reports", total as f64),
        ("guess_budget", budget as f64),
        ("recovery_known_salt", rate(known)),
        ("recovery_unknown_salt", rate(blind)),
    ])
}

fn battleship_outcome(e: &Evidence) -> Outcome {
    if e["recovery_unknown_salt"] == 0.0 {
        Outcome::Resists
    } else {
        Outcome::Vulnerable
    }
}

/// The server guesses salts and enumerates centroids to locate users.
pub fn run_battleship(base: &WorldConfig, budget: u64) -> Result<AttackReport, AttackError> {
    let world = World::run(base.clone())?;
    let evidence = battleship_evidence(&world, budget, base.seed ^ 0xba77);
    let mut weak = base.clone();
    weak.salt_bits = 8;
    let weak_world = World::run(weak)?;
    let c_evidence = battleship_evidence(&weak_world, budget, base.seed ^ 0xba78);
    Ok(AttackReport {
        attack: Attack::Battleship,
        outcome: battleship_outcome(&evidence),
        evidence,
        control: ControlResult {
            description: "salts shortened to 8 bits".into(),
            expected: Outcome::Vulnerable,
            outcome: battleship_outcome(&c_evidence),
            evidence: c_evidence,
        },
    })
}

/// The area holding the region's center, which the Orwell partner joins.
pub fn central_area(base: &WorldConfig) -> Result<QId, ConfigError> {
    let grid = crate::issuers::AreaGrid::new(
        base.region,
        base.area_pitch_cells,
        crate::geometry::LatticeConfig::new(base.d),
    )?;
    grid.area_of(center(base))
        .ok_or_else(|| ConfigError::Invalid("region has no center".into()))
}

pub fn run_attack(attack: Attack, base: &WorldConfig, opts: &AttackOptions) -> Result<AttackReport, AttackError> {
    match attack {
        Attack::Paparazzi => run_paparazzi(base),
        Attack::Orwell => run_orwell(base, &BTreeSet::from([central_area(base)?])),
        Attack::Brutus => run_brutus(base, opts),
        Attack::Gossip => run_gossip(base),
        Attack::Matteotti => run_matteotti(base),
        Attack::Missile => run_missile(base),
        Attack::Fregoli => run_fregoli(base),
        Attack::Battleship => run_battleship(base, opts.battleship_budget),
    }
}

/// Runs the requested attacks, in the given order.
pub fn run_attacks(attacks: &[Attack], base: &WorldConfig, opts: &AttackOptions) -> Result<Vec<AttackReport>, AttackError> {
    if !opts.parallel {
        return attacks.iter().map(|&a| run_attack(a, base, opts)).collect();
    }
    std::thread::scope(|s| {
        let handles: Vec<_> = attacks
            .iter()
            .map(|&a| s.spawn(move || run_attack(a, base, opts)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("attack thread panicked"))
            .collect()
    })
}

/// Eight-row table: attack, expected outcome, observed outcome, control.
pub fn render_table(reports: &[AttackReport]) -> String {
    let mut out = format!(
        "{:<11} {:<11} {:<11} {:<6} {}\n",
        "attack", "expected", "observed", "match", "control"
    );
    for r in reports {
        out.push_str(&format!(
            "{:<11} {:<11} {:<11} {:<6} {} ({})\n",
            r.attack.name(),
            r.attack.expected().to_string(),
            r.outcome.to_string(),
            if r.matches_expected() { "yes" } else { "NO" },
            if r.control.passed() { "ok" } else { "FAILED" },
            r.control.outcome,
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::issuers::Rect;

    fn small_base() -> WorldConfig {
        let region = Rect {
            min: Point::new(0.0, 0.0),
            max: Point::new(180.0, 180.0),
        };
        let mut cfg = WorldConfig::new(21, 4, region).insecure_fast_crypto();
        cfg.area_pitch_cells = 3;
        cfg.agents = (0..9)
            .map(|i| AgentSpec::at(30.0 + 60.0 * (i % 3) as f64, 30.0 + 60.0 * (i / 3) as f64))
            .collect();
        cfg
    }

    #[test]
    fn names_round_trip() {
        for a in Attack::ALL {
            assert_eq!(a.name().parse::<Attack>().unwrap(), a);
        }
        assert_eq!(Attack::parse_list("all").unwrap().len(), 8);
        assert_eq!(Attack::parse_list("missile, brutus").unwrap(), vec![Attack::Missile, Attack::Brutus]);
        assert!(Attack::parse_list("nope").is_err());
    }

    #[test]
    fn transcript_detector() {
        let published: HashSet<[u8; 16]> = [[7u8; 16]].into();
        let clean = vec![0u8; 50];
        let mut leaky = vec![1u8; 40];
        leaky[20..36].copy_from_slice(&[7; 16]);
        assert_eq!(transcript_hits([clean.as_slice()], &published), 0);
        assert_eq!(transcript_hits([clean.as_slice(), leaky.as_slice()], &published), 1);
        assert_eq!(transcript_hits([leaky.as_slice()], &HashSet::new()), 0);
    }

    #[test]
    fn paparazzi_without_infections_is_vacuous() {
        let (outcome, e) = paparazzi_once(small_base()).unwrap();
        assert_eq!(outcome, Outcome::Resists);
        assert_eq!(e["published_pseudonyms"], 0.0);
    }

    #[test]
    fn orwell_bounds() {
        let world = World::run(small_base()).unwrap();
        let none = orwell_recovery(&world, &BTreeSet::new());
        assert_eq!(none["recovery_inside"], 0.0);
        assert_eq!(none["recovery_outside"], 0.0);
        let all: BTreeSet<QId> = world.grid.areas().into_iter().collect();
        let every = orwell_recovery(&world, &all);
        assert_eq!(every["recovery_inside"], 1.0);
        assert_eq!(every["reports_outside"], 0.0);
        let one = orwell_recovery(&world, &BTreeSet::from([QId { i: 1, j: 1 }]));
        assert_eq!(one["recovery_inside"], 1.0);
        assert_eq!(one["recovery_outside"], 0.0);
    }

    #[test]
    fn brutus_needs_two_requesters() {
        let view = brutus_view(512, 1, BlindingMode::Uniform, 1).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert!(matches!(brutus_game(&view, 10, &mut rng), Err(AttackError::Undefined(1))));
    }

    #[test]
    fn brutus_unit_blinding_is_fully_linkable() {
        let view = brutus_view(512, 10, BlindingMode::Unit, 2).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        assert_eq!(brutus_game(&view, 200, &mut rng).unwrap(), 1.0);
    }

    #[test]
    fn battleship_known_and_weak_salts() {
        let mut cfg = small_base();
        let world = World::run(cfg.clone()).unwrap();
        let e = battleship_evidence(&world, 1000, 3);
        assert_eq!(e["recovery_known_salt"], 1.0);
        assert_eq!(e["recovery_unknown_salt"], 0.0);
        cfg.salt_bits = 8;
        let weak = World::run(cfg).unwrap();
        let e = battleship_evidence(&weak, 1000, 3);
        assert_eq!(e["recovery_unknown_salt"], 1.0);
    }

    #[test]
    fn matteotti_fabrication_alerts() {
        let r = run_matteotti(&small_base()).unwrap();
        assert_eq!(r.outcome, Outcome::Vulnerable);
        assert_eq!(r.evidence["below_threshold_alerted"], 0.0);
        assert!(r.control.passed());
    }
}
