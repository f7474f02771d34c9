//! Independent replay of a scenario log.
//!
//! Starting from logged ground truth (true positions, GPS noise draws, radio
//! distance draws, beacon bytes and salts) this recomputes every position
//! estimate, report, co-location, burst, bundle and alert with its own
//! arithmetic, and lists every place where the log disagrees. It shares no
//! code with the client, PNP or server modules. Distances here are Euclidean
//! on reconstructed Cartesian points rather than the pole-relative form the
//! server evaluates, so agreement is a genuine cross-check.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::client::TotalRisk;
use crate::crypto::{AreaSalt, CellTag, Pseudonym};
use crate::geometry::{CellId, Lattice, Point};
use crate::server::PartialRisk;
use crate::simnet::{AgentRecord, Event, PositiveOutcome, Reception, ReportRecord, ScenarioLog, WorldConfig};

/// Absolute tolerance on distances and risks, scaled up for large values.
pub const TOLERANCE: f64 = 1e-9;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

fn close_pt(a: Point, b: Point) -> bool {
    close(a.x, b.x) && close(a.y, b.y)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleBurst {
    pub a: Pseudonym,
    pub b: Pseudonym,
    pub n: u32,
    pub distances: Vec<f64>,
    pub partial_risk: f64,
    pub last_slot: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleAlert {
    pub slot: u64,
    pub agent: usize,
    pub total_risk: f64,
    pub alerted: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct OracleReport {
    pub diffs: Vec<String>,
    pub slots: u64,
    pub reports_checked: usize,
    pub contacts_checked: usize,
    pub bursts: Vec<OracleBurst>,
    pub alerts: Vec<OracleAlert>,
}

impl OracleReport {
    pub fn is_clean(&self) -> bool {
        self.diffs.is_empty()
    }
}

#[derive(Default)]
struct PositiveBlock<'a> {
    agent: usize,
    outcome: Option<PositiveOutcome>,
    pseudonyms: &'a [Pseudonym],
    bundle: Option<&'a crate::server::BroadcastBundle>,
    alerts: Vec<(usize, f64, bool, usize)>,
}

#[derive(Default)]
struct Slot<'a> {
    agents: Vec<&'a AgentRecord>,
    beacons: Vec<&'a Reception>,
    reports: Vec<&'a ReportRecord>,
    contacts: Vec<(Pseudonym, Pseudonym, f64)>,
    positives: Vec<PositiveBlock<'a>>,
}

#[derive(Clone, Copy)]
struct Lock {
    locked: bool,
    position: Point,
    locked_at: f64,
    raw_at_lock: Point,
}

/// Cell arithmetic, kept separate from the geometry module on purpose.
struct Cells {
    d: f64,
    area_pitch: f64,
}

impl Cells {
    fn cell(&self, lattice: Lattice, p: Point) -> CellId {
        let shift = if lattice == Lattice::B { self.d } else { 0.0 };
        let side = 2.0 * self.d;
        CellId {
            lattice,
            i: ((p.x - shift) / side).floor() as i64,
            j: ((p.y - shift) / side).floor() as i64,
        }
    }

    fn center(&self, c: CellId) -> Point {
        let shift = if c.lattice == Lattice::B { self.d } else { 0.0 };
        let side = 2.0 * self.d;
        Point::new(
            shift + side * c.i as f64 + self.d,
            shift + side * c.j as f64 + self.d,
        )
    }

    fn area(&self, c: CellId) -> (i64, i64) {
        let m = self.center(c);
        ((m.x / self.area_pitch).floor() as i64, (m.y / self.area_pitch).floor() as i64)
    }
}

fn tag(c: CellId, salt: &[u8; 16]) -> CellTag {
    let mut h = Sha256::new();
    h.update([if c.lattice == Lattice::A { 0u8 } else { 1u8 }]);
    h.update(c.i.to_le_bytes());
    h.update(c.j.to_le_bytes());
    h.update(salt);
    CellTag(h.finalize().into())
}

/// Beacon wire size: flags, two `i32` indices, rho, theta.
const BEACON_LEN: usize = 25;

/// Position carried by a beacon, or `None` if the bytes are not a beacon.
fn beacon_position(bytes: &[u8], cells: &Cells) -> Option<(bool, Point)> {
    if bytes.len() < BEACON_LEN || bytes[0] > 1 {
        return None;
    }
    let i = i32::from_le_bytes(bytes[1..5].try_into().ok()?) as i64;
    let j = i32::from_le_bytes(bytes[5..9].try_into().ok()?) as i64;
    let rho = f64::from_le_bytes(bytes[9..17].try_into().ok()?);
    let theta = f64::from_le_bytes(bytes[17..25].try_into().ok()?);
    if !(rho.is_finite() && rho >= 0.0 && theta.is_finite()) {
        return None;
    }
    let pole = cells.center(CellId { lattice: Lattice::A, i, j });
    Some((bytes[0] == 1, Point::new(pole.x + rho * theta.cos(), pole.y + rho * theta.sin())))
}

fn dist(a: Point, b: Point) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}

fn partial(f: &PartialRisk, distances: &[f64]) -> f64 {
    let mut total = 0.0;
    for &d in distances {
        total += match *f {
            PartialRisk::Quadratic { d_risk } => {
                if d >= d_risk {
                    0.0
                } else {
                    (1.0 - d / d_risk) * (1.0 - d / d_risk)
                }
            }
            PartialRisk::Exponential { scale } => (-d / scale).exp(),
        };
    }
    total
}

fn total(g: TotalRisk, partials: &[f64]) -> f64 {
    match g {
        TotalRisk::Sum => partials.iter().sum(),
        TotalRisk::Max => partials.iter().fold(0.0, |m, &p| if p > m { p } else { m }),
    }
}

fn ordered(x: Pseudonym, y: Pseudonym) -> (Pseudonym, Pseudonym) {
    if x.0 <= y.0 {
        (x, y)
    } else {
        (y, x)
    }
}

fn group<'a>(log: &'a ScenarioLog, diffs: &mut Vec<String>) -> (BTreeMap<u64, Slot<'a>>, BTreeMap<((i64, i64), u64), AreaSalt>) {
    let mut slots: BTreeMap<u64, Slot<'a>> = BTreeMap::new();
    let mut salts = BTreeMap::new();
    for e in log {
        match e {
            Event::Salt { epoch, salt } => {
                salts.insert(((salt.area.i, salt.area.j), *epoch), *salt);
            }
            Event::Agent(r) => slots.entry(r.slot).or_default().agents.push(r),
            Event::Beacon(r) => slots.entry(r.slot).or_default().beacons.push(r),
            Event::Report(r) => slots.entry(r.slot).or_default().reports.push(r),
            Event::Contact(c) => slots
                .entry(c.slot)
                .or_default()
                .contacts
                .push((c.a, c.b, c.distance)),
            Event::Positive {
                slot,
                agent,
                outcome,
                pseudonyms,
            } => slots.entry(*slot).or_default().positives.push(PositiveBlock {
                agent: *agent,
                outcome: Some(*outcome),
                pseudonyms,
                ..Default::default()
            }),
            Event::Bundle { slot, bundle } => match slots.entry(*slot).or_default().positives.last_mut() {
                Some(b) => b.bundle = Some(bundle),
                None => diffs.push(format!("slot {slot}: bundle without a positive report")),
            },
            Event::Alert {
                slot,
                agent,
                total_risk,
                alerted,
                matched,
            } => match slots.entry(*slot).or_default().positives.last_mut() {
                Some(b) => b.alerts.push((*agent, *total_risk, *alerted, *matched)),
                None => diffs.push(format!("slot {slot}: alert without a bundle")),
            },
            Event::Header { .. } | Event::Sniff { .. } | Event::Burst(_) | Event::End { .. } => {}
        }
    }
    (slots, salts)
}

/// Replays `log` and reports every divergence.
pub fn replay(log: &ScenarioLog) -> OracleReport {
    let mut out = OracleReport::default();
    let Some(cfg) = log.config() else {
        out.diffs.push("log has no header".into());
        return out;
    };
    let cfg: &WorldConfig = cfg;
    let cells = Cells {
        d: cfg.d,
        area_pitch: cfg.area_pitch_cells as f64 * 2.0 * cfg.d,
    };
    let n = cfg.agents.len();
    let keep = cfg.retention_days * (86_400.0 / cfg.tau).round().max(1.0) as u64;
    let t_lock = cfg.t_lock.unwrap_or(cfg.tau);
    let (slots, salts) = group(log, &mut out.diffs);
    let diffs = &mut out.diffs;

    let mut locks: Vec<Lock> = Vec::new();
    let mut spans: Vec<Vec<(Pseudonym, u64, u64)>> = vec![Vec::new(); n];
    let mut matched: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut bursts: BTreeMap<(Pseudonym, Pseudonym), OracleBurst> = BTreeMap::new();
    let mut emitted = 0u64;

    for k in 0..cfg.duration_slots {
        let empty = Slot::default();
        let s = slots.get(&k).unwrap_or(&empty);
        let t0 = k as f64 * cfg.tau;
        if s.agents.len() != n {
            diffs.push(format!("slot {k}: {} agent records for {n} agents", s.agents.len()));
            continue;
        }
        let truth: Vec<Point> = s.agents.iter().map(|r| r.position).collect();
        let raw: Vec<Point> = s
            .agents
            .iter()
            .map(|r| Point::new(r.position.x + r.gps_noise.x, r.position.y + r.gps_noise.y))
            .collect();

        if locks.is_empty() {
            locks = raw
                .iter()
                .map(|&p| Lock {
                    locked: false,
                    position: p,
                    locked_at: 0.0,
                    raw_at_lock: p,
                })
                .collect();
        }
        for i in 0..n {
            let l = locks[i];
            let stale = !l.locked || dist(raw[i], l.raw_at_lock) > cfg.delta_move || t0 - l.locked_at > t_lock;
            if stale {
                locks[i] = Lock {
                    locked: false,
                    position: raw[i],
                    locked_at: 0.0,
                    raw_at_lock: raw[i],
                };
            }
        }
        let estimate = |l: &Lock, i: usize| if l.locked { l.position } else { raw[i] };

        // Receptions are logged receiver by receiver, each batch just before
        // that receiver negotiates.
        let mut by_receiver: Vec<Vec<&Reception>> = vec![Vec::new(); n];
        for b in &s.beacons {
            by_receiver[b.receiver].push(b);
        }
        for i in 0..n {
            let mut best: Option<(f64, &[u8], usize, bool, bool, Point, f64)> = None;
            let mut any_locked = false;
            let mut candidates = Vec::new();
            for b in &by_receiver[i] {
                let j = b.sender;
                if !b.forged {
                    let est = estimate(&locks[j], j);
                    match beacon_position(&b.payload, &cells) {
                        Some((locked, p)) if locked == locks[j].locked && close_pt(p, est) => {}
                        _ => diffs.push(format!("slot {k}: beacon {j}->{i} does not match sender state")),
                    }
                }
                let Some((locked, p)) = beacon_position(&b.payload, &cells) else {
                    continue;
                };
                if dist(p, raw[i]) > 2.0 * cfg.ble_range {
                    continue;
                }
                any_locked |= locked;
                candidates.push((locked, p, b));
            }
            if locks[i].locked {
                continue;
            }
            for (locked, p, b) in candidates {
                if any_locked && !locked {
                    continue;
                }
                let r = (dist(raw[i], p) - b.d_bl).abs();
                let bytes = &b.payload[..BEACON_LEN];
                let better = match best {
                    None => true,
                    Some((br, bb, ..)) => r < br || (r == br && bytes < bb),
                };
                if better {
                    best = Some((r, bytes, b.sender, b.forged, locked, p, b.d_bl));
                }
            }
            let Some((_, _, j, forged, peer_locked, p, d_bl)) = best else {
                continue;
            };
            let (dx, dy) = (raw[i].x - p.x, raw[i].y - p.y);
            let len = (dx * dx + dy * dy).sqrt();
            let (ux, uy) = if len < 1e-9 { (1.0, 0.0) } else { (dx / len, dy / len) };
            let lock_at = |position| Lock {
                locked: true,
                position,
                locked_at: t0,
                raw_at_lock: raw[i],
            };
            if peer_locked {
                locks[i] = lock_at(Point::new(p.x + ux * d_bl, p.y + uy * d_bl));
            } else {
                let mid = Point::new((raw[i].x + p.x) / 2.0, (raw[i].y + p.y) / 2.0);
                locks[i] = lock_at(Point::new(mid.x + ux * d_bl / 2.0, mid.y + uy * d_bl / 2.0));
                if !forged {
                    locks[j] = Lock {
                        locked: true,
                        position: Point::new(mid.x - ux * d_bl / 2.0, mid.y - uy * d_bl / 2.0),
                        locked_at: t0,
                        raw_at_lock: raw[j],
                    };
                }
            }
        }

        for (i, r) in s.agents.iter().enumerate() {
            let est = estimate(&locks[i], i);
            if r.locked != locks[i].locked || !close_pt(r.estimate, est) {
                diffs.push(format!(
                    "slot {k}: agent {i} estimate ({}, {}) locked={} but oracle has ({}, {}) locked={}",
                    r.estimate.x, r.estimate.y, r.locked, est.x, est.y, locks[i].locked
                ));
            }
            match spans[i].last_mut() {
                Some(last) if last.0 == r.pseudonym => last.2 = k,
                _ => spans[i].push((r.pseudonym, k, k)),
            }
        }

        // Reports: both containing cells of every covered agent, in agent order.
        let mut expected = Vec::new();
        for i in 0..n {
            let t = truth[i];
            let reg = &cfg.region;
            if !(reg.min.x <= t.x && t.x < reg.max.x && reg.min.y <= t.y && t.y < reg.max.y) {
                continue;
            }
            let est = estimate(&locks[i], i);
            for lattice in [Lattice::A, Lattice::B] {
                expected.push((i, cells.cell(lattice, est), est));
            }
        }
        emitted += s.reports.len() as u64;
        if expected.len() != s.reports.len() {
            diffs.push(format!(
                "slot {k}: {} reports logged, oracle expects {}",
                s.reports.len(),
                expected.len()
            ));
        }
        let epoch = k / cfg.salt_rotation_slots;
        let mut by_tag: BTreeMap<CellTag, Vec<(Pseudonym, Point)>> = BTreeMap::new();
        for (&(i, cell, est), r) in expected.iter().zip(&s.reports) {
            out.reports_checked += 1;
            let pseudonym = s.agents[i].pseudonym;
            let salt = salts
                .get(&(cells.area(cell), epoch))
                .filter(|s| s.valid_from <= k && k < s.valid_from + s.valid_slots);
            let Some(salt) = salt else {
                diffs.push(format!("slot {k}: no salt published for cell {cell}"));
                continue;
            };
            let t = tag(cell, &salt.value);
            let pole = cells.center(cell);
            let claimed = Point::new(
                pole.x + r.coord.rho * r.coord.theta.cos(),
                pole.y + r.coord.rho * r.coord.theta.sin(),
            );
            if r.agent != i || r.cell != cell || r.tag != t || r.pseudonym != pseudonym || !close_pt(claimed, est) {
                diffs.push(format!("slot {k}: report of agent {} for cell {} differs", r.agent, r.cell));
            }
            if !r.ingested || (r.arrival / cfg.tau).floor() as u64 != k {
                diffs.push(format!("slot {k}: report of agent {i} not filed in its slot"));
                continue;
            }
            by_tag.entry(t).or_default().push((pseudonym, est));
        }

        let mut closest: BTreeMap<(Pseudonym, Pseudonym), f64> = BTreeMap::new();
        for members in by_tag.values() {
            for (x, &(px, ex)) in members.iter().enumerate() {
                for &(py, ey) in &members[x + 1..] {
                    if px == py {
                        continue;
                    }
                    let d = dist(ex, ey);
                    let e = closest.entry(ordered(px, py)).or_insert(d);
                    if d < *e {
                        *e = d;
                    }
                }
            }
        }
        closest.retain(|_, d| *d <= cfg.d);
        let logged: BTreeMap<_, _> = s.contacts.iter().map(|&(a, b, d)| (ordered(a, b), d)).collect();
        let keys: BTreeSet<_> = closest.keys().chain(logged.keys()).copied().collect();
        for key in keys {
            out.contacts_checked += 1;
            match (closest.get(&key), logged.get(&key)) {
                (Some(a), Some(b)) if close(*a, *b) => {}
                (a, b) => diffs.push(format!("slot {k}: contact {}/{} oracle {a:?} log {b:?}", key.0, key.1)),
            }
        }
        for (key, d) in closest {
            let b = bursts.entry(key).or_insert_with(|| OracleBurst {
                a: key.0,
                b: key.1,
                n: 0,
                distances: Vec::new(),
                partial_risk: 0.0,
                last_slot: k,
            });
            b.n += 1;
            b.distances.push(d);
            b.partial_risk = partial(&cfg.partial_risk, &b.distances);
            b.last_slot = k;
        }
        bursts.retain(|_, b| b.last_slot + keep > k);

        for block in &s.positives {
            let i = block.agent;
            let spec = &cfg.agents[i];
            let expect = if !spec.consent {
                PositiveOutcome::NoConsent
            } else if !spec.infected {
                PositiveOutcome::Refused
            } else {
                PositiveOutcome::Accepted
            };
            if block.outcome != Some(expect) {
                diffs.push(format!("slot {k}: positive report of agent {i} logged {:?}, expected {expect:?}", block.outcome));
            }
            let retained = |i: usize| -> BTreeSet<Pseudonym> {
                let last = spans[i].len().saturating_sub(1);
                spans[i]
                    .iter()
                    .enumerate()
                    .filter(|&(x, s)| x == last || s.2 + keep >= k)
                    .map(|(_, s)| s.0)
                    .collect()
            };
            let mine = retained(i);
            let submitted: BTreeSet<Pseudonym> = block.pseudonyms.iter().copied().collect();
            if submitted != mine {
                diffs.push(format!("slot {k}: agent {i} submitted {} pseudonyms, oracle retains {}", submitted.len(), mine.len()));
            }
            if expect != PositiveOutcome::Accepted {
                continue;
            }
            let pairs: Vec<(Pseudonym, f64)> = bursts
                .values()
                .filter_map(|b| match (mine.contains(&b.a), mine.contains(&b.b)) {
                    (true, false) => Some((b.b, b.partial_risk)),
                    (false, true) => Some((b.a, b.partial_risk)),
                    _ => None,
                })
                .collect();
            match block.bundle {
                Some(bundle)
                    if bundle.pairs.len() == pairs.len()
                        && bundle
                            .pairs
                            .iter()
                            .zip(&pairs)
                            .all(|(x, y)| x.pseudonym == y.0 && close(x.partial_risk, y.1)) => {}
                Some(bundle) => diffs.push(format!(
                    "slot {k}: bundle of {} pairs, oracle computes {}",
                    bundle.pairs.len(),
                    pairs.len()
                )),
                None => diffs.push(format!("slot {k}: accepted report of agent {i} was not broadcast")),
            }
            if block.alerts.len() != n {
                diffs.push(format!("slot {k}: {} alert records for {n} agents", block.alerts.len()));
            }
            for u in 0..n {
                let own = retained(u);
                matched[u].extend(pairs.iter().filter(|p| own.contains(&p.0)).map(|p| p.1));
                let risk = if matched[u].is_empty() {
                    0.0
                } else {
                    total(cfg.total_risk, &matched[u])
                };
                let alerted = !matched[u].is_empty() && risk >= cfg.alert_threshold;
                out.alerts.push(OracleAlert {
                    slot: k,
                    agent: u,
                    total_risk: risk,
                    alerted,
                });
                match block.alerts.get(u) {
                    Some(&(a, r, al, m)) if a == u && al == alerted && m == matched[u].len() && close(r, risk) => {}
                    logged => diffs.push(format!(
                        "slot {k}: agent {u} alert {logged:?}, oracle risk {risk} alerted {alerted}"
                    )),
                }
            }
        }
    }

    let logged_bursts: BTreeMap<_, _> = log
        .events()
        .iter()
        .filter_map(|e| match e {
            Event::Burst(b) => Some(((b.a, b.b), b)),
            _ => None,
        })
        .collect();
    let keys: BTreeSet<_> = bursts.keys().chain(logged_bursts.keys()).copied().collect();
    for key in keys {
        match (bursts.get(&key), logged_bursts.get(&key)) {
            (Some(o), Some(l))
                if o.n == l.n
                    && o.distances.len() == l.distances.len()
                    && o.distances.iter().zip(&l.distances).all(|(x, y)| close(*x, *y))
                    && close(o.partial_risk, l.partial_risk) => {}
            (o, l) => diffs.push(format!(
                "burst {}/{}: oracle n={:?} log n={:?}",
                key.0,
                key.1,
                o.map(|b| b.n),
                l.map(|b| b.n)
            )),
        }
    }
    match log.events().last() {
        Some(Event::End {
            slots,
            reports_emitted,
            ingested,
            dropped,
        }) => {
            if *slots != cfg.duration_slots || *reports_emitted != emitted || ingested + dropped != *reports_emitted {
                diffs.push(format!(
                    "end record: {slots} slots, {reports_emitted} emitted = {ingested} ingested + {dropped} dropped; oracle counted {emitted}"
                ));
            }
        }
        _ => diffs.push("log has no end record".into()),
    }
    out.slots = cfg.duration_slots;
    out.bursts = bursts.into_values().collect();
    out
}
