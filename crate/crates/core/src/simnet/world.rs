use std::collections::BTreeSet;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::config::{ForgedPayload, RadioBehavior, WorldConfig};
use super::log::{AgentRecord, Event, PositiveOutcome, Reception, ReportRecord, ScenarioLog, LOG_SCHEMA_VERSION};
use super::{advance, gps_noise, link};
use crate::client::{ClientConfig, PositiveReportError, UserAgent};
use crate::crypto::{OpeningKey, RsaKeyPair, SealingKey};
use crate::error::ConfigError;
use crate::geometry::{LatticeConfig, Point};
use crate::issuers::{AreaGrid, HealthFacility, QId, Tsp};
use crate::pnp::{maybe_unlock, measure_channel_distance, negotiate, Adjustment, Beacon, PeerObservation, PnpConfig, PnpState};
use crate::server::{Server, ServerConfig};

/// Per-agent random streams: one for the device, one for its radio channel.
fn stream(seed: u64, n: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(n);
    rng
}

struct Delivery {
    sender: usize,
    forged: bool,
    d_bl: f64,
}

/// A running scenario. Every field is public so adversaries can inspect or
/// tamper with state between slots.
pub struct World {
    pub config: WorldConfig,
    pub grid: AreaGrid,
    pub tsp: Tsp,
    pub hf: HealthFacility,
    pub server: Server,
    pub server_key: SealingKey,
    pub agents: Vec<UserAgent>,
    pub log: ScenarioLog,
    pub pnp: PnpConfig,
    rng: Vec<ChaCha20Rng>,
    radio_rng: Vec<ChaCha20Rng>,
    /// Last genuine beacon each agent overheard.
    captured: Vec<Option<Vec<u8>>>,
    published_salts: BTreeSet<(QId, u64)>,
    slot: u64,
    emitted: u64,
    finished: bool,
}

impl World {
    pub fn new(config: WorldConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let lattice = LatticeConfig::new(config.d);
        let grid = AreaGrid::new(config.region, config.area_pitch_cells, lattice)?;
        let mut world_rng = stream(config.seed, 0);
        let keys = RsaKeyPair::generate(config.rsa_bits, &mut world_rng)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut hf = HealthFacility::new(keys);
        let opening = OpeningKey::generate(config.envelope, &mut world_rng);
        let server_key = opening.sealing_key();
        let mut secret = [0u8; 32];
        world_rng.fill_bytes(&mut secret);
        let tsp = Tsp::new(secret, config.salt_rotation_slots, config.salt_bits);
        let retention_slots = config.retention_days * config.slots_per_day();
        let server = Server::new(
            ServerConfig {
                tau: config.tau,
                match_distance: config.d,
                retention_slots,
                partial_risk: config.partial_risk,
            },
            opening,
            hf.public_key().clone(),
        );
        let client = ClientConfig {
            rotation_slots: config.pseudonym_rotation_slots,
            retention_slots,
            alert_threshold: config.alert_threshold,
            total_risk: config.total_risk,
        };
        let n = config.agents.len() as u64;
        let mut rng: Vec<_> = (0..n).map(|i| stream(config.seed, 1 + 2 * i)).collect();
        let radio_rng = (0..n).map(|i| stream(config.seed, 2 + 2 * i)).collect();
        let agents = config
            .agents
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let mut a = UserAgent::new(i, spec.position, client, &mut rng[i]);
                a.consent = spec.consent;
                if spec.infected {
                    hf.register_positive(i);
                }
                a
            })
            .collect();
        let pnp = PnpConfig {
            range: config.ble_range,
            sigma_bl: config.sigma_bl,
            delta_move: config.delta_move,
            t_lock: config.t_lock(),
        };
        let mut log = ScenarioLog::new();
        log.push(Event::Header {
            schema_version: LOG_SCHEMA_VERSION,
            config: config.clone(),
        });
        Ok(World {
            captured: vec![None; n as usize],
            config,
            grid,
            tsp,
            hf,
            server,
            server_key,
            agents,
            log,
            pnp,
            rng,
            radio_rng,
            published_salts: BTreeSet::new(),
            slot: 0,
            emitted: 0,
            finished: false,
        })
    }

    /// Builds the world and runs every slot.
    pub fn run(config: WorldConfig) -> Result<Self, ConfigError> {
        let mut w = World::new(config)?;
        w.run_to_end();
        Ok(w)
    }

    pub fn run_to_end(&mut self) {
        while !self.is_done() {
            self.step();
        }
        self.finish();
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn is_done(&self) -> bool {
        self.slot >= self.config.duration_slots
    }

    fn lattice(&self) -> LatticeConfig {
        self.grid.lattice
    }

    /// What agent `j` puts on the air right now.
    fn broadcast_payload(&self, j: usize) -> Vec<u8> {
        let a = &self.agents[j];
        let mut out = Beacon::from_position(a.pnp.locked, a.estimate(), &self.lattice())
            .encode()
            .to_vec();
        if self.config.agents[j].radio == RadioBehavior::LeakPseudonym {
            out.extend_from_slice(&a.current_pseudonym.0);
        }
        out
    }

    fn forged_payload(&self, j: usize) -> Option<Vec<u8>> {
        let RadioBehavior::Amplified { payload, .. } = &self.config.agents[j].radio else {
            return None;
        };
        let lattice = self.lattice();
        match payload {
            ForgedPayload::Own => Some(self.broadcast_payload(j)),
            ForgedPayload::SpoofNear { target, offset } => {
                let t = self.agents[*target].true_position;
                let at = Point::new(t.x + offset.x, t.y + offset.y);
                Some(Beacon::from_position(true, at, &lattice).encode().to_vec())
            }
            ForgedPayload::Spoof { at } => Some(Beacon::from_position(true, *at, &lattice).encode().to_vec()),
            ForgedPayload::Replay => self.captured[j].clone(),
        }
    }

    fn targets(&self, j: usize) -> Option<(&[usize], f64)> {
        match &self.config.agents[j].radio {
            RadioBehavior::Amplified {
                targets,
                apparent_distance,
                ..
            } => Some((targets, *apparent_distance)),
            _ => None,
        }
    }

    /// Physical or amplified deliveries to each receiver, with the radio
    /// distance each receiver measures.
    fn deliveries(&mut self) -> Vec<Vec<Delivery>> {
        let n = self.agents.len();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let mut heard = Vec::new();
            for j in (0..n).filter(|&j| j != i) {
                let u = self.agents[i].true_position;
                let v = self.agents[j].true_position;
                let amplified = self
                    .targets(j)
                    .and_then(|(t, apparent)| t.contains(&i).then_some(apparent));
                let (forged, true_d) = match amplified {
                    Some(apparent) => (true, apparent),
                    None if link(u, v, self.config.ble_range, &self.config.obstacles) => (false, u.distance(&v)),
                    None => continue,
                };
                if let Some(d_bl) = measure_channel_distance(true_d, false, &self.pnp, &mut self.radio_rng[i]) {
                    heard.push(Delivery {
                        sender: j,
                        forged,
                        d_bl,
                    });
                }
            }
            out.push(heard);
        }
        out
    }

    /// Runs the current slot.
    pub fn step(&mut self) {
        assert!(!self.finished, "world already finished");
        let k = self.slot;
        let t0 = k as f64 * self.config.tau;
        let n = self.agents.len();
        let lattice = self.lattice();

        let mut noise = Vec::with_capacity(n);
        for i in 0..n {
            let spec = &self.config.agents[i];
            let rng = &mut self.rng[i];
            let a = &mut self.agents[i];
            if k > 0 {
                a.true_position = advance(
                    &spec.mobility,
                    spec.position,
                    a.true_position,
                    k,
                    self.config.tau,
                    &self.config.region,
                    rng,
                );
            }
            a.rotate_pseudonym(k, rng);
            let e = gps_noise(self.config.sigma_gps, rng);
            noise.push(e);
            a.raw_gps = Point::new(a.true_position.x + e.x, a.true_position.y + e.y);
            a.pnp = maybe_unlock(a.pnp, a.raw_gps, t0, &self.pnp);
        }

        let deliveries = self.deliveries();
        let mut negotiated_with = vec![None; n];
        let mut dropped = vec![0; n];
        for (i, heard) in deliveries.into_iter().enumerate() {
            let mut peers = Vec::new();
            let mut senders = Vec::new();
            for d in heard {
                let payload = if d.forged {
                    self.forged_payload(d.sender)
                } else {
                    Some(self.broadcast_payload(d.sender))
                };
                let Some(payload) = payload else { continue };
                if let Ok(beacon) = Beacon::decode(&payload) {
                    peers.push(PeerObservation { beacon, d_bl: d.d_bl });
                    senders.push((d.sender, d.forged));
                }
                if !d.forged {
                    self.captured[i] = Some(payload.clone());
                }
                self.log.push(Event::Beacon(Reception {
                    slot: k,
                    receiver: i,
                    sender: d.sender,
                    payload,
                    d_bl: d.d_bl,
                    forged: d.forged,
                }));
            }
            if self.agents[i].pnp.locked || peers.is_empty() {
                continue;
            }
            let outcome = negotiate(self.agents[i].raw_gps, t0, &peers, &lattice, &self.pnp);
            self.agents[i].pnp = outcome.state;
            dropped[i] = outcome.dropped;
            match outcome.adjustment {
                Adjustment::None => {}
                Adjustment::Locked { peer } => negotiated_with[i] = Some(senders[peer].0),
                Adjustment::Mutual { peer, peer_position } => {
                    let (j, forged) = senders[peer];
                    negotiated_with[i] = Some(j);
                    // A forged copy does not speak for the device it claims to be.
                    if !forged {
                        let other = &mut self.agents[j];
                        other.pnp = PnpState {
                            locked: true,
                            position: peer_position,
                            locked_at: t0,
                            locked_pos_raw: other.raw_gps,
                        };
                        negotiated_with[j] = Some(i);
                    }
                }
            }
        }

        for s in 0..self.config.sniffers.len() {
            let at = self.config.sniffers[s];
            for j in 0..n {
                if link(at, self.agents[j].true_position, self.config.ble_range, &self.config.obstacles) {
                    let payload = self.broadcast_payload(j);
                    self.log.push(Event::Sniff {
                        slot: k,
                        sniffer: s,
                        sender: j,
                        payload,
                    });
                }
            }
        }

        for i in 0..n {
            let emitted = self.agents[i].emit_reports(&self.grid, &self.tsp, k, &self.server_key, &mut self.rng[i]);
            for e in emitted {
                let area = self.grid.area_of_cell(e.cell);
                let epoch = self.tsp.epoch(k);
                if self.published_salts.insert((area, epoch)) {
                    self.log.push(Event::Salt {
                        epoch,
                        salt: self.tsp.current_salt(area, k),
                    });
                }
                let jitter: f64 = self.rng[i].gen();
                let arrival = t0 + jitter * self.config.tau * 0.999;
                let ingested = self.server.ingest(&e.envelope, arrival).is_ok();
                self.emitted += 1;
                self.log.push(Event::Report(ReportRecord {
                    slot: k,
                    agent: i,
                    cell: e.cell,
                    tag: e.report.tag,
                    pseudonym: e.report.pseudonym,
                    coord: e.report.coord,
                    arrival,
                    ingested,
                }));
            }
        }

        for (i, a) in self.agents.iter().enumerate() {
            self.log.push(Event::Agent(AgentRecord {
                slot: k,
                agent: i,
                position: a.true_position,
                gps_noise: noise[i],
                raw_gps: a.raw_gps,
                locked: a.pnp.locked,
                estimate: a.estimate(),
                pseudonym: a.current_pseudonym,
                negotiated_with: negotiated_with[i],
                dropped: dropped[i],
            }));
        }

        for obs in self.server.close_slot(k) {
            self.log.push(Event::Contact(obs));
        }

        let last = self.config.duration_slots.saturating_sub(1);
        for i in 0..n {
            let spec = &self.config.agents[i];
            let scheduled = spec
                .report_slot
                .or((spec.infected && spec.consent).then_some(last));
            if scheduled == Some(k) {
                self.positive(i, k);
            }
        }
        self.slot += 1;
    }

    fn positive(&mut self, i: usize, k: u64) {
        let result = self.agents[i].report_positive(&mut self.hf, &mut self.server, k, &mut self.rng[i]);
        let outcome = match &result {
            Ok(_) => PositiveOutcome::Accepted,
            Err(PositiveReportError::NoConsent) => PositiveOutcome::NoConsent,
            Err(PositiveReportError::Refused(_)) => PositiveOutcome::Refused,
            Err(PositiveReportError::Rejected(_)) => PositiveOutcome::Rejected,
        };
        self.log.push(Event::Positive {
            slot: k,
            agent: i,
            outcome,
            pseudonyms: self.agents[i].pseudonyms(),
        });
        if let Ok(bundle) = result {
            self.broadcast(&bundle, k);
        }
    }

    /// Delivers a bundle to every device and logs each resulting alert state.
    pub fn broadcast(&mut self, bundle: &crate::server::BroadcastBundle, k: u64) {
        self.log.push(Event::Bundle {
            slot: k,
            bundle: bundle.clone(),
        });
        for (i, a) in self.agents.iter_mut().enumerate() {
            let out = a.process_alerts(&bundle.pairs);
            self.log.push(Event::Alert {
                slot: k,
                agent: i,
                total_risk: out.total_risk,
                alerted: out.alerted,
                matched: out.matched,
            });
        }
    }

    /// Appends the surviving bursts and the reconciliation record.
    pub fn finish(&mut self) {
        if self.finished {
            return;
        }
        self.finished = true;
        let bursts: Vec<_> = self.server.bursts().cloned().collect();
        for b in bursts {
            self.log.push(Event::Burst(b));
        }
        let stats = self.server.stats();
        self.log.push(Event::End {
            slots: self.slot,
            reports_emitted: self.emitted,
            ingested: stats.ingested,
            dropped: stats.dropped,
        });
    }

    pub fn reports_emitted(&self) -> u64 {
        self.emitted
    }
}
