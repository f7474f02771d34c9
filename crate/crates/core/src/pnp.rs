//! Position negotiation: pairwise refinement of GPS fixes so that the
//! distance between two users matches the short-range radio estimate.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::CryptoError;
use crate::geometry::{centroid, polar_distance, to_polar, CellId, Lattice, LatticeConfig, Point, PolarCoord};

/// Smallest distance the radio model ever reports.
pub const MIN_CHANNEL_DISTANCE: f64 = 0.05;

/// What a user broadcasts over the short-range channel. Carries no identifier.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Beacon {
    pub locked: bool,
    /// Sender's lattice-A cell; its centroid is the pole for `coord`.
    pub anchor_cell: CellId,
    pub coord: PolarCoord,
}

impl Beacon {
    /// Flags byte, two `i32` cell indices, two `f64` polar components.
    pub const ENCODED_LEN: usize = 1 + 8 + 16;

    pub fn from_position(locked: bool, position: Point, lattice: &LatticeConfig) -> Self {
        let anchor_cell = lattice.cell_in(Lattice::A, position);
        let pole = centroid(anchor_cell, lattice).position;
        Beacon {
            locked,
            anchor_cell,
            coord: to_polar(position, pole),
        }
    }

    pub fn position(&self, lattice: &LatticeConfig) -> Point {
        self.coord
            .to_cartesian(centroid(self.anchor_cell, lattice).position)
    }

    /// Flags byte (bit 0 = locked), the anchor's lattice-A indices as LE
    /// `i32`, then rho and theta as LE `f64`. Anchors are always lattice-A
    /// cells within `i32` range, i.e. within 40 000 km of the origin for any
    /// sensible `d`.
    pub fn encode(&self) -> [u8; Self::ENCODED_LEN] {
        debug_assert_eq!(self.anchor_cell.lattice, Lattice::A);
        let index = |v: i64| i32::try_from(v).expect("anchor cell index fits in i32");
        let mut out = [0u8; Self::ENCODED_LEN];
        out[0] = self.locked as u8;
        out[1..5].copy_from_slice(&index(self.anchor_cell.i).to_le_bytes());
        out[5..9].copy_from_slice(&index(self.anchor_cell.j).to_le_bytes());
        out[9..17].copy_from_slice(&self.coord.rho.to_le_bytes());
        out[17..25].copy_from_slice(&self.coord.theta.to_le_bytes());
        out
    }

    /// Decodes the leading `ENCODED_LEN` bytes; anything after is ignored.
    pub fn decode(bytes: &[u8]) -> Result<Self, CryptoError> {
        if bytes.len() < Self::ENCODED_LEN || bytes[0] & !1 != 0 {
            return Err(CryptoError::Malformed("beacon"));
        }
        let i = i32::from_le_bytes(bytes[1..5].try_into().unwrap());
        let j = i32::from_le_bytes(bytes[5..9].try_into().unwrap());
        let anchor_cell = CellId::new(Lattice::A, i as i64, j as i64);
        let rho = f64::from_le_bytes(bytes[9..17].try_into().unwrap());
        let theta = f64::from_le_bytes(bytes[17..25].try_into().unwrap());
        if !(rho.is_finite() && rho >= 0.0 && theta.is_finite()) {
            return Err(CryptoError::Malformed("beacon"));
        }
        Ok(Beacon {
            locked: bytes[0] & 1 == 1,
            anchor_cell,
            coord: PolarCoord { rho, theta },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpConfig {
    /// Radio range; beacons placing the sender beyond twice this are dropped.
    pub range: f64,
    /// Log-normal spread of radio distance estimates.
    pub sigma_bl: f64,
    /// Raw GPS drift that releases a lock.
    pub delta_move: f64,
    /// Lock lifetime in seconds.
    pub t_lock: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpState {
    pub locked: bool,
    /// Current absolute estimate: adjusted while locked, raw GPS otherwise.
    pub position: Point,
    pub locked_at: f64,
    pub locked_pos_raw: Point,
}

impl PnpState {
    pub fn unlocked(raw: Point) -> Self {
        PnpState {
            locked: false,
            position: raw,
            locked_at: 0.0,
            locked_pos_raw: raw,
        }
    }
}

/// Radio distance estimate `true_d * exp(eps)`, or `None` when there is no link.
pub fn measure_channel_distance<R: Rng + ?Sized>(
    true_d: f64,
    obstacle: bool,
    cfg: &PnpConfig,
    rng: &mut R,
) -> Option<f64> {
    if obstacle || true_d > cfg.range {
        return None;
    }
    let eps = if cfg.sigma_bl > 0.0 {
        Normal::new(0.0, cfg.sigma_bl).expect("finite sigma").sample(rng)
    } else {
        0.0
    };
    Some((true_d * eps.exp()).max(MIN_CHANNEL_DISTANCE))
}

/// A beacon heard from a peer together with the radio distance to it.
#[derive(Debug, Clone, Copy)]
pub struct PeerObservation {
    pub beacon: Beacon,
    pub d_bl: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Adjustment {
    /// No usable peer; state unchanged.
    None,
    /// Moved alone against a locked peer.
    Locked { peer: usize },
    /// Both endpoints moved by `|r|/2`; the peer must adopt `peer_position`.
    Mutual { peer: usize, peer_position: Point },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Negotiation {
    pub state: PnpState,
    pub adjustment: Adjustment,
    pub r: f64,
    /// Beacons rejected as implausibly far away.
    pub dropped: usize,
}

/// Runs one negotiation for an unlocked user whose current raw fix is `raw`.
pub fn negotiate(
    raw: Point,
    now: f64,
    peers: &[PeerObservation],
    lattice: &LatticeConfig,
    cfg: &PnpConfig,
) -> Negotiation {
    struct Candidate {
        index: usize,
        position: Point,
        r: f64,
        encoded: [u8; Beacon::ENCODED_LEN],
        locked: bool,
    }

    let mut dropped = 0;
    let mut candidates = Vec::with_capacity(peers.len());
    for (index, obs) in peers.iter().enumerate() {
        let position = obs.beacon.position(lattice);
        if position.distance(&raw) > 2.0 * cfg.range {
            dropped += 1;
            continue;
        }
        // Both positions relative to the peer's pole, then the polar distance.
        let pole = centroid(obs.beacon.anchor_cell, lattice).position;
        let d_gps = polar_distance(to_polar(raw, pole), obs.beacon.coord);
        candidates.push(Candidate {
            index,
            position,
            r: d_gps - obs.d_bl,
            encoded: obs.beacon.encode(),
            locked: obs.beacon.locked,
        });
    }

    let any_locked = candidates.iter().any(|c| c.locked);
    let best = candidates
        .iter()
        .filter(|c| c.locked || !any_locked)
        .min_by(|a, b| {
            a.r.abs()
                .total_cmp(&b.r.abs())
                .then_with(|| a.encoded.cmp(&b.encoded))
        });

    let Some(best) = best else {
        return Negotiation {
            state: PnpState::unlocked(raw),
            adjustment: Adjustment::None,
            r: 0.0,
            dropped,
        };
    };

    let d_bl = peers[best.index].d_bl;
    let axis = unit_from(best.position, raw);
    let locked_state = |position| PnpState {
        locked: true,
        position,
        locked_at: now,
        locked_pos_raw: raw,
    };
    if best.locked {
        let position = offset(best.position, axis, d_bl);
        Negotiation {
            state: locked_state(position),
            adjustment: Adjustment::Locked { peer: best.index },
            r: best.r,
            dropped,
        }
    } else {
        let mid = Point::new(0.5 * (raw.x + best.position.x), 0.5 * (raw.y + best.position.y));
        let position = offset(mid, axis, 0.5 * d_bl);
        let peer_position = offset(mid, axis, -0.5 * d_bl);
        Negotiation {
            state: locked_state(position),
            adjustment: Adjustment::Mutual {
                peer: best.index,
                peer_position,
            },
            r: best.r,
            dropped,
        }
    }
}

/// Below this separation two fixes count as coincident; beacon positions pass
/// through a polar round trip and carry rounding noise of this order.
const COINCIDENT: f64 = 1e-9;

/// Unit vector pointing from `from` to `to`; east when they coincide.
fn unit_from(from: Point, to: Point) -> (f64, f64) {
    let (dx, dy) = (to.x - from.x, to.y - from.y);
    let len = dx.hypot(dy);
    if len < COINCIDENT {
        (1.0, 0.0)
    } else {
        (dx / len, dy / len)
    }
}

fn offset(p: Point, (ux, uy): (f64, f64), by: f64) -> Point {
    Point::new(p.x + ux * by, p.y + uy * by)
}

/// Releases a lock once raw GPS has drifted or the lock has aged out.
pub fn maybe_unlock(state: PnpState, raw_now: Point, now: f64, cfg: &PnpConfig) -> PnpState {
    if !state.locked {
        return PnpState::unlocked(raw_now);
    }
    if raw_now.distance(&state.locked_pos_raw) > cfg.delta_move || now - state.locked_at > cfg.t_lock {
        PnpState::unlocked(raw_now)
    } else {
        state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn cfg() -> PnpConfig {
        PnpConfig {
            range: 10.0,
            sigma_bl: 0.1,
            delta_move: 1.0,
            t_lock: 60.0,
        }
    }

    fn lattice() -> LatticeConfig {
        LatticeConfig::new(10.0)
    }

    fn peer(at: Point, locked: bool, d_bl: f64) -> PeerObservation {
        PeerObservation {
            beacon: Beacon::from_position(locked, at, &lattice()),
            d_bl,
        }
    }

    #[test]
    fn channel_model() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert_eq!(measure_channel_distance(3.0, true, &cfg(), &mut rng), None);
        assert_eq!(measure_channel_distance(50.0, false, &cfg(), &mut rng), None);
        let exact = PnpConfig { sigma_bl: 0.0, ..cfg() };
        assert_eq!(measure_channel_distance(3.0, false, &exact, &mut rng), Some(3.0));
        assert_eq!(
            measure_channel_distance(0.0, false, &exact, &mut rng),
            Some(MIN_CHANNEL_DISTANCE)
        );
    }

    #[test]
    fn locked_peer_moves_self_only() {
        let n = negotiate(
            Point::new(0.8, 0.0),
            0.0,
            &[peer(Point::new(5.0, 0.0), true, 5.0)],
            &lattice(),
            &cfg(),
        );
        assert!((n.r + 0.8).abs() < 1e-9);
        assert!(n.state.locked);
        assert!(n.state.position.distance(&Point::new(0.0, 0.0)) < 1e-9);
        assert!((n.state.position.distance(&Point::new(5.0, 0.0)) - 5.0).abs() < 1e-9);
        assert_eq!(n.adjustment, Adjustment::Locked { peer: 0 });
    }

    #[test]
    fn zero_correction_keeps_position() {
        let raw = Point::new(12.0, 3.0);
        let n = negotiate(raw, 0.0, &[peer(Point::new(15.0, 7.0), true, 5.0)], &lattice(), &cfg());
        assert!(n.r.abs() < 1e-9);
        assert!(n.state.position.distance(&raw) < 1e-9);
        assert!(n.state.locked);
    }

    #[test]
    fn unlocked_pair_meets_halfway() {
        let n = negotiate(
            Point::new(0.0, 0.0),
            0.0,
            &[peer(Point::new(6.0, 0.0), false, 5.0)],
            &lattice(),
            &cfg(),
        );
        assert!((n.r - 1.0).abs() < 1e-9);
        let Adjustment::Mutual { peer_position, .. } = n.adjustment else {
            panic!("expected mutual adjustment");
        };
        assert!(n.state.position.distance(&Point::new(0.5, 0.0)) < 1e-9);
        assert!(peer_position.distance(&Point::new(5.5, 0.0)) < 1e-9);
        assert!((n.state.position.distance(&peer_position) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn locked_peers_take_priority() {
        // The unlocked peer has the smaller |r| but a locked one is present.
        let peers = [
            peer(Point::new(3.0, 0.0), false, 3.0),
            peer(Point::new(0.0, 4.0), true, 2.0),
        ];
        let n = negotiate(Point::new(0.0, 0.0), 0.0, &peers, &lattice(), &cfg());
        assert_eq!(n.adjustment, Adjustment::Locked { peer: 1 });
    }

    #[test]
    fn greedy_choice_and_guard() {
        let peers = [
            peer(Point::new(4.0, 0.0), false, 2.0),
            peer(Point::new(0.0, 3.0), false, 2.9),
            peer(Point::new(100.0, 0.0), true, 1.0),
        ];
        let n = negotiate(Point::new(0.0, 0.0), 0.0, &peers, &lattice(), &cfg());
        assert_eq!(n.dropped, 1);
        assert!(matches!(n.adjustment, Adjustment::Mutual { peer: 1, .. }));
    }

    #[test]
    fn coincident_positions_split_along_east() {
        let p = Point::new(3.0, 3.0);
        let n = negotiate(p, 0.0, &[peer(p, false, 2.0)], &lattice(), &cfg());
        let Adjustment::Mutual { peer_position, .. } = n.adjustment else {
            panic!();
        };
        assert!(n.state.position.distance(&Point::new(4.0, 3.0)) < 1e-9);
        assert!(peer_position.distance(&Point::new(2.0, 3.0)) < 1e-9);
    }

    #[test]
    fn no_peers_stays_unlocked() {
        let raw = Point::new(1.0, 1.0);
        let n = negotiate(raw, 5.0, &[], &lattice(), &cfg());
        assert_eq!(n.state, PnpState::unlocked(raw));
        assert_eq!(n.adjustment, Adjustment::None);
    }

    #[test]
    fn unlock_rules() {
        let raw = Point::new(0.0, 0.0);
        let locked = PnpState {
            locked: true,
            position: Point::new(0.3, 0.0),
            locked_at: 0.0,
            locked_pos_raw: raw,
        };
        assert!(maybe_unlock(locked, raw, 0.0, &cfg()).locked);
        assert!(!maybe_unlock(locked, Point::new(2.0, 0.0), 0.0, &cfg()).locked);
        assert!(!maybe_unlock(locked, raw, 120.0, &cfg()).locked);
        assert!(maybe_unlock(locked, raw, 60.0, &cfg()).locked);
    }

    #[test]
    fn beacon_wire_format() {
        let b = Beacon {
            locked: true,
            anchor_cell: CellId::new(Lattice::A, 2, -1),
            coord: PolarCoord { rho: 1.5, theta: -0.25 },
        };
        let bytes = b.encode();
        assert_eq!(bytes.len(), 25);
        assert!(Beacon::ENCODED_LEN <= 31, "must fit a legacy advertising payload");
        assert_eq!(bytes[0], 1);
        assert_eq!(&bytes[1..9], &[2, 0, 0, 0, 0xff, 0xff, 0xff, 0xff]);
        assert_eq!(&bytes[9..17], &1.5f64.to_le_bytes());
        assert_eq!(Beacon::decode(&bytes).unwrap(), b);
        assert!(Beacon::decode(&bytes[..24]).is_err());
        let mut bad = bytes;
        bad[0] = 4;
        assert!(Beacon::decode(&bad).is_err());
    }
}
