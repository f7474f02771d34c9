//! Trusted third parties: the telephone service provider handing out area
//! salts, and the health facility that blind-signs positive reports.

use std::collections::BTreeSet;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::crypto::{sign_blinded, sha256, AreaSalt, RsaKeyPair, RsaPublicKey, SALT_LEN};
use crate::error::{ConfigError, IssuerError};
use crate::geometry::{centroid, CellId, Lattice, LatticeConfig, Point};

/// Index of a salt area in the area grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QId {
    pub i: i64,
    pub j: i64,
}

impl std::fmt::Display for QId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Q({},{})", self.i, self.j)
    }
}

/// Axis-aligned rectangle `[min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn contains(&self, p: Point) -> bool {
        self.min.x <= p.x && p.x < self.max.x && self.min.y <= p.y && p.y < self.max.y
    }

    pub fn clamp(&self, p: Point) -> Point {
        // Keep clamped points strictly inside the half-open upper edge.
        let hi_x = self.max.x - 1e-9 * (1.0 + self.max.x.abs());
        let hi_y = self.max.y - 1e-9 * (1.0 + self.max.y.abs());
        Point::new(p.x.clamp(self.min.x, hi_x), p.y.clamp(self.min.y, hi_y))
    }
}

/// Square salt areas of side `pitch`, aligned with lattice A.
///
/// Lattice A cells nest inside areas by alignment. Lattice B cells straddle
/// every area edge, so a cell of either lattice belongs to the area holding
/// its centroid; positions only decide whether a user has coverage at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaGrid {
    pub region: Rect,
    pub pitch: f64,
    pub lattice: LatticeConfig,
}

impl AreaGrid {
    pub fn new(region: Rect, pitch_cells: u32, lattice: LatticeConfig) -> Result<Self, ConfigError> {
        let grid = AreaGrid {
            region,
            pitch: pitch_cells as f64 * lattice.pitch(),
            lattice,
        };
        grid.validate()?;
        Ok(grid)
    }

    fn index(&self, p: Point) -> QId {
        let o = self.lattice.origin;
        QId {
            i: ((p.x - o.x) / self.pitch).floor() as i64,
            j: ((p.y - o.y) / self.pitch).floor() as i64,
        }
    }

    /// Containing area, or `None` outside the covered region.
    pub fn area_of(&self, p: Point) -> Option<QId> {
        self.region.contains(p).then(|| self.index(p))
    }

    pub fn area_of_cell(&self, c: CellId) -> QId {
        self.index(centroid(c, &self.lattice).position)
    }

    /// Areas intersecting the region, row-major.
    pub fn areas(&self) -> Vec<QId> {
        let lo = self.index(self.region.min);
        let hi = self.index(self.region.clamp(self.region.max));
        (lo.j..=hi.j)
            .flat_map(|j| (lo.i..=hi.i).map(move |i| QId { i, j }))
            .collect()
    }

    /// Cells of both lattices intersecting the region.
    pub fn cells(&self) -> Vec<CellId> {
        self.lattice
            .cells_covering(self.region.min, self.region.clamp(self.region.max))
    }

    /// Checks that every cell lies wholly inside one area: lattice A by its
    /// four corners, both lattices through the centroid rule.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = self.lattice.d;
        if !(d > 0.0 && d.is_finite()) {
            return Err(ConfigError::Invalid(format!("d must be positive, got {d}")));
        }
        if !(self.pitch >= self.lattice.pitch()) {
            return Err(ConfigError::Invalid("area pitch must be at least one cell".into()));
        }
        if !(self.region.min.x < self.region.max.x && self.region.min.y < self.region.max.y) {
            return Err(ConfigError::Invalid("region is empty".into()));
        }
        for c in self.cells() {
            if c.lattice != Lattice::A {
                continue;
            }
            let (lo, hi) = self.lattice.bounds(c);
            let inset = 1e-9 * self.lattice.pitch();
            let corners = [
                lo,
                Point::new(hi.x - inset, lo.y),
                Point::new(lo.x, hi.y - inset),
                Point::new(hi.x - inset, hi.y - inset),
            ];
            let q = self.area_of_cell(c);
            if corners.iter().any(|&p| self.index(p) != q) {
                return Err(ConfigError::Invalid(format!("cell {c} straddles an area edge")));
            }
        }
        Ok(())
    }
}

/// Telephone service provider. Salts are a keyed function of
/// `(area, epoch)` so every user in an area sees the same value in a slot.
#[derive(Clone)]
pub struct Tsp {
    secret: [u8; 32],
    pub rotation_slots: u64,
    /// Entropy of each salt; the remaining bits are zero. 128 in normal use.
    pub salt_bits: u32,
}

impl std::fmt::Debug for Tsp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tsp")
            .field("rotation_slots", &self.rotation_slots)
            .field("salt_bits", &self.salt_bits)
            .finish_non_exhaustive()
    }
}

impl Tsp {
    pub fn new(secret: [u8; 32], rotation_slots: u64, salt_bits: u32) -> Self {
        assert!(rotation_slots > 0, "salt rotation must be at least one slot");
        Tsp {
            secret,
            rotation_slots,
            salt_bits: salt_bits.min(8 * SALT_LEN as u32),
        }
    }

    pub fn epoch(&self, slot: u64) -> u64 {
        slot / self.rotation_slots
    }

    pub fn current_salt(&self, q: QId, slot: u64) -> AreaSalt {
        let epoch = self.epoch(slot);
        let digest = sha256(&[
            b"area-salt",
            &self.secret,
            &q.i.to_le_bytes(),
            &q.j.to_le_bytes(),
            &epoch.to_le_bytes(),
        ]);
        let mut value = [0u8; SALT_LEN];
        value.copy_from_slice(&digest[..SALT_LEN]);
        mask_bits(&mut value, self.salt_bits);
        AreaSalt {
            value,
            area: q,
            valid_from: epoch * self.rotation_slots,
            valid_slots: self.rotation_slots,
        }
    }
}

/// Zeroes everything past the first `bits` bits.
pub fn mask_bits(value: &mut [u8; SALT_LEN], bits: u32) {
    for (k, byte) in value.iter_mut().enumerate() {
        let start = 8 * k as u32;
        if bits <= start {
            *byte = 0;
        } else if bits < start + 8 {
            *byte &= 0xffu8 << (8 - (bits - start));
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HfLogEntry {
    pub requester: usize,
    #[serde(with = "biguint_hex")]
    pub blinded: BigUint,
    pub slot: u64,
}

/// Health facility: signs blinded report messages for users it tested positive.
#[derive(Debug, Clone)]
pub struct HealthFacility {
    keys: RsaKeyPair,
    registry: BTreeSet<usize>,
    log: Vec<HfLogEntry>,
}

impl HealthFacility {
    pub fn new(keys: RsaKeyPair) -> Self {
        HealthFacility {
            keys,
            registry: BTreeSet::new(),
            log: Vec::new(),
        }
    }

    pub fn public_key(&self) -> &RsaPublicKey {
        &self.keys.public
    }

    pub fn register_positive(&mut self, requester: usize) {
        self.registry.insert(requester);
    }

    pub fn is_registered(&self, requester: usize) -> bool {
        self.registry.contains(&requester)
    }

    pub fn hf_sign(&mut self, blinded: &BigUint, requester: usize, slot: u64) -> Result<BigUint, IssuerError> {
        if !self.registry.contains(&requester) {
            return Err(IssuerError::NotAuthorized(requester));
        }
        let signed = sign_blinded(blinded, &self.keys)?;
        self.log.push(HfLogEntry {
            requester,
            blinded: blinded.clone(),
            slot,
        });
        Ok(signed)
    }

    pub fn log(&self) -> &[HfLogEntry] {
        &self.log
    }
}

pub(crate) mod biguint_hex {
    use num_bigint::BigUint;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_str_radix(16))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigUint, D::Error> {
        let s = String::deserialize(d)?;
        BigUint::parse_bytes(s.as_bytes(), 16).ok_or_else(|| D::Error::custom("bad hex integer"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{blind, cell_tag, gen_report_message};
    use crate::geometry::cells_of;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn grid_km() -> AreaGrid {
        let region = Rect {
            min: Point::new(0.0, 0.0),
            max: Point::new(3000.0, 3000.0),
        };
        AreaGrid::new(region, 50, LatticeConfig::new(10.0)).unwrap()
    }

    #[test]
    fn area_lookup() {
        let g = grid_km();
        assert_eq!(g.area_of(Point::new(500.0, 500.0)), Some(QId { i: 0, j: 0 }));
        assert_eq!(g.area_of(Point::new(1000.0, 999.0)), Some(QId { i: 1, j: 0 }));
        assert_eq!(g.area_of(Point::new(-1.0, 5.0)), None);
        assert_eq!(g.area_of(Point::new(3000.0, 5.0)), None);
        assert_eq!(g.areas().len(), 9);
    }

    #[test]
    fn misaligned_pitch_is_impossible_by_construction() {
        let region = Rect {
            min: Point::new(0.0, 0.0),
            max: Point::new(100.0, 100.0),
        };
        assert!(AreaGrid::new(region, 0, LatticeConfig::new(10.0)).is_err());
        let shifted = LatticeConfig {
            d: 10.0,
            origin: Point::new(3.0, 3.0),
        };
        assert!(AreaGrid::new(region, 2, shifted).is_ok());
    }

    #[test]
    fn salts_agree_within_area_and_slot() {
        let tsp = Tsp::new([7; 32], 5, 128);
        let q = QId { i: 1, j: 2 };
        assert_eq!(tsp.current_salt(q, 3), tsp.current_salt(q, 3));
        assert_eq!(tsp.current_salt(q, 0).value, tsp.current_salt(q, 4).value);
        assert_ne!(tsp.current_salt(q, 4).value, tsp.current_salt(q, 5).value);
        assert_ne!(
            tsp.current_salt(q, 3).value,
            tsp.current_salt(QId { i: 2, j: 2 }, 3).value
        );
        let s = tsp.current_salt(q, 7);
        assert_eq!((s.valid_from, s.valid_slots), (5, 5));
        assert!(s.covers(7));
    }

    #[test]
    fn same_cell_same_tag() {
        let g = grid_km();
        let tsp = Tsp::new([1; 32], 5, 128);
        let (a1, b1) = cells_of(Point::new(995.0, 12.0), &g.lattice);
        let (a2, b2) = cells_of(Point::new(999.0, 14.0), &g.lattice);
        assert_eq!((a1, b1), (a2, b2));
        for c in [a1, b1] {
            let salt = tsp.current_salt(g.area_of_cell(c), 9);
            assert_eq!(cell_tag(c, &salt.value), cell_tag(c, &salt.value));
        }
    }

    #[test]
    fn weakened_salts() {
        let mut v = [0xff; SALT_LEN];
        mask_bits(&mut v, 12);
        assert_eq!(&v[..3], &[0xff, 0xf0, 0x00]);
        let tsp = Tsp::new([3; 32], 1, 0);
        assert_eq!(tsp.current_salt(QId { i: 0, j: 0 }, 0).value, [0; SALT_LEN]);
    }

    #[test]
    fn facility_signs_only_registered() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let keys = RsaKeyPair::generate(512, &mut rng).unwrap();
        let mut hf = HealthFacility::new(keys);
        hf.register_positive(3);
        let m = gen_report_message(hf.public_key(), &mut rng);
        let b = blind(&m, hf.public_key(), &mut rng);
        assert!(hf.hf_sign(&b.value, 3, 10).is_ok());
        assert!(matches!(
            hf.hf_sign(&b.value, 4, 10),
            Err(IssuerError::NotAuthorized(4))
        ));
        assert_eq!(hf.log().len(), 1);
        assert!(hf.log().iter().all(|e| e.blinded != m.to_int()));
    }
}
