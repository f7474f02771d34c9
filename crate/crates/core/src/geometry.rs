//! Microcell lattices, centroids and pole-relative polar coordinates.
//!
//! The plane is covered by two square lattices of pitch `2d`. Lattice `B` is
//! lattice `A` shifted by `(d, d)`, so every point lies in exactly one cell of
//! each lattice. Cell membership uses half-open intervals `[low, high)` on both
//! axes.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// A position in the flat local frame, meters east (`x`) and north (`y`).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lattice {
    A,
    B,
}

impl Lattice {
    fn tag(self) -> u8 {
        match self {
            Lattice::A => 0x00,
            Lattice::B => 0x01,
        }
    }
}

/// Identifies one `2d x 2d` square of lattice `A` or `B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellId {
    pub lattice: Lattice,
    pub i: i64,
    pub j: i64,
}

impl CellId {
    pub const ENCODED_LEN: usize = 17;

    pub const fn new(lattice: Lattice, i: i64, j: i64) -> Self {
        CellId { lattice, i, j }
    }

    /// Canonical encoding used as hash input: lattice tag, then `i` and `j`
    /// as little-endian two's complement.
    pub fn to_bytes(&self) -> [u8; Self::ENCODED_LEN] {
        let mut out = [0u8; Self::ENCODED_LEN];
        out[0] = self.lattice.tag();
        out[1..9].copy_from_slice(&self.i.to_le_bytes());
        out[9..17].copy_from_slice(&self.j.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() < Self::ENCODED_LEN {
            return None;
        }
        let lattice = match bytes[0] {
            0x00 => Lattice::A,
            0x01 => Lattice::B,
            _ => return None,
        };
        let i = i64::from_le_bytes(bytes[1..9].try_into().ok()?);
        let j = i64::from_le_bytes(bytes[9..17].try_into().ok()?);
        Some(CellId { lattice, i, j })
    }
}

impl std::fmt::Display for CellId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}({},{})", self.lattice, self.i, self.j)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centroid {
    pub cell: CellId,
    pub position: Point,
}

/// Position relative to a pole: `rho` meters, `theta` radians in `(-pi, pi]`
/// measured counterclockwise from east.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PolarCoord {
    pub rho: f64,
    pub theta: f64,
}

impl PolarCoord {
    pub fn to_cartesian(&self, pole: Point) -> Point {
        Point::new(
            pole.x + self.rho * self.theta.cos(),
            pole.y + self.rho * self.theta.sin(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    /// Proximity threshold; cells have side `2d`.
    pub d: f64,
    /// Lower-left corner of lattice A's `(0, 0)` cell.
    pub origin: Point,
}

impl LatticeConfig {
    pub fn new(d: f64) -> Self {
        LatticeConfig {
            d,
            origin: Point::default(),
        }
    }

    pub fn pitch(&self) -> f64 {
        2.0 * self.d
    }

    fn offset(&self, lattice: Lattice) -> Point {
        match lattice {
            Lattice::A => self.origin,
            Lattice::B => Point::new(self.origin.x + self.d, self.origin.y + self.d),
        }
    }

    pub fn cell_in(&self, lattice: Lattice, p: Point) -> CellId {
        let o = self.offset(lattice);
        let pitch = self.pitch();
        CellId {
            lattice,
            i: ((p.x - o.x) / pitch).floor() as i64,
            j: ((p.y - o.y) / pitch).floor() as i64,
        }
    }

    /// Lower-left and upper-right corners of a cell's square.
    pub fn bounds(&self, c: CellId) -> (Point, Point) {
        let o = self.offset(c.lattice);
        let pitch = self.pitch();
        let lo = Point::new(o.x + pitch * c.i as f64, o.y + pitch * c.j as f64);
        (lo, Point::new(lo.x + pitch, lo.y + pitch))
    }

    /// Every cell (both lattices) whose square intersects the rectangle
    /// `[min, max)`, in lattice-major, row-major order.
    pub fn cells_covering(&self, min: Point, max: Point) -> Vec<CellId> {
        let mut out = Vec::new();
        for lattice in [Lattice::A, Lattice::B] {
            let lo = self.cell_in(lattice, min);
            let hi = self.cell_in(lattice, max);
            for j in lo.j..=hi.j {
                for i in lo.i..=hi.i {
                    out.push(CellId::new(lattice, i, j));
                }
            }
        }
        out
    }
}

/// The A-cell and B-cell containing `p`.
pub fn cells_of(p: Point, cfg: &LatticeConfig) -> (CellId, CellId) {
    (cfg.cell_in(Lattice::A, p), cfg.cell_in(Lattice::B, p))
}

pub fn centroid(c: CellId, cfg: &LatticeConfig) -> Centroid {
    let (lo, _) = cfg.bounds(c);
    Centroid {
        cell: c,
        position: Point::new(lo.x + cfg.d, lo.y + cfg.d),
    }
}

/// Polar coordinates of `p` with respect to `pole`. A point coinciding with
/// the pole maps to `(0, 0)`.
pub fn to_polar(p: Point, pole: Point) -> PolarCoord {
    let dx = p.x - pole.x;
    let dy = p.y - pole.y;
    if dx == 0.0 && dy == 0.0 {
        return PolarCoord::default();
    }
    let mut theta = dy.atan2(dx);
    // atan2 yields -pi for (negative, -0.0); fold it onto the closed end.
    if theta <= -PI {
        theta += 2.0 * PI;
    }
    PolarCoord {
        rho: dx.hypot(dy),
        theta,
    }
}

/// Distance between two positions given relative to the same pole.
///
/// Evaluates the law of cosines `rho_a^2 + rho_b^2 - 2 rho_a rho_b cos(dtheta)`
/// in its half-angle form `(rho_a - rho_b)^2 + 4 rho_a rho_b sin^2(dtheta / 2)`,
/// which is the same quantity without cancellation for nearby points.
pub fn polar_distance(a: PolarCoord, b: PolarCoord) -> f64 {
    let half = 0.5 * (a.theta - b.theta);
    let radial = a.rho - b.rho;
    let s = half.sin();
    (radial * radial + 4.0 * a.rho * b.rho * s * s).max(0.0).sqrt()
}

/// Cells containing both `u` and `v` (zero, one or two of them).
pub fn shared_cells(u: Point, v: Point, cfg: &LatticeConfig) -> Vec<CellId> {
    let (ua, ub) = cells_of(u, cfg);
    let (va, vb) = cells_of(v, cfg);
    let mut out = Vec::with_capacity(2);
    if ua == va {
        out.push(ua);
    }
    if ub == vb {
        out.push(ub);
    }
    out
}
