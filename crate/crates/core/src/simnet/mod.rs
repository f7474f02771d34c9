//! Deterministic slot-synchronous world: mobility, GPS noise, a short-range
//! channel with walls, and the tick loop driving clients, issuers and server.

mod config;
mod log;
mod world;

pub use config::{AgentSpec, ForgedPayload, Mobility, RadioBehavior, Segment, WorldConfig, CONFIG_SCHEMA_VERSION};
pub use log::{AgentRecord, Event, PositiveOutcome, Reception, ReportRecord, ScenarioLog, LOG_SCHEMA_VERSION};
pub use world::World;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::Point;
use crate::issuers::Rect;

/// Independent zero-mean Gaussian error on each axis.
pub fn gps_noise<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> Point {
    if sigma == 0.0 {
        return Point::new(0.0, 0.0);
    }
    let normal = Normal::new(0.0, sigma).expect("finite sigma");
    let dx = normal.sample(rng);
    let dy = normal.sample(rng);
    Point::new(dx, dy)
}

pub fn gps_sample<R: Rng + ?Sized>(true_pos: Point, sigma: f64, rng: &mut R) -> Point {
    let n = gps_noise(sigma, rng);
    Point::new(true_pos.x + n.x, true_pos.y + n.y)
}

/// Whether `u` and `v` can hear each other directly.
pub fn link(u: Point, v: Point, range: f64, obstacles: &[Segment]) -> bool {
    u.distance(&v) <= range && !obstacles.iter().any(|w| segments_intersect(u, v, w.a, w.b))
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection; touching counts.
pub fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Point reached after walking `dist` meters along `start -> points...`.
pub fn along_polyline(start: Point, points: &[Point], mut dist: f64) -> Point {
    let mut at = start;
    for &next in points {
        let leg = at.distance(&next);
        if dist <= leg {
            if leg == 0.0 {
                return next;
            }
            let t = dist / leg;
            return Point::new(at.x + t * (next.x - at.x), at.y + t * (next.y - at.y));
        }
        dist -= leg;
        at = next;
    }
    at
}

/// Position at slot `slot` given the previous one.
pub fn advance<R: Rng + ?Sized>(
    mobility: &Mobility,
    start: Point,
    previous: Point,
    slot: u64,
    tau: f64,
    region: &Rect,
    rng: &mut R,
) -> Point {
    match mobility {
        Mobility::Stationary => previous,
        Mobility::Waypoint { points, speed } => along_polyline(start, points, slot as f64 * tau * speed),
        Mobility::RandomWalk { step_sigma } => {
            let step = gps_noise(*step_sigma, rng);
            region.clamp(Point::new(previous.x + step.x, previous.y + step.y))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn zero_sigma_is_exact() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let p = Point::new(3.5, -2.0);
        assert_eq!(gps_sample(p, 0.0, &mut rng), p);
    }

    #[test]
    fn seeded_samples_repeat() {
        let p = Point::new(1.0, 1.0);
        let a = gps_sample(p, 5.0, &mut ChaCha20Rng::seed_from_u64(9));
        let b = gps_sample(p, 5.0, &mut ChaCha20Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_std_within_three_percent() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let n = 100_000;
        let (mut sx, mut sxx, mut sy, mut syy) = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let e = gps_noise(5.0, &mut rng);
            sx += e.x;
            sxx += e.x * e.x;
            sy += e.y;
            syy += e.y * e.y;
        }
        let nf = n as f64;
        for (s, ss) in [(sx, sxx), (sy, syy)] {
            let std = (ss / nf - (s / nf).powi(2)).sqrt();
            assert!((std / 5.0 - 1.0).abs() < 0.03, "std {std}");
        }
    }

    #[test]
    fn link_examples() {
        let u = Point::new(0.0, 0.0);
        let v = Point::new(3.0, 0.0);
        assert!(link(u, v, 10.0, &[]));
        let wall = Segment {
            a: Point::new(1.5, -5.0),
            b: Point::new(1.5, 5.0),
        };
        assert!(!link(u, v, 10.0, &[wall]));
        assert!(!link(u, Point::new(30.0, 0.0), 10.0, &[]));
        let beside = Segment {
            a: Point::new(1.5, 1.0),
            b: Point::new(1.5, 5.0),
        };
        assert!(link(u, v, 10.0, &[beside]));
    }

    #[test]
    fn polyline_walk() {
        let start = Point::new(0.0, 0.0);
        let pts = [Point::new(10.0, 0.0), Point::new(10.0, 10.0)];
        assert_eq!(along_polyline(start, &pts, 5.0), Point::new(5.0, 0.0));
        assert_eq!(along_polyline(start, &pts, 15.0), Point::new(10.0, 5.0));
        assert_eq!(along_polyline(start, &pts, 500.0), Point::new(10.0, 10.0));
    }
}
