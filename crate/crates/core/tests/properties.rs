use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use zetrace::client::TotalRisk;
use zetrace::crypto::{cell_tag, CellTag, Pseudonym};
use zetrace::geometry::{centroid, polar_distance, to_polar};
use zetrace::issuers::Rect;
use zetrace::pnp::{negotiate, Adjustment, Beacon, PeerObservation, PnpConfig};
use zetrace::server::{partial_risk_default, AlertPair, BroadcastBundle, LocationReport};
use zetrace::{AgentSpec, CellId, Event, Lattice, LatticeConfig, Point, PolarCoord, World, WorldConfig};

fn pnp_cfg() -> PnpConfig {
    PnpConfig {
        range: 10.0,
        sigma_bl: 0.1,
        delta_move: 1.0,
        t_lock: 60.0,
    }
}

proptest! {
    #[test]
    fn partial_risk_grows_with_slots(ds in prop::collection::vec(0.0f64..5.0, 0..20), extra in 0.0f64..5.0) {
        let before = partial_risk_default(&ds, 2.0);
        let mut more = ds.clone();
        more.push(extra);
        prop_assert!(partial_risk_default(&more, 2.0) >= before);
    }

    #[test]
    fn partial_risk_shrinks_with_distance(ds in prop::collection::vec(0.0f64..5.0, 1..20), i in any::<prop::sample::Index>(), by in 0.0f64..3.0) {
        let mut farther = ds.clone();
        farther[i.index(ds.len())] += by;
        prop_assert!(partial_risk_default(&farther, 2.0) <= partial_risk_default(&ds, 2.0));
    }

    #[test]
    fn partial_risk_vanishes_beyond_threshold(ds in prop::collection::vec(2.0f64..100.0, 0..20)) {
        prop_assert_eq!(partial_risk_default(&ds, 2.0), 0.0);
    }

    #[test]
    fn total_risk_is_monotone(ps in prop::collection::vec(0.0f64..10.0, 0..20), extra in 0.0f64..10.0) {
        for g in [TotalRisk::Sum, TotalRisk::Max] {
            let mut more = ps.clone();
            more.push(extra);
            prop_assert!(g.evaluate(&more) >= g.evaluate(&ps));
        }
    }

    #[test]
    fn location_report_round_trip(tag in any::<[u8; 32]>(), p in any::<[u8; 16]>(), rho in 0.0f64..30.0, theta in -3.14f64..3.14) {
        let r = LocationReport { tag: CellTag(tag), pseudonym: Pseudonym(p), coord: PolarCoord { rho, theta } };
        prop_assert_eq!(LocationReport::decode(&r.encode()).unwrap(), r);
    }

    #[test]
    fn bundle_round_trip(pairs in prop::collection::vec((any::<[u8; 16]>(), 0.0f64..10.0), 0..30), epoch in any::<u64>()) {
        let bundle = BroadcastBundle {
            pairs: pairs.into_iter().map(|(p, r)| AlertPair { pseudonym: Pseudonym(p), partial_risk: r }).collect(),
            epoch,
        };
        prop_assert_eq!(BroadcastBundle::decode(&bundle.encode(), epoch).unwrap(), bundle);
    }

    #[test]
    fn beacon_round_trip(locked in any::<bool>(), x in -1e4f64..1e4, y in -1e4f64..1e4) {
        let lattice = LatticeConfig::new(10.0);
        let b = Beacon::from_position(locked, Point::new(x, y), &lattice);
        let back = Beacon::decode(&b.encode()).unwrap();
        prop_assert_eq!(back, b);
        prop_assert!(back.position(&lattice).distance(&Point::new(x, y)) < 1e-9);
    }

    #[test]
    fn tags_depend_on_salt_and_cell(i in -1000i64..1000, j in -1000i64..1000, s1 in any::<[u8; 16]>(), s2 in any::<[u8; 16]>()) {
        let c = CellId::new(Lattice::A, i, j);
        prop_assert_eq!(cell_tag(c, &s1), cell_tag(c, &s1));
        prop_assume!(s1 != s2);
        prop_assert_ne!(cell_tag(c, &s1), cell_tag(c, &s2));
        prop_assert_ne!(cell_tag(c, &s1), cell_tag(CellId::new(Lattice::B, i, j), &s1));
    }

    #[test]
    fn polar_distance_matches_euclid(ax in -30.0f64..30.0, ay in -30.0f64..30.0, bx in -30.0f64..30.0, by in -30.0f64..30.0) {
        let pole = Point::new(5.0, -5.0);
        let (a, b) = (Point::new(ax, ay), Point::new(bx, by));
        let got = polar_distance(to_polar(a, pole), to_polar(b, pole));
        prop_assert!((got - (ax - bx).hypot(ay - by)).abs() <= 1e-9 * got.max(1.0));
    }

    /// After a successful negotiation the pair sits exactly `d_bl` apart.
    #[test]
    fn negotiation_realizes_channel_distance(
        ax in 0.0f64..200.0, ay in 0.0f64..200.0,
        dx in -14.0f64..14.0, dy in -14.0f64..14.0,
        d_bl in 0.05f64..10.0, locked in any::<bool>(),
    ) {
        let lattice = LatticeConfig::new(10.0);
        let raw = Point::new(ax, ay);
        let beacon = Beacon::from_position(locked, Point::new(ax + dx, ay + dy), &lattice);
        let n = negotiate(raw, 0.0, &[PeerObservation { beacon, d_bl }], &lattice, &pnp_cfg());
        let peer = match n.adjustment {
            Adjustment::Locked { .. } => beacon.position(&lattice),
            Adjustment::Mutual { peer_position, .. } => peer_position,
            Adjustment::None => return Err(TestCaseError::fail("peer within guard was ignored")),
        };
        prop_assert!(n.state.locked);
        let got = n.state.position.distance(&peer);
        prop_assert!((got - d_bl).abs() <= 1e-9 * d_bl.max(1.0), "got {} want {}", got, d_bl);
    }

    #[test]
    fn centroid_is_equidistant_from_corners(i in -500i64..500, j in -500i64..500, b in any::<bool>()) {
        let lattice = LatticeConfig::new(7.5);
        let c = CellId::new(if b { Lattice::B } else { Lattice::A }, i, j);
        let (lo, hi) = lattice.bounds(c);
        let ctr = centroid(c, &lattice).position;
        prop_assert!((ctr.distance(&lo) - ctr.distance(&hi)).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    /// Radio payloads of honest agents never carry a pseudonym.
    #[test]
    fn beacons_never_leak_pseudonyms(seed in any::<u64>()) {
        let region = Rect { min: Point::new(0.0, 0.0), max: Point::new(60.0, 60.0) };
        let mut cfg = WorldConfig::new(seed, 6, region).insecure_fast_crypto();
        cfg.area_pitch_cells = 3;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        cfg.agents = (0..8).map(|_| AgentSpec::at(rng.gen_range(20.0..40.0), rng.gen_range(20.0..40.0))).collect();
        let world = World::run(cfg).unwrap();
        let pseudonyms: Vec<[u8; 16]> = world.log.events().iter().filter_map(|e| match e {
            Event::Agent(a) => Some(a.pseudonym.0),
            _ => None,
        }).collect();
        let mut heard = 0;
        for e in world.log.events() {
            if let Event::Beacon(r) = e {
                heard += 1;
                prop_assert_eq!(r.payload.len(), Beacon::ENCODED_LEN);
                for p in &pseudonyms {
                    prop_assert!(!r.payload.windows(16).any(|w| w == p));
                }
            }
        }
        prop_assert!(heard > 0);
    }
}
