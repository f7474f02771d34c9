use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use zetrace::client::{BlindingMode, ClientConfig, UserAgent};
use zetrace::crypto::{cell_tag, RsaKeyPair};
use zetrace::geometry::cells_of;
use zetrace::issuers::HealthFacility;
use zetrace::pnp::{negotiate, Beacon, PeerObservation, PnpConfig};
use zetrace::{scenarios, CellId, LatticeConfig, Point, World};

fn geometry(c: &mut Criterion) {
    let lattice = LatticeConfig::new(10.0);
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let points: Vec<Point> = (0..1024)
        .map(|_| Point::new(rng.gen_range(-1e4..1e4), rng.gen_range(-1e4..1e4)))
        .collect();
    c.bench_function("cells_of/1024", |b| {
        b.iter(|| points.iter().map(|&p| cells_of(black_box(p), &lattice)).count())
    });
    let salt = [7u8; 16];
    c.bench_function("cell_tag", |b| b.iter(|| cell_tag(black_box(CellId::new(zetrace::Lattice::A, 3, -4)), &salt)));
}

fn pnp(c: &mut Criterion) {
    let lattice = LatticeConfig::new(10.0);
    let cfg = PnpConfig {
        range: 10.0,
        sigma_bl: 0.1,
        delta_move: 1.0,
        t_lock: 60.0,
    };
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let raw = Point::new(100.0, 100.0);
    let peers: Vec<PeerObservation> = (0..16)
        .map(|_| PeerObservation {
            beacon: Beacon::from_position(
                rng.gen_bool(0.3),
                Point::new(100.0 + rng.gen_range(-8.0..8.0), 100.0 + rng.gen_range(-8.0..8.0)),
                &lattice,
            ),
            d_bl: rng.gen_range(0.5..10.0),
        })
        .collect();
    c.bench_function("negotiate/16_peers", |b| b.iter(|| negotiate(raw, 0.0, black_box(&peers), &lattice, &cfg)));
}

fn blind_signature(c: &mut Criterion) {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let mut hf = HealthFacility::new(RsaKeyPair::generate(1024, &mut rng).unwrap());
    hf.register_positive(0);
    let client = ClientConfig {
        rotation_slots: 1,
        retention_slots: 1,
        alert_threshold: 1.0,
        total_risk: Default::default(),
    };
    let user = UserAgent::new(0, Point::default(), client, &mut rng);
    c.bench_function("credential/rsa1024", |b| {
        b.iter(|| user.request_credential(&mut hf, 0, BlindingMode::Uniform, &mut rng).unwrap())
    });
}

fn world(c: &mut Criterion) {
    let mut cfg = scenarios::load("desk_scale").unwrap().unwrap();
    // Long enough that the benchmark never reaches the end of the run.
    cfg.duration_slots = 1_000_000;
    let mut group = c.benchmark_group("desk_scale");
    group.sample_size(10);
    let mut world = World::new(cfg).unwrap();
    for _ in 0..30 {
        world.step();
    }
    let k = world.slot() - 1;
    group.bench_function("match_slot", |b| b.iter(|| world.server.match_slot(black_box(k))));
    group.bench_function("step", |b| b.iter(|| world.step()));
    group.finish();
}

criterion_group!(benches, geometry, pnp, blind_signature, world);
criterion_main!(benches);
