//! Seeded fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relwitness::decode::ScoredCandidate;
use relwitness::geom::{Obb, Vec3};
use relwitness::phrasebank::PhrasePool;
use relwitness::probes::ProbeParams;
use relwitness::pulearn::{Batch, Item, Model, RelationScorer, Standardizer};
use relwitness::scenekit::{generate_scene, Scene, SceneSpec};
use relwitness::viewwit::WitnessTrace;

pub fn scene(seed: u64) -> Scene {
    generate_scene(&SceneSpec::default(), seed).expect("default spec generates")
}

/// Random pair and phrase vectors plus a batch touching every scored term.
pub struct LossFixture {
    pub model: Model,
    pub pairs: Vec<Vec<f64>>,
    pub texts: Vec<Vec<f64>>,
    pub batch: Batch,
}

pub fn loss_fixture(pair_dim: usize, text_dim: usize, rank: usize, items: usize) -> LossFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pairs: Vec<Vec<f64>> = (0..items)
        .map(|_| (0..pair_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let texts: Vec<Vec<f64>> = (0..64)
        .map(|_| (0..text_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let mut item = || Item {
        pair: rng.random_range(0..items),
        text: rng.random_range(0..64),
    };
    let n = items / 4;
    let batch = Batch {
        observed: (0..n).map(|_| item()).collect(),
        background: (0..n).map(|_| item()).collect(),
        missing: (0..n / 2).map(|_| (item(), 0.8)).collect(),
        negative: (0..n / 2).map(|_| (item(), 0.1)).collect(),
        uncertain: (0..n / 2).map(|_| item()).collect(),
        ..Batch::default()
    };
    LossFixture {
        model: Model {
            scorer: RelationScorer::new(rank, pair_dim, text_dim, Standardizer::identity(pair_dim), 3),
            probe: ProbeParams::default(),
        },
        pairs,
        texts,
        batch,
    }
}

const PHRASES: &[&str] = &[
    "on",
    "supported by",
    "near",
    "next to",
    "beside",
    "facing",
    "inside",
    "above",
    "close to",
];

/// Decoded-edge candidates over a few object pairs with overlapping traces.
pub fn candidates(pool: &PhrasePool, n: usize) -> Vec<ScoredCandidate> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    (0..n)
        .map(|_| {
            let i = rng.random_range(0..6u32);
            let j = (i + rng.random_range(1..6u32)) % 6;
            let phrase = pool
                .get(PHRASES[rng.random_range(0..PHRASES.len())])
                .expect("shipped phrase");
            let trace = WitnessTrace {
                region_3d: Some(Obb::axis_aligned(
                    Vec3::new(rng.random_range(0.0..0.1), 0.0, 0.0),
                    Vec3::repeat(0.1),
                )),
                ..Default::default()
            };
            ScoredCandidate::new(
                i,
                j,
                phrase,
                rng.random_range(-2.0..2.0),
                rng.random_range(0.0..1.0),
                trace,
            )
        })
        .collect()
}

/// Items × categories counts with `raters` ratings per row.
pub fn rating_counts(items: usize, raters: usize, categories: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    (0..items)
        .map(|_| {
            let mut row = vec![0; categories];
            (0..raters).for_each(|_| row[rng.random_range(0..categories)] += 1);
            row
        })
        .collect()
}
