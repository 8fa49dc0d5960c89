use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use relwitness::auditkit::fleiss_kappa;
use relwitness::decode::{rescore, suppress_redundant};
use relwitness::phrasebank::Polarity;
use relwitness::pipeline::{Context, PipelineConfig};
use relwitness::probes::{measure_pair, probe_vector, ProbeParams};
use relwitness::pulearn::{evaluate, FeatureTable, Lambdas, HINGE_MARGIN};
use relwitness::viewwit::{NullPrior, WitnessEngine};
use relwitness_bench::{candidates, loss_fixture, rating_counts, scene};

fn probes(c: &mut Criterion) {
    let s = scene(1);
    let params = ProbeParams::default();
    let (a, b) = (&s.objects[0], &s.objects[s.objects.len() - 1]);
    c.bench_function("measure_pair", |bench| {
        bench.iter(|| measure_pair(a, b, &a.mask_points, &b.mask_points, &params, s.room_scale).unwrap())
    });
    let raw = measure_pair(a, b, &a.mask_points, &b.mask_points, &params, s.room_scale).unwrap();
    c.bench_function("probe_vector", |bench| {
        bench.iter(|| probe_vector(black_box(&raw), &params, Polarity::Up))
    });
}

fn witness(c: &mut Criterion) {
    let cfg = PipelineConfig::default();
    let ctx = Context::new(&cfg);
    let s = scene(2);
    let null = NullPrior::from_scenes([&s], &ctx.pool);
    let engine = WitnessEngine::new(&s, &ctx.pool, &ctx.rgb, &null, cfg.witness, cfg.probe.clone()).unwrap();
    let (i, j) = s.ordered_pairs()[0];
    let phrase = ctx.pool.get("near").unwrap();
    c.bench_function("witness_record", |bench| {
        bench.iter(|| engine.record(i, j, phrase, (1.0, -1.0)).unwrap())
    });
}

fn loss(c: &mut Criterion) {
    let f = loss_fixture(64, 48, 16, 512);
    let table = FeatureTable {
        pairs: &f.pairs,
        texts: &f.texts,
    };
    let lambdas = Lambdas::default();
    c.bench_function("loss_evaluate_512", |bench| {
        bench.iter(|| evaluate(&f.model, table, black_box(&f.batch), &lambdas, HINGE_MARGIN))
    });
}

fn suppression(c: &mut Criterion) {
    let cfg = PipelineConfig::default();
    let ctx = Context::new(&cfg);
    let ranked = rescore(candidates(&ctx.pool, 200), 0.5, 1e-6).unwrap();
    c.bench_function("suppress_200", |bench| {
        bench.iter(|| suppress_redundant(ranked.clone(), 0.8, 0.5))
    });
}

fn kappa(c: &mut Criterion) {
    let counts = rating_counts(600, 3, 4);
    c.bench_function("fleiss_kappa_600x3", |bench| {
        bench.iter(|| fleiss_kappa(black_box(&counts)).unwrap())
    });
}

criterion_group!(benches, probes, witness, loss, suppression, kappa);
criterion_main!(benches);
