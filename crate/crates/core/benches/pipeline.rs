use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use trurm_core::afd::{decompose, AfdParams, DecomposedSignal};
use trurm_core::fpe::{encrypt_segment, estimate_t_res, EncryptionKey, PerturbationParams};
use trurm_core::harness::cohort::simulate_segments;
use trurm_core::harness::CohortSpec;
use trurm_core::par;
use trurm_core::ptn::{ptn_monitor, PtnParams};
use trurm_core::sim::RadarConfig;

fn cohort() -> Vec<DecomposedSignal> {
    let spec = CohortSpec { n_personas: 4, capture_s: 60.0, ..CohortSpec::default() };
    let segs = simulate_segments(&spec, &RadarConfig::desk()).expect("simulate");
    segs.iter().map(|s| decompose(s, &AfdParams::default()).expect("decompose")).collect()
}

fn encrypt_and_monitor(d: &DecomposedSignal, key: &EncryptionKey, pp: &PerturbationParams, ptn: &PtnParams) -> f64 {
    let enc = encrypt_segment(d, key, pp, estimate_t_res(&d.x_ure, 20.0), 20.0).expect("encrypt");
    ptn_monitor(&enc, ptn, false).expect("monitor").rate.bpm
}

fn bench_pipeline(c: &mut Criterion) {
    let data = cohort();
    let key = EncryptionKey::random(128, 1).expect("key");
    let pp = PerturbationParams { beta_amp: 300.0, beta_phase: 10.0, ..PerturbationParams::default() };
    let ptn = PtnParams::new(20.0, 1).expect("ptn");

    let mut g = c.benchmark_group("encrypt_monitor");
    g.sample_size(10);
    g.bench_with_input(BenchmarkId::new("par", data.len()), &data, |b, d| {
        b.iter(|| par::map(d, |s| encrypt_and_monitor(s, &key, &pp, &ptn)))
    });
    g.bench_with_input(BenchmarkId::new("seq", data.len()), &data, |b, d| {
        b.iter(|| par::map_seq(d, |s| encrypt_and_monitor(s, &key, &pp, &ptn)))
    });
    g.finish();
}

criterion_group!(benches, bench_pipeline);
criterion_main!(benches);
