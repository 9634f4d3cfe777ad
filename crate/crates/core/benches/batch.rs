//! Batch throughput, rayon pool against the calling thread.
//!
//! Runs are shortened so one iteration stays in the sub-second range; the
//! ratio between the two arms is what matters, not the absolute numbers.
//! Without the `parallel` feature both arms are sequential.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use packsim::experiment::{run_batch, run_batch_sequential, sweep, RunSpec};
use packsim::Scenario;

fn specs(base: &str, fixed: &[&str], vary: &[(&str, &[&str])]) -> Vec<RunSpec> {
    let base = Scenario::load(base).expect("bundled scenario");
    let fixed: Vec<String> = fixed.iter().map(|s| s.to_string()).collect();
    let vary: Vec<(String, Vec<String>)> = vary
        .iter()
        .map(|(k, vs)| (k.to_string(), vs.iter().map(|v| v.to_string()).collect()))
        .collect();
    sweep(&base, &fixed, &vary).expect("valid sweep")
}

fn bench_batches(c: &mut Criterion) {
    let cases = [
        (
            "seeds",
            specs("grid7x7", &["duration_s=20", "routing=part"], &[("seed", &["1", "2", "3", "4"])]),
        ),
        (
            "speed_sweep",
            specs(
                "mobile30",
                &["duration_s=20", "routing=part"],
                &[("speed", &["1", "10", "20"]), ("variant", &["reno", "vegas"])],
            ),
        ),
    ];
    let mut g = c.benchmark_group("batch");
    g.sample_size(10);
    for (name, specs) in &cases {
        g.throughput(Throughput::Elements(specs.len() as u64));
        g.bench_with_input(BenchmarkId::new("parallel", name), specs, |b, s| {
            b.iter(|| run_batch(s))
        });
        g.bench_with_input(BenchmarkId::new("sequential", name), specs, |b, s| {
            b.iter(|| run_batch_sequential(s))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_batches);
criterion_main!(benches);
