//! Throughput comparison of the data-parallel audit against a plain
//! sequential sweep over the same traces, plus the metric aggregation cost.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use coherence::metrics::{confusion_matrices, ProblemKEval};
use coherence::model::{CoherenceOutcome, Pattern};
use coherence::steps::{audit_trace, audit_traces};

/// A plausible multi-step trace: a few arithmetic lines, ~10% of them with
/// deliberately wrong results, and a missing box now and then.
fn synthetic_trace(rng: &mut StdRng) -> String {
    let mut text = String::from("Let me work through this. ");
    let steps = rng.random_range(2..=8usize);
    let mut running = 0i64;
    for _ in 0..steps {
        let a = rng.random_range(1..=9_999i64);
        let b = rng.random_range(1..=99i64);
        let (result, symbol) = match rng.random_range(0..3u8) {
            0 => (a + b, "+"),
            1 => (a - b, "-"),
            _ => (a * b, "×"),
        };
        let shown = if rng.random_bool(0.1) { result + 1 } else { result };
        text.push_str(&format!("Next step: {a} {symbol} {b} = {shown} so far. "));
        running = running.wrapping_add(result);
    }
    text.push_str(&format!("The total is {running}. "));
    if rng.random_bool(0.9) {
        text.push_str(&format!("\\boxed{{{running}}}"));
    }
    text
}

fn bench_audit(c: &mut Criterion) {
    let mut group = c.benchmark_group("audit");
    for &size in &[256usize, 2048] {
        let mut rng = StdRng::seed_from_u64(7);
        let traces: Vec<String> = (0..size).map(|_| synthetic_trace(&mut rng)).collect();
        group.throughput(Throughput::Elements(size as u64));
        group.bench_with_input(BenchmarkId::new("sequential", size), &traces, |b, traces| {
            b.iter(|| traces.iter().map(|t| audit_trace(t)).collect::<Vec<_>>())
        });
        group.bench_with_input(BenchmarkId::new("parallel", size), &traces, |b, traces| {
            b.iter(|| audit_traces(traces))
        });
    }
    group.finish();
}

fn random_outcome(rng: &mut StdRng, pass: bool) -> CoherenceOutcome {
    if !pass {
        CoherenceOutcome::Invalid
    } else if rng.random_bool(0.8) {
        CoherenceOutcome::Coherent
    } else {
        CoherenceOutcome::Incoherent
    }
}

fn bench_confusion(c: &mut Criterion) {
    let mut rng = StdRng::seed_from_u64(11);
    let evals: Vec<ProblemKEval> = (0..10_000)
        .map(|i| {
            let base_pass = rng.random_bool(0.4);
            let rl_pass = rng.random_bool(0.6);
            ProblemKEval {
                problem_id: format!("p{i}"),
                k: 16,
                base_pass,
                rl_pass,
                pattern: Pattern::classify(base_pass, rl_pass),
                base_coherence: random_outcome(&mut rng, base_pass),
                rl_coherence: random_outcome(&mut rng, rl_pass),
            }
        })
        .collect();

    c.bench_function("confusion_matrices/10k", |b| {
        b.iter(|| confusion_matrices(&evals, 16))
    });
}

criterion_group!(benches, bench_audit, bench_confusion);
criterion_main!(benches);
