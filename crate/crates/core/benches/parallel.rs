//! Parallel-vs-sequential comparison for the data-parallel inner loops:
//! per-item strategy pipelines, the all-pairs distance matrix, and record
//! aggregation. The `parallel` arm uses the rayon-backed path (a no-op
//! difference when the crate is built without the `parallel` feature).

use std::collections::BTreeMap;
use std::sync::Mutex;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use polyglot_abstain::backend::{SyntheticBackend, SyntheticOracleConfig};
use polyglot_abstain::corpus::{Choice, DatasetKind, QAItem};
use polyglot_abstain::langspace::{Attribute, LanguageCode, LanguageSpace};
use polyglot_abstain::par;
use polyglot_abstain::rng::{derive_seed, SplitMix64};
use polyglot_abstain::strategies::{run_strategy, PromptSet, StrategyContext, StrategySpec};

fn lc(s: &str) -> LanguageCode {
    s.parse().unwrap()
}

fn synthetic_items(n: usize) -> Vec<QAItem> {
    (0..n)
        .map(|i| {
            let item_id = format!("i{i:05}");
            let mut rng = SplitMix64::new(derive_seed(3, &["gold", &item_id]));
            let gold = (b'A' + rng.next_below(4) as u8) as char;
            QAItem {
                item_id: item_id.clone(),
                dataset: DatasetKind::Custom,
                language: lc("ta"),
                question: format!("[ta] bench question {item_id}"),
                choices: ('A'..='D')
                    .map(|label| Choice {
                        label,
                        text: format!("option {label}"),
                    })
                    .collect(),
                gold,
                domain_tag: None,
            }
        })
        .collect()
}

fn bench_strategy_pipeline(c: &mut Criterion) {
    let space = LanguageSpace::bundled().unwrap();
    let prompts = PromptSet::bundled();
    let oracle = SyntheticBackend::new(SyntheticOracleConfig {
        default_answer_accuracy: 0.6,
        default_feedback_reliability: 0.85,
        seed: 3,
        ..Default::default()
    });
    let shared = Mutex::new(BTreeMap::new());
    let ctx = StrategyContext {
        space: &space,
        prompts: &prompts,
        answerer: &oracle,
        feedback: &oracle,
        seed: 3,
        split_label: "bench".into(),
        shared_decisions: &shared,
    };
    let spec = StrategySpec::named("multi_related");
    let items = synthetic_items(256);

    let per_item = |item: &QAItem| {
        run_strategy(&spec, &[], std::slice::from_ref(item), &ctx)
            .map(|out| out.records.len())
            .unwrap_or(0)
    };

    let mut group = c.benchmark_group("feedback_pipeline_256_items");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("sequential", "synthetic"), |b| {
        b.iter(|| black_box(par::map_seq(&items, per_item).len()))
    });
    group.bench_function(BenchmarkId::new("parallel", "synthetic"), |b| {
        b.iter(|| black_box(par::map(&items, per_item).len()))
    });
    group.finish();
}

fn bench_distance_matrix(c: &mut Criterion) {
    let space = LanguageSpace::bundled().unwrap();
    let codes: Vec<LanguageCode> = space.codes().collect();
    let pairs: Vec<(LanguageCode, LanguageCode)> = codes
        .iter()
        .flat_map(|a| codes.iter().map(move |b| (*a, *b)))
        .collect();

    let distance = |pair: &(LanguageCode, LanguageCode)| {
        space
            .language_distance(pair.0, pair.1, &Attribute::ALL)
            .map(|d| d.value)
            .unwrap_or(f64::NAN)
    };

    let mut group = c.benchmark_group("distance_matrix_27x27");
    group.bench_function(BenchmarkId::new("sequential", "all_attrs"), |b| {
        b.iter(|| black_box(par::sum_by_seq(&pairs, distance)))
    });
    group.bench_function(BenchmarkId::new("parallel", "all_attrs"), |b| {
        b.iter(|| black_box(par::sum_by(&pairs, distance)))
    });
    group.finish();
}

fn bench_record_aggregation(c: &mut Criterion) {
    let confidences: Vec<f64> = {
        let mut rng = SplitMix64::new(17);
        (0..100_000).map(|_| rng.next_f64()).collect()
    };
    // calibration-gap style contribution per record
    let contribution = |conf: &f64| (conf - 0.5).abs().sqrt();

    let mut group = c.benchmark_group("record_aggregation_100k");
    group.bench_function(BenchmarkId::new("sequential", "gap_sum"), |b| {
        b.iter(|| black_box(par::sum_by_seq(&confidences, contribution)))
    });
    group.bench_function(BenchmarkId::new("parallel", "gap_sum"), |b| {
        b.iter(|| black_box(par::sum_by(&confidences, contribution)))
    });
    group.finish();
}

criterion_group!(
    benches,
    bench_strategy_pipeline,
    bench_distance_matrix,
    bench_record_aggregation
);
criterion_main!(benches);
