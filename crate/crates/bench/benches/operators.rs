use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use kernlens::harmony::{analyze_progression, chordify};
use kernlens::key::{estimate_key, windowed_keys};
use kernlens::tools::{Registry, ToolCall};
use kernlens::{parse_kern, MeasureSpan};
use kernlens_bench::{fixture_score, fixture_text};
use serde_json::json;

fn parsing(c: &mut Criterion) {
    let mut group = c.benchmark_group("parse");
    for name in [
        "chorale_four_parts",
        "modulation_c_to_g",
        "tuplets_and_small_values",
    ] {
        let text = fixture_text(name);
        group.bench_function(name, |b| b.iter(|| parse_kern(black_box(&text)).unwrap()));
    }
    group.finish();
}

fn analysis(c: &mut Criterion) {
    let score = fixture_score("modulation_c_to_g");
    let span = score.full_span().unwrap();
    c.bench_function("estimate_key", |b| {
        b.iter(|| estimate_key(black_box(&score), span).unwrap())
    });
    c.bench_function("windowed_keys", |b| {
        b.iter(|| windowed_keys(black_box(&score), 4, 2).unwrap())
    });
    c.bench_function("chordify", |b| {
        b.iter(|| chordify(black_box(&score), span).unwrap())
    });
    c.bench_function("analyze_progression", |b| {
        b.iter(|| {
            analyze_progression(black_box(&score), MeasureSpan::new(1, 4), None, true).unwrap()
        })
    });
}

fn tools(c: &mut Criterion) {
    let score = fixture_score("chorale_four_parts");
    let registry = Registry::default();
    let calls = [
        ToolCall::new("score_overview", json!({})),
        ToolCall::new("identify_chord_at", json!({"measure": 1})),
        ToolCall::new("get_pitch_histogram", json!({"weighting": "duration"})),
        ToolCall::new("roman_numeral_at", json!({"measure": 99})),
    ];
    let mut group = c.benchmark_group("tool_execute");
    for call in &calls {
        group.bench_function(&call.tool, |b| {
            b.iter(|| registry.execute(black_box(&score), call))
        });
    }
    group.finish();
}

criterion_group!(benches, parsing, analysis, tools);
criterion_main!(benches);
