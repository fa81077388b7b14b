use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use omniroute_bench::synthetic_streams;
use omniroute_core::topology::{self, SegmentPlan, DEFAULT_DURATION_TOLERANCE_S};
use omniroute_core::{MessageComposition, ModalityKind, Stage, StreamSet};

fn bench_interleave(c: &mut Criterion) {
    let (audio, video) = synthetic_streams(1, 600.0, 300);
    let mut group = c.benchmark_group("interleave");
    for k in [1u32, 4, 16, 64] {
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, &k| {
            b.iter(|| {
                let parts =
                    topology::interleave(black_box(&audio), black_box(&video), k, DEFAULT_DURATION_TOLERANCE_S)
                        .unwrap();
                black_box(parts)
            });
        });
    }
    group.finish();
}

fn bench_segment_video(c: &mut Criterion) {
    let (_, video) = synthetic_streams(2, 600.0, 1000);
    let plan = SegmentPlan::equal_windows(600.0, 32).unwrap();
    c.bench_function("segment_video_1000_frames_k32", |b| {
        b.iter(|| {
            let buckets = topology::segment_video(black_box(&video), &plan, DEFAULT_DURATION_TOLERANCE_S).unwrap();
            black_box(buckets)
        });
    });
}

fn bench_fingerprint(c: &mut Criterion) {
    let (audio, video) = synthetic_streams(3, 600.0, 300);
    let streams = StreamSet::default().with_audio(audio).with_video(video);
    let parts = topology::build_sequential(
        &[ModalityKind::Audio, ModalityKind::Video],
        &streams,
        "what instrument is playing?",
    )
    .unwrap();
    let composition = MessageComposition::new(Stage::Decide, "decide", parts).unwrap();
    c.bench_function("composition_fingerprint", |b| {
        b.iter(|| black_box(composition.fingerprint()));
    });
}

criterion_group!(benches, bench_interleave, bench_segment_video, bench_fingerprint);
criterion_main!(benches);
