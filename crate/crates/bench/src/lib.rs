//! Synthetic inputs for the benches: seeded streams, manifests, and
//! prediction sets at adjustable scale.

use rand::rngs::StdRng;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};

use omniroute_core::eval::{AudioRef, DatasetManifest, ManifestRecord, Prediction, PredictionSet, VideoRef};
use omniroute_core::{AudioStream, Frame, VideoStream};

pub fn synthetic_streams(seed: u64, duration_s: f64, frame_count: usize) -> (AudioStream, VideoStream) {
    let mut rng = StdRng::seed_from_u64(seed);
    let audio = AudioStream::new("bench-audio", duration_s, "bench.wav").unwrap();
    let mut timestamps: Vec<f64> = (0..frame_count).map(|_| rng.random_range(0.0..duration_s)).collect();
    timestamps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    timestamps.dedup();
    let frames = timestamps
        .into_iter()
        .enumerate()
        .map(|(i, t)| Frame { timestamp_s: t, image: format!("bench.mp4#f{i}") })
        .collect();
    let video = VideoStream::new("bench-video", duration_s, frames).unwrap();
    (audio, video)
}

pub fn synthetic_manifest(seed: u64, records: usize) -> DatasetManifest {
    let mut rng = StdRng::seed_from_u64(seed);
    let options = ["Yes", "No"];
    let records = (0..records)
        .map(|i| ManifestRecord {
            id: format!("b{i:05}"),
            query: format!("bench query {i}"),
            options: options.iter().map(|s| s.to_string()).collect(),
            gold: options.choose(&mut rng).unwrap().to_string(),
            tag: Some(if i % 2 == 0 { "even" } else { "odd" }.to_string()),
            audio: Some(AudioRef { path: format!("b{i:05}.wav"), duration_s: 10.0 }),
            video: Some(VideoRef {
                path: format!("b{i:05}.mp4"),
                duration_s: 10.0,
                frame_timestamps: vec![1.0, 5.0, 9.0],
            }),
            images: None,
        })
        .collect();
    DatasetManifest::new(records).unwrap()
}

pub fn synthetic_predictions(seed: u64, manifest: &DatasetManifest) -> PredictionSet {
    let mut rng = StdRng::seed_from_u64(seed);
    manifest
        .records
        .iter()
        .map(|r| {
            let p = if rng.random_bool(0.1) {
                Prediction::Unresolved
            } else {
                Prediction::Resolved(r.options.choose(&mut rng).unwrap().clone())
            };
            (r.id.clone(), p)
        })
        .collect()
}
