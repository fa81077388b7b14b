//! Latency accounting over trace call records: prefill (time-to-first-token)
//! and per-token generation stats, grouped by stage.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::types::{Stage, Trace};

/// Options for latency aggregation. `discard_first_calls` drops the leading
/// N calls (in trace order) as warm-up; the operation default keeps
/// everything, and the CLI applies its own warm-up default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyOptions {
    pub discard_first_calls: usize,
}

/// Mean / median / 95th percentile over one series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatSummary {
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub n: usize,
}

fn summarize(values: &mut [f64]) -> Option<StatSummary> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("timings are finite"));
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    // Nearest-rank percentiles; a single sample is its own median and p95.
    let rank = |p: f64| values[((p * n as f64).ceil() as usize).clamp(1, n) - 1];
    Some(StatSummary { mean, p50: rank(0.50), p95: rank(0.95), n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageLatency {
    pub stage: Stage,
    pub calls: usize,
    /// Absent when no call in this stage reported a prefill time.
    pub prefill: Option<StatSummary>,
    pub per_token: Option<StatSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub stages: Vec<StageLatency>,
    pub overall_prefill: Option<StatSummary>,
    pub overall_per_token: Option<StatSummary>,
    pub total_calls: usize,
}

/// Aggregate call timings grouped by stage and overall.
pub fn latency_report(traces: &[Trace], opts: LatencyOptions) -> LatencyReport {
    let calls: Vec<_> = traces.iter().flat_map(|t| t.calls.iter()).skip(opts.discard_first_calls).collect();

    let mut prefill_by_stage: BTreeMap<Stage, Vec<f64>> = BTreeMap::new();
    let mut per_token_by_stage: BTreeMap<Stage, Vec<f64>> = BTreeMap::new();
    let mut counts: BTreeMap<Stage, usize> = BTreeMap::new();
    let mut all_prefill = Vec::new();
    let mut all_per_token = Vec::new();

    for call in &calls {
        *counts.entry(call.stage).or_default() += 1;
        if let Some(p) = call.prefill_s {
            prefill_by_stage.entry(call.stage).or_default().push(p);
            all_prefill.push(p);
        }
        per_token_by_stage.entry(call.stage).or_default().push(call.gen_s_per_tok);
        all_per_token.push(call.gen_s_per_tok);
    }

    let stages = counts
        .iter()
        .map(|(stage, calls)| StageLatency {
            stage: *stage,
            calls: *calls,
            prefill: prefill_by_stage.get_mut(stage).and_then(|v| summarize(v)),
            per_token: per_token_by_stage.get_mut(stage).and_then(|v| summarize(v)),
        })
        .collect();

    LatencyReport {
        stages,
        overall_prefill: summarize(&mut all_prefill),
        overall_per_token: summarize(&mut all_per_token),
        total_calls: calls.len(),
    }
}
