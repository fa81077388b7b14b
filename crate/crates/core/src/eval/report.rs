//! CSV and Markdown emitters with stable column orders. CSV is the machine
//! format, Markdown the human one; both render the same numbers with four
//! decimal places, and undefined metrics print as "undefined".

use super::{ConflictReport, DensitySweep, LatencyReport, PermutationReport, StatSummary};

fn num(v: f64) -> String {
    format!("{v:.4}")
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), num)
}

/// `mode,accuracy` rows, one per labeled run.
pub fn accuracy_csv(rows: &[(String, f64)]) -> String {
    let mut out = String::from("mode,accuracy\n");
    for (label, acc) in rows {
        out.push_str(&format!("{label},{}\n", num(*acc)));
    }
    out
}

pub fn accuracy_markdown(rows: &[(String, f64)]) -> String {
    let mut out = String::from("| mode | accuracy |\n| --- | --- |\n");
    for (label, acc) in rows {
        out.push_str(&format!("| {label} | {} |\n", num(*acc)));
    }
    out
}

pub fn conflict_csv(report: &ConflictReport) -> String {
    let mut out = String::from("neq_rate,align_a,align_v,error_a,error_v,conflict_count,total\n");
    out.push_str(&format!(
        "{},{},{},{},{},{},{}\n",
        num(report.neq_rate),
        opt(report.align_a),
        opt(report.align_v),
        opt(report.error_a),
        opt(report.error_v),
        report.conflict_count,
        report.total,
    ));
    out
}

pub fn conflict_markdown(report: &ConflictReport) -> String {
    format!(
        "| metric | value |\n| --- | --- |\n\
         | A != V rate | {} |\n| AlignA | {} |\n| AlignV | {} |\n\
         | ErrorA | {} |\n| ErrorV | {} |\n| conflict records | {} / {} |\n",
        num(report.neq_rate),
        opt(report.align_a),
        opt(report.align_v),
        opt(report.error_a),
        opt(report.error_v),
        report.conflict_count,
        report.total,
    )
}

pub fn permutation_csv(report: &PermutationReport) -> String {
    let mut out = String::from("order");
    for tag in &report.tags {
        out.push_str(&format!(",{tag}"));
    }
    out.push_str(",overall\n");
    for row in &report.rows {
        out.push_str(&row.order_label());
        for acc in &row.per_tag {
            out.push_str(&format!(",{}", num(*acc)));
        }
        out.push_str(&format!(",{}\n", num(row.overall)));
    }
    out
}

pub fn permutation_markdown(report: &PermutationReport) -> String {
    let mut out = String::from("| order |");
    for tag in &report.tags {
        out.push_str(&format!(" {tag} |"));
    }
    out.push_str(" overall |\n|");
    for _ in 0..(report.tags.len() + 2) {
        out.push_str(" --- |");
    }
    out.push('\n');
    for row in &report.rows {
        out.push_str(&format!("| {} |", row.order_label()));
        for acc in &row.per_tag {
            out.push_str(&format!(" {} |", num(*acc)));
        }
        out.push_str(&format!(" {} |\n", num(row.overall)));
    }
    out
}

pub fn sweep_csv(sweep: &DensitySweep) -> String {
    let mut out = String::from("k,accuracy,yes_rate\n");
    out.push_str(&format!("sequential,{},{}\n", num(sweep.baseline.accuracy), num(sweep.baseline.yes_rate)));
    for (k, point) in &sweep.points {
        out.push_str(&format!("{k},{},{}\n", num(point.accuracy), num(point.yes_rate)));
    }
    out
}

pub fn sweep_markdown(sweep: &DensitySweep) -> String {
    let mut out = String::from("| k | accuracy | yes rate |\n| --- | --- | --- |\n");
    out.push_str(&format!(
        "| sequential | {} | {} |\n",
        num(sweep.baseline.accuracy),
        num(sweep.baseline.yes_rate)
    ));
    for (k, point) in &sweep.points {
        out.push_str(&format!("| {k} | {} | {} |\n", num(point.accuracy), num(point.yes_rate)));
    }
    out
}

fn stat_cells(stat: Option<StatSummary>) -> (String, String, String) {
    match stat {
        Some(s) => (num(s.mean), num(s.p50), num(s.p95)),
        None => ("undefined".into(), "undefined".into(), "undefined".into()),
    }
}

pub fn latency_csv(report: &LatencyReport) -> String {
    let mut out = String::from(
        "stage,calls,prefill_mean_s,prefill_p50_s,prefill_p95_s,gen_per_tok_mean_s,gen_per_tok_p50_s,gen_per_tok_p95_s\n",
    );
    for stage in &report.stages {
        let (pm, p50, p95) = stat_cells(stage.prefill);
        let (gm, g50, g95) = stat_cells(stage.per_token);
        out.push_str(&format!("{},{},{pm},{p50},{p95},{gm},{g50},{g95}\n", stage.stage, stage.calls));
    }
    let (pm, p50, p95) = stat_cells(report.overall_prefill);
    let (gm, g50, g95) = stat_cells(report.overall_per_token);
    out.push_str(&format!("overall,{},{pm},{p50},{p95},{gm},{g50},{g95}\n", report.total_calls));
    out
}

pub fn latency_markdown(report: &LatencyReport) -> String {
    let mut out = String::from(
        "| stage | calls | prefill mean | prefill p50 | prefill p95 | gen/tok mean | gen/tok p50 | gen/tok p95 |\n\
         | --- | --- | --- | --- | --- | --- | --- | --- |\n",
    );
    for stage in &report.stages {
        let (pm, p50, p95) = stat_cells(stage.prefill);
        let (gm, g50, g95) = stat_cells(stage.per_token);
        out.push_str(&format!(
            "| {} | {} | {pm} | {p50} | {p95} | {gm} | {g50} | {g95} |\n",
            stage.stage, stage.calls
        ));
    }
    let (pm, p50, p95) = stat_cells(report.overall_prefill);
    let (gm, g50, g95) = stat_cells(report.overall_per_token);
    out.push_str(&format!(
        "| overall | {} | {pm} | {p50} | {p95} | {gm} | {g50} | {g95} |\n",
        report.total_calls
    ));
    out
}
