//! Benchmark runs: per-item scoring, aggregation and report rendering.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{id_em, id_f1, line_em, line_es, member_hit};
use crate::config::StrategyConfig;
use crate::corpusgen::CompletionTask;
use crate::pipeline::{complete, Perturbation, PhaseTiming, RepoContext};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ItemScores {
    pub line_em: f64,
    pub line_es: f64,
    pub id_em: f64,
    pub id_f1: f64,
    pub member_hit: f64,
}

impl ItemScores {
    pub fn score(pred: &str, reference: &str) -> Self {
        Self {
            line_em: line_em(pred, reference),
            line_es: line_es(pred, reference),
            id_em: id_em(pred, reference),
            id_f1: id_f1(pred, reference),
            member_hit: member_hit(pred, reference),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PostStats {
    pub n_candidates: usize,
    pub chosen: usize,
    pub any_passed: bool,
    pub chosen_passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub task_id: String,
    pub prediction: String,
    pub groundtruth: String,
    pub scores: ItemScores,
    pub timing: PhaseTiming,
    pub triggered_steps: usize,
    pub violations: usize,
    pub empty_mask_steps: usize,
    pub post: Option<PostStats>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub analysis_s: f64,
    pub inference_s: f64,
    pub retrieval_s: f64,
}

/// Percentages are `100 * mean` of the per-item scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub n_tasks: usize,
    pub line_em: f64,
    pub line_es: f64,
    pub id_em: f64,
    pub id_f1: f64,
    pub member_accuracy: f64,
    pub mean_latency_s: f64,
    pub latency_breakdown: LatencyBreakdown,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub report: MetricsReport,
    pub items: Vec<ItemResult>,
}

impl BenchRun {
    /// The same run with every timing field set to zero.
    pub fn without_timing(&self) -> Self {
        let mut out = self.clone();
        out.report.mean_latency_s = 0.0;
        out.report.latency_breakdown = LatencyBreakdown::default();
        for item in &mut out.items {
            item.timing = PhaseTiming::default();
        }
        out
    }

    /// Report over the items whose task id satisfies `keep`.
    pub fn subset(&self, label: &str, keep: impl Fn(&str) -> bool) -> MetricsReport {
        let items: Vec<ItemResult> = self.items.iter().filter(|i| keep(&i.task_id)).cloned().collect();
        aggregate(label, &items)
    }
}

fn mean(items: &[ItemResult], f: impl Fn(&ItemResult) -> f64) -> f64 {
    if items.is_empty() {
        return 0.0;
    }
    items.iter().map(f).sum::<f64>() / items.len() as f64
}

pub fn aggregate(label: &str, items: &[ItemResult]) -> MetricsReport {
    MetricsReport {
        label: label.to_string(),
        n_tasks: items.len(),
        line_em: 100.0 * mean(items, |i| i.scores.line_em),
        line_es: 100.0 * mean(items, |i| i.scores.line_es),
        id_em: 100.0 * mean(items, |i| i.scores.id_em),
        id_f1: 100.0 * mean(items, |i| i.scores.id_f1),
        member_accuracy: 100.0 * mean(items, |i| i.scores.member_hit),
        mean_latency_s: mean(items, |i| i.timing.total_s),
        latency_breakdown: LatencyBreakdown {
            analysis_s: mean(items, |i| i.timing.analysis_s),
            inference_s: mean(items, |i| i.timing.inference_s),
            retrieval_s: mean(items, |i| i.timing.retrieval_s),
        },
        n_failed: items.iter().filter(|i| i.error.is_some()).count(),
    }
}

/// Score a prediction without running the pipeline.
pub fn score_prediction(task_id: &str, prediction: &str, groundtruth: &str) -> ItemResult {
    ItemResult {
        task_id: task_id.to_string(),
        prediction: prediction.to_string(),
        groundtruth: groundtruth.to_string(),
        scores: ItemScores::score(prediction, groundtruth),
        timing: PhaseTiming::default(),
        triggered_steps: 0,
        violations: 0,
        empty_mask_steps: 0,
        post: None,
        error: None,
    }
}

fn run_item(
    task: &CompletionTask,
    repos: &HashMap<&str, &RepoContext>,
    config: &StrategyConfig,
    perturb: Option<&Perturbation>,
) -> ItemResult {
    let failed = |e: String| ItemResult {
        error: Some(e),
        scores: ItemScores::default(),
        ..score_prediction(&task.task_id, "", &task.groundtruth)
    };
    let Some(repo) = repos.get(task.repo.as_str()) else {
        return failed(format!("unknown repository `{}`", task.repo));
    };
    match complete(task, repo, config, perturb) {
        Ok(out) => ItemResult {
            timing: out.timing,
            triggered_steps: out.trace.triggered.len(),
            violations: out.trace.violations(),
            empty_mask_steps: out.trace.empty_mask_steps(),
            post: out.selection.as_ref().map(|s| PostStats {
                n_candidates: out.candidates.len(),
                chosen: s.chosen,
                any_passed: s.any_passed(),
                chosen_passed: s.chosen_passed(),
            }),
            ..score_prediction(&task.task_id, &out.prediction, &task.groundtruth)
        },
        Err(e) => failed(e.to_string()),
    }
}

/// Run `config` over `tasks`. Failures are recorded per item and score 0.
/// Items come back in task order whatever `jobs` is.
pub fn run_bench(
    tasks: &[CompletionTask],
    repos: &[RepoContext],
    config: &StrategyConfig,
    perturb: Option<&Perturbation>,
    jobs: usize,
) -> BenchRun {
    let by_name: HashMap<&str, &RepoContext> = repos.iter().map(|r| (r.snapshot.name.as_str(), r)).collect();
    let items: Vec<ItemResult> = if jobs <= 1 {
        tasks.iter().map(|t| run_item(t, &by_name, config, perturb)).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .expect("thread pool");
        pool.install(|| tasks.par_iter().map(|t| run_item(t, &by_name, config, perturb)).collect())
    };
    let mut label = config.label();
    if perturb.is_some() {
        label.push_str(" (perturbed)");
    }
    BenchRun {
        report: aggregate(&label, &items),
        items,
    }
}

pub fn to_json(runs: &[BenchRun]) -> String {
    serde_json::to_string_pretty(runs).expect("reports serialize")
}

/// JSON with timing fields zeroed, for comparing runs.
pub fn deterministic_json(runs: &[BenchRun]) -> String {
    let stripped: Vec<BenchRun> = runs.iter().map(BenchRun::without_timing).collect();
    to_json(&stripped)
}

fn table(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let render = |cells: Vec<String>| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = render(header.iter().map(|h| h.to_string()).collect());
    out.push_str(&render(widths.iter().map(|w| "-".repeat(*w)).collect()));
    for row in rows {
        out.push_str(&render(row));
    }
    out
}

/// Accuracy table: Line EM, Line ES, ID EM, F1.
pub fn metrics_table(reports: &[MetricsReport]) -> String {
    let rows = reports
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                r.n_tasks.to_string(),
                format!("{:.2}", r.line_em),
                format!("{:.2}", r.line_es),
                format!("{:.2}", r.id_em),
                format!("{:.2}", r.id_f1),
                format!("{:.2}", r.member_accuracy),
                r.n_failed.to_string(),
            ]
        })
        .collect();
    table(
        &["Strategy", "N", "Line EM", "Line ES", "ID EM", "F1", "Member", "Failed"],
        rows,
    )
}

/// Mean seconds per item, split by phase.
pub fn latency_table(reports: &[MetricsReport]) -> String {
    let rows = reports
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                format!("{:.6}", r.latency_breakdown.analysis_s),
                format!("{:.6}", r.latency_breakdown.inference_s),
                format!("{:.6}", r.latency_breakdown.retrieval_s),
                format!("{:.6}", r.mean_latency_s),
            ]
        })
        .collect();
    table(&["Strategy", "Analysis s", "Inference s", "Retrieval s", "Total s"], rows)
}
