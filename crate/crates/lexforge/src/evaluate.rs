//! Batch evaluation of prediction records.

use std::collections::BTreeMap;

use lexforge_core::metrics::{self, MetricKind, MetricOptions};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<MetricKind>,
    pub pred: Value,
    pub gold: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskReport {
    pub metric: MetricKind,
    pub count: usize,
    /// Records whose shape did not fit the metric; excluded from `mean`.
    pub invalid: usize,
    pub mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tasks: BTreeMap<String, TaskReport>,
    pub options: MetricOptions,
    /// Set when any task uses NLD, whose formula is a local choice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nld_formula: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("record {index} (task `{task}`) has no metric and none was given")]
    MissingMetric { index: usize, task: String },
    #[error("task `{task}` mixes metrics {first} and {second}")]
    MixedMetrics { task: String, first: MetricKind, second: MetricKind },
}

/// Per-task aggregates. `metric_override` replaces every record's metric.
pub fn evaluate(records: &[EvalRecord], metric_override: Option<MetricKind>, opts: &MetricOptions) -> Result<EvalReport, EvalError> {
    let mut groups: BTreeMap<&str, (MetricKind, Vec<(Value, Value)>, usize)> = BTreeMap::new();
    for (index, r) in records.iter().enumerate() {
        let kind = metric_override.or(r.metric).ok_or_else(|| EvalError::MissingMetric { index, task: r.task.clone() })?;
        let entry = groups.entry(&r.task).or_insert((kind, Vec::new(), 0));
        if entry.0 != kind {
            return Err(EvalError::MixedMetrics { task: r.task.clone(), first: entry.0, second: kind });
        }
        if metrics::score(kind, &r.pred, &r.gold, opts).is_ok() {
            entry.1.push((r.pred.clone(), r.gold.clone()));
        } else {
            entry.2 += 1;
        }
    }
    let mut uses_nld = false;
    let tasks = groups
        .into_iter()
        .map(|(task, (metric, pairs, invalid))| {
            uses_nld |= metric == MetricKind::Nld;
            let mean = metrics::aggregate(metric, &pairs, opts).ok();
            (task.to_string(), TaskReport { metric, count: pairs.len() + invalid, invalid, mean })
        })
        .collect();
    let nld_formula = uses_nld.then(|| format!("1 - min(1, |ln(1+pred) - ln(1+gold)| / ln(1+{}))", opts.nld_max_term));
    Ok(EvalReport { tasks, options: *opts, nld_formula })
}
