use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::HigherIsBetter => "higher_is_better",
            Direction::LowerIsBetter => "lower_is_better",
        }
    }
}

/// The application-level performance metric a run is scored by.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PerfMetricKind {
    pub name: String,
    pub direction: Direction,
}

impl PerfMetricKind {
    pub fn new(name: impl Into<String>, direction: Direction) -> Self {
        Self {
            name: name.into(),
            direction,
        }
    }

    /// Direction implied by a metric name: rates and throughput are
    /// higher-is-better, times and latencies lower-is-better.
    pub fn from_name(name: &str) -> Option<Self> {
        let lower = name.to_ascii_lowercase();
        let direction = if lower.starts_with("operations/")
            || lower.starts_with("requests/")
            || lower.starts_with("throughput")
        {
            Direction::HigherIsBetter
        } else if lower.starts_with("execution time") || lower.starts_with("latency") {
            Direction::LowerIsBetter
        } else {
            return None;
        };
        Some(Self::new(name, direction))
    }

    /// The eleven benchmark applications and their scoring metrics.
    pub fn catalogue() -> [(&'static str, PerfMetricKind, bool); 11] {
        use Direction::*;
        let k = PerfMetricKind::new;
        [
            ("data_serving", k("Operations/s", HigherIsBetter), true),
            ("redis", k("Requests/s", HigherIsBetter), true),
            ("web_search", k("Operations/s", HigherIsBetter), true),
            ("graph_analytics", k("Execution time (s)", LowerIsBetter), false),
            ("data_analytics", k("Execution time (s)", LowerIsBetter), false),
            ("mlperf", k("Requests/s", HigherIsBetter), false),
            ("hbase", k("Latency (s)", LowerIsBetter), false),
            ("alluxio", k("Throughput", HigherIsBetter), true),
            ("minio", k("Throughput", HigherIsBetter), true),
            ("tpcc", k("Latency (ms)", LowerIsBetter), false),
            ("flink", k("Operations/ms", HigherIsBetter), false),
        ]
    }
}

/// Degradation label: ideal over observed performance, oriented so that
/// 1 means no slowdown, clamped to at most 1.
pub fn compute_label(pm_ideal: f64, pm_actual: f64, kind: &PerfMetricKind) -> Result<f64> {
    if !(pm_ideal.is_finite() && pm_ideal > 0.0) {
        return Err(Error::Domain(format!("pm_ideal must be positive, got {pm_ideal}")));
    }
    if !(pm_actual.is_finite() && pm_actual > 0.0) {
        return Err(Error::Domain(format!("pm_actual must be positive, got {pm_actual}")));
    }
    let ratio = match kind.direction {
        Direction::LowerIsBetter => pm_ideal / pm_actual,
        Direction::HigherIsBetter => pm_actual / pm_ideal,
    };
    Ok(ratio.min(1.0))
}
