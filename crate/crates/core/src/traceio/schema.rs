use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricCategory {
    VmStats,
    HwCounters,
    Topdown,
}

impl MetricCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricCategory::VmStats => "vm_stats",
            MetricCategory::HwCounters => "hw_counters",
            MetricCategory::Topdown => "topdown",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "vm_stats" => Some(MetricCategory::VmStats),
            "hw_counters" => Some(MetricCategory::HwCounters),
            "topdown" => Some(MetricCategory::Topdown),
            _ => None,
        }
    }
}

impl fmt::Display for MetricCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const NEIGHBOR_PREFIX: &str = "nbr_";

const VM_STATS: [&str; 53] = [
    "cpu_time", "cpu_user_time", "cpu_system_time", "cpu_util", "cpu_steal", "cpu_iowait",
    "vcpu0_time", "vcpu1_time", "vcpu2_time", "vcpu3_time",
    "vcpu0_wait", "vcpu1_wait", "vcpu2_wait", "vcpu3_wait",
    "vcpu0_delay", "vcpu1_delay", "vcpu2_delay", "vcpu3_delay",
    "mem_actual", "mem_unused", "mem_available", "mem_usable", "mem_rss",
    "mem_swap_in", "mem_swap_out", "mem_major_fault", "mem_minor_fault",
    "mem_disk_caches", "mem_hugetlb_pgalloc", "mem_hugetlb_pgfail",
    "net_rx_bytes", "net_rx_pkts", "net_rx_errs", "net_rx_drop",
    "net_tx_bytes", "net_tx_pkts", "net_tx_errs", "net_tx_drop",
    "blk_rd_reqs", "blk_rd_bytes", "blk_rd_times",
    "blk_wr_reqs", "blk_wr_bytes", "blk_wr_times",
    "blk_fl_reqs", "blk_fl_times", "blk_allocation", "blk_capacity", "blk_physical",
    "sched_run_delay", "sched_switches", "host_cpu_util", "host_mem_used",
];

const HW_COUNTERS: [&str; 38] = [
    "cycles", "instructions", "ref_cycles", "bus_cycles", "branches", "branch_misses",
    "cache_references", "cache_misses",
    "llc_loads", "llc_load_misses", "llc_stores", "llc_store_misses",
    "l1d_loads", "l1d_load_misses", "l1d_stores", "l1i_load_misses",
    "dtlb_loads", "dtlb_load_misses", "dtlb_stores", "dtlb_store_misses",
    "itlb_loads", "itlb_load_misses",
    "node_loads", "node_load_misses", "node_stores", "node_store_misses",
    "mem_loads", "mem_stores", "stalled_cycles_frontend", "stalled_cycles_backend",
    "cpu_migrations", "context_switches", "page_faults", "minor_faults", "major_faults",
    "alignment_faults", "emulation_faults", "offcore_requests",
];

const TOPDOWN: [&str; 12] = [
    "retiring", "bad_speculation", "frontend_bound", "backend_bound",
    "fetch_latency", "fetch_bandwidth", "branch_mispredicts", "machine_clears",
    "memory_bound", "core_bound", "light_operations", "heavy_operations",
];

/// Ordered base metrics of one VM. The model-facing schema is twice as wide:
/// the base metrics of the primary VM followed by the same metrics averaged
/// over its co-resident neighbours.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSchema {
    names: Vec<String>,
    categories: Vec<MetricCategory>,
}

impl MetricSchema {
    pub fn new(names: Vec<String>, categories: Vec<MetricCategory>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("schema has no metrics".into()));
        }
        if names.len() != categories.len() {
            return Err(Error::Config(format!(
                "schema has {} names but {} categories",
                names.len(),
                categories.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if n.is_empty() || n.contains(',') || n.starts_with(NEIGHBOR_PREFIX) {
                return Err(Error::Config(format!("invalid metric name {n:?}")));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::Config(format!("duplicate metric name {n:?}")));
            }
        }
        Ok(Self { names, categories })
    }

    /// The full 103-metric host-observable set (53 + 38 + 12).
    pub fn full() -> Self {
        let mut names = Vec::with_capacity(103);
        let mut categories = Vec::with_capacity(103);
        for (list, cat) in [
            (&VM_STATS[..], MetricCategory::VmStats),
            (&HW_COUNTERS[..], MetricCategory::HwCounters),
            (&TOPDOWN[..], MetricCategory::Topdown),
        ] {
            for n in list {
                names.push(n.to_string());
                categories.push(cat);
            }
        }
        Self::new(names, categories).expect("built-in schema is valid")
    }

    /// A 12-metric subset (24 model columns) for fast desk-scale runs.
    pub fn desk() -> Self {
        Self::subset(&[
            "cpu_util", "cpu_steal", "mem_rss", "mem_major_fault", "net_rx_bytes", "blk_rd_bytes",
            "cycles", "instructions", "llc_load_misses", "dtlb_load_misses",
            "frontend_bound", "backend_bound",
        ])
        .expect("desk subset names exist")
    }

    /// Subset of the full schema, in the given order.
    pub fn subset(names: &[&str]) -> Result<Self> {
        let full = Self::full();
        let mut out_names = Vec::new();
        let mut cats = Vec::new();
        for n in names {
            let i = full
                .names
                .iter()
                .position(|m| m == n)
                .ok_or_else(|| Error::Config(format!("unknown metric {n:?}")))?;
            out_names.push(full.names[i].clone());
            cats.push(full.categories[i]);
        }
        Self::new(out_names, cats)
    }

    /// Number of base metrics (103 for the full schema).
    pub fn n_base(&self) -> usize {
        self.names.len()
    }

    /// Number of model columns (`2 * n_base`).
    pub fn width(&self) -> usize {
        2 * self.names.len()
    }

    pub fn base_names(&self) -> &[String] {
        &self.names
    }

    pub fn base_categories(&self) -> &[MetricCategory] {
        &self.categories
    }

    pub fn category_counts(&self) -> (usize, usize, usize) {
        let count = |c| self.categories.iter().filter(|&&x| x == c).count();
        (
            count(MetricCategory::VmStats),
            count(MetricCategory::HwCounters),
            count(MetricCategory::Topdown),
        )
    }

    pub fn is_full(&self) -> bool {
        self.n_base() == 103
    }

    /// Column names of the aggregated matrix: primary block then neighbour block.
    pub fn column_names(&self) -> Vec<String> {
        self.names
            .iter()
            .cloned()
            .chain(self.names.iter().map(|n| format!("{NEIGHBOR_PREFIX}{n}")))
            .collect()
    }

    pub fn column_categories(&self) -> Vec<MetricCategory> {
        self.categories.iter().chain(self.categories.iter()).copied().collect()
    }

    /// Checks the full-schema invariants: 103 names split 53/38/12.
    pub fn check_full(&self) -> Result<()> {
        if self.n_base() != 103 {
            return Err(Error::Consistency(format!(
                "full schema must have 103 base metrics, found {}",
                self.n_base()
            )));
        }
        let counts = self.category_counts();
        if counts != (53, 38, 12) {
            return Err(Error::Consistency(format!(
                "category counts {counts:?}, expected (53, 38, 12)"
            )));
        }
        Ok(())
    }

    /// `schema.csv` text: `index,name,category`, one line per model column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,name,category\n");
        for (i, (n, c)) in self
            .column_names()
            .iter()
            .zip(self.column_categories())
            .enumerate()
        {
            out.push_str(&format!("{i},{n},{c}\n"));
        }
        out
    }

    /// Hex SHA-256 of the canonical `schema.csv` text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_csv().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
