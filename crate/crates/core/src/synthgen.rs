//! Synthetic datasets with a known degradation function.
//!
//! Each run has a client load series `l(t)` shaped like one of the workload
//! scenarios and up to eight neighbour VMs with their own loads. Primary
//! metrics respond affinely to the load, neighbour metrics to the
//! contention `c(t) = (1/8) * sum_k l_k(t)`, and the label is
//!
//! ```text
//! P = 1 / (1 + alpha*c + beta*c*l + gamma*c^2)
//! ```
//!
//! with `c`, `l` the time means of contention and load.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{map_range, Parallelism};
use crate::seed::SeedStream;
use crate::traceio::{
    aggregate_neighbors, compute_label, AppClass, Direction, Matrix, MetricSchema,
    PerfMetricKind, RunRecord, Scenario, TraceDataset,
};

pub const MAX_NEIGHBORS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadProfile {
    pub kind: Scenario,
    pub base_level: f64,
    pub amplitude: f64,
    /// Period in seconds; only used by periodic workloads.
    pub period_s: usize,
    pub seed: u64,
}

impl WorkloadProfile {
    pub fn constant(level: f64) -> Self {
        Self {
            kind: Scenario::Static,
            base_level: level,
            amplitude: 0.0,
            period_s: 1,
            seed: 0,
        }
    }
}

/// Client load series of length `t`, every value in `[0, 1]`.
///
/// Dynamic shapes stay inside `[base_level, base_level + amplitude]`.
pub fn gen_workload(profile: &WorkloadProfile, t: usize) -> Result<Vec<f64>> {
    let (base, amp) = (profile.base_level, profile.amplitude);
    if t == 0 {
        return Err(Error::Config("workload length must be positive".into()));
    }
    if !(0.0..=1.0).contains(&base) || !(0.0..=1.0).contains(&amp) || base + amp > 1.0 {
        return Err(Error::Config(format!(
            "base level {base} and amplitude {amp} leave the [0, 1] envelope"
        )));
    }
    let ramp = |i: usize| {
        if t == 1 {
            0.0
        } else {
            i as f64 / (t - 1) as f64
        }
    };
    let series = match profile.kind {
        Scenario::Static => vec![base; t],
        Scenario::MonotonicUp => (0..t).map(|i| base + amp * ramp(i)).collect(),
        Scenario::MonotonicDown => (0..t).map(|i| base + amp * (1.0 - ramp(i))).collect(),
        Scenario::Periodic => {
            let p = profile.period_s;
            if p == 0 || p > t {
                return Err(Error::Config(format!("period {p} must be in 1..={t}")));
            }
            let cycle: Vec<f64> = (0..p)
                .map(|i| {
                    let phase = std::f64::consts::TAU * i as f64 / p as f64;
                    base + amp * 0.5 * (1.0 - phase.cos())
                })
                .collect();
            (0..t).map(|i| cycle[i % p]).collect()
        }
        Scenario::Random => {
            let mut rng = SeedStream::root(profile.seed).named("workload").rng();
            let (lo, hi) = (base, base + amp);
            let step = amp * 0.25;
            let mut level = base + amp * rng.random::<f64>();
            (0..t)
                .map(|_| {
                    let out = level;
                    if step > 0.0 {
                        level = (level + rng.random_range(-step..=step)).clamp(lo, hi);
                    }
                    out.clamp(0.0, 1.0)
                })
                .collect()
        }
    };
    Ok(series)
}

/// Coefficients of the closed-form degradation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthLabeler {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl GroundTruthLabeler {
    pub fn label(&self, contention_mean: f64, load_mean: f64) -> f64 {
        let c = contention_mean;
        let denom = 1.0 + self.alpha * c + self.beta * c * load_mean + self.gamma * c * c;
        (1.0 / denom).clamp(f64::MIN_POSITIVE, 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterferenceConfig {
    pub n_neighbors: usize,
    pub labeler: GroundTruthLabeler,
    pub noise_sigma: f64,
}

impl InterferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_neighbors > MAX_NEIGHBORS {
            return Err(Error::Config(format!(
                "at most {MAX_NEIGHBORS} neighbours share a socket, got {}",
                self.n_neighbors
            )));
        }
        let l = &self.labeler;
        for (name, v) in [("alpha", l.alpha), ("beta", l.beta), ("gamma", l.gamma), ("noise_sigma", self.noise_sigma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-application metric response: primary metric `m` reads
/// `offset[m] + gain[m] * l(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppProfile {
    pub app_id: String,
    pub pm_kind: PerfMetricKind,
    pub pm_ideal: f64,
    pub offset: Vec<f64>,
    pub gain: Vec<f64>,
}

fn name_hash(name: &str) -> u64 {
    SeedStream::root(0).named(name).seed()
}

/// Gain of neighbour metric `m` with respect to contention; depends only on
/// the metric name, so it is shared by every application.
pub fn neighbor_gain(schema: &MetricSchema) -> Vec<f64> {
    schema
        .base_names()
        .iter()
        .map(|n| metric_scale(n) * (0.5 + (name_hash(n) % 1000) as f64 / 1000.0))
        .collect()
}

/// Per-metric unit scale (counters are large, ratios small).
fn metric_scale(name: &str) -> f64 {
    10f64.powi((name_hash(name) >> 20) as i32 % 5 - 1)
}

impl AppProfile {
    pub fn random(app_id: &str, pm_kind: PerfMetricKind, schema: &MetricSchema, stream: SeedStream) -> Self {
        let mut rng = stream.rng();
        let mut offset = Vec::with_capacity(schema.n_base());
        let mut gain = Vec::with_capacity(schema.n_base());
        for n in schema.base_names() {
            let s = metric_scale(n);
            offset.push(s * rng.random_range(0.0..0.3));
            gain.push(s * rng.random_range(0.7..1.3));
        }
        Self {
            app_id: app_id.to_string(),
            pm_kind,
            pm_ideal: rng.random_range(10.0..1000.0),
            offset,
            gain,
        }
    }
}

fn random_neighbor_profile(t: usize, stream: SeedStream) -> WorkloadProfile {
    let mut rng = stream.rng();
    let kinds = [Scenario::Static, Scenario::MonotonicUp, Scenario::MonotonicDown, Scenario::Periodic, Scenario::Random];
    let kind = kinds[rng.random_range(0..kinds.len())];
    let base = rng.random_range(0.0..0.8);
    let amplitude = rng.random_range(0.0..=(1.0 - base));
    WorkloadProfile {
        kind,
        base_level: base,
        amplitude,
        period_s: periodic_period(t, rng.random_range(0..3)),
        seed: rng.random(),
    }
}

/// One of three periods (long, medium, short) for a run of length `t`.
pub fn periodic_period(t: usize, which: usize) -> usize {
    let div = [2, 4, 8][which % 3];
    (t / div).max(2).min(t)
}

/// Synthesizes one run of `app` under the given load and interference.
pub fn gen_trace(
    app: &AppProfile,
    scenario: Scenario,
    workload: &[f64],
    interference: &InterferenceConfig,
    schema: &MetricSchema,
    stream: SeedStream,
) -> Result<RunRecord> {
    interference.validate()?;
    let t = workload.len();
    let n = schema.n_base();
    if t == 0 {
        return Err(Error::Config("empty workload".into()));
    }
    if app.offset.len() != n || app.gain.len() != n {
        return Err(Error::Config(format!(
            "app {} has a response for {} metrics, schema has {n}",
            app.app_id,
            app.offset.len()
        )));
    }
    let sigma = interference.noise_sigma;
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = stream.named("noise").rng();
    let mut draw = |scale: f64| if sigma > 0.0 { sigma * scale * noise.sample(&mut rng) } else { 0.0 };

    let primary = Matrix::from_fn(n, t, |m, i| app.offset[m] + app.gain[m] * workload[i] + draw(app.gain[m]));

    let k = interference.n_neighbors;
    let loads = (0..k)
        .map(|j| gen_workload(&random_neighbor_profile(t, stream.named("neighbor").at(j as u64)), t))
        .collect::<Result<Vec<_>>>()?;
    let contention: Vec<f64> = (0..t)
        .map(|i| loads.iter().map(|l| l[i]).sum::<f64>() / MAX_NEIGHBORS as f64)
        .collect();
    let ngain = neighbor_gain(schema);
    // each neighbour reports its load scaled by socket occupancy, so the
    // neighbour mean reads ngain * c(t)
    let occupancy = k as f64 / MAX_NEIGHBORS as f64;
    let neighbors: Vec<Matrix> = loads
        .iter()
        .map(|l| Matrix::from_fn(n, t, |m, i| ngain[m] * occupancy * l[i] + draw(ngain[m])))
        .collect();
    let matrix = aggregate_neighbors(&primary, &neighbors)?;

    let c_mean = contention.iter().sum::<f64>() / t as f64;
    let l_mean = workload.iter().sum::<f64>() / t as f64;
    let p = interference.labeler.label(c_mean, l_mean);
    let pm_actual = match app.pm_kind.direction {
        Direction::LowerIsBetter => app.pm_ideal / p,
        Direction::HigherIsBetter => app.pm_ideal * p,
    };
    let label = compute_label(app.pm_ideal, pm_actual, &app.pm_kind)?;
    Ok(RunRecord {
        app_id: app.app_id.clone(),
        run_id: String::new(),
        scenario,
        matrix,
        pm_kind: app.pm_kind.clone(),
        pm_ideal: app.pm_ideal,
        pm_actual,
        label,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_apps: usize,
    pub runs_per_app: usize,
    pub static_only_fraction: f64,
    pub t_min: usize,
    pub t_max: usize,
    pub seed: u64,
    pub labeler: GroundTruthLabeler,
    pub noise_sigma: f64,
    /// Relative weights of static, monotonic-up, monotonic-down, periodic
    /// and random runs within a mixed app.
    pub mixed_weights: [u32; 5],
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_apps: 11,
            runs_per_app: 64,
            static_only_fraction: 6.0 / 11.0,
            t_min: 16,
            t_max: 64,
            seed: 0,
            labeler: GroundTruthLabeler {
                alpha: 1.5,
                beta: 1.0,
                gamma: 2.0,
            },
            noise_sigma: 0.05,
            mixed_weights: [2, 1, 1, 1, 1],
        }
    }
}

impl GenConfig {
    pub fn n_static_only(&self) -> usize {
        (self.static_only_fraction * self.n_apps as f64).round() as usize
    }

    /// Exact scenario counts for one app of the given class.
    pub fn scenario_counts(&self, class: AppClass) -> [usize; 5] {
        let n = self.runs_per_app;
        if class == AppClass::StaticOnly {
            return [n, 0, 0, 0, 0];
        }
        let total: u32 = self.mixed_weights.iter().sum();
        let mut counts = [0usize; 5];
        let mut rem: Vec<(f64, usize)> = Vec::new();
        for (i, &w) in self.mixed_weights.iter().enumerate() {
            let exact = n as f64 * w as f64 / total as f64;
            counts[i] = exact.floor() as usize;
            rem.push((exact - exact.floor(), i));
        }
        rem.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut left = n - counts.iter().sum::<usize>();
        for (_, i) in rem {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        if n > 0 && counts[1..].iter().all(|&c| c == 0) {
            let first_dynamic = 1 + self.mixed_weights[1..].iter().position(|&w| w > 0).unwrap_or(3);
            counts[0] -= 1;
            counts[first_dynamic] += 1;
        }
        counts
    }

    fn validate(&self) -> Result<()> {
        if self.t_min == 0 || self.t_min > self.t_max {
            return Err(Error::Config(format!("invalid T range {}..={}", self.t_min, self.t_max)));
        }
        if !(0.0..=1.0).contains(&self.static_only_fraction) {
            return Err(Error::Config("static_only_fraction must be in [0, 1]".into()));
        }
        if self.mixed_weights.iter().sum::<u32>() == 0 || self.mixed_weights[1..].iter().all(|&w| w == 0) {
            return Err(Error::Config("mixed apps need at least one dynamic scenario weight".into()));
        }
        Ok(())
    }
}

/// App ids with their class and scoring metric. The first eleven follow
/// the benchmark catalogue, and the apps that were only ever run static
/// there are the first to be made static-only.
pub fn app_catalogue(cfg: &GenConfig) -> Vec<(String, AppClass, PerfMetricKind)> {
    let cat = PerfMetricKind::catalogue();
    let mut apps: Vec<(String, PerfMetricKind, bool)> = (0..cfg.n_apps)
        .map(|i| {
            if i < cat.len() {
                (cat[i].0.to_string(), cat[i].1.clone(), cat[i].2)
            } else {
                let kind = cat[i % cat.len()].1.clone();
                (format!("app_{i:02}"), kind, true)
            }
        })
        .collect();
    let mut order: Vec<usize> = (0..apps.len()).collect();
    order.sort_by_key(|&i| (apps[i].2, i));
    let n_static = cfg.n_static_only().min(apps.len());
    let mut classes = vec![AppClass::Mixed; apps.len()];
    for &i in &order[..n_static] {
        classes[i] = AppClass::StaticOnly;
    }
    apps.drain(..)
        .zip(classes)
        .map(|((id, kind, _), class)| (id, class, kind))
        .collect()
}

/// Generates a full labelled dataset. Runs are generated in parallel, each
/// from its own derived seed, so the output does not depend on scheduling.
pub fn gen_dataset(cfg: &GenConfig, schema: &MetricSchema, par: Parallelism) -> Result<TraceDataset> {
    cfg.validate()?;
    let root = SeedStream::root(cfg.seed).named("synth");
    let apps = app_catalogue(cfg);
    let profiles: Vec<AppProfile> = apps
        .iter()
        .enumerate()
        .map(|(i, (id, _, kind))| AppProfile::random(id, kind.clone(), schema, root.named("app").at(i as u64)))
        .collect();
    let plans: Vec<(usize, usize, Scenario)> = apps
        .iter()
        .enumerate()
        .flat_map(|(a, (_, class, _))| {
            let counts = cfg.scenario_counts(*class);
            let mut scen: Vec<Scenario> = Scenario::ALL
                .iter()
                .zip(counts)
                .flat_map(|(&s, c)| std::iter::repeat_n(s, c))
                .collect();
            // interleave scenarios across run ids deterministically
            let mut rng = root.named("order").at(a as u64).rng();
            for i in (1..scen.len()).rev() {
                scen.swap(i, rng.random_range(0..=i));
            }
            scen.into_iter().enumerate().map(move |(r, s)| (a, r, s))
        })
        .collect();

    let runs = map_range(par, plans.len(), |i| {
        let (a, r, scenario) = plans[i];
        let stream = root.named("run").at(a as u64).at(r as u64);
        let mut rng = stream.named("plan").rng();
        let t = rng.random_range(cfg.t_min..=cfg.t_max);
        let base = rng.random_range(0.0..0.7);
        let amplitude = rng.random_range(0.1..=(1.0 - base));
        let profile = WorkloadProfile {
            kind: scenario,
            base_level: base,
            amplitude,
            period_s: periodic_period(t, rng.random_range(0..3)),
            seed: stream.named("workload").seed(),
        };
        let interference = InterferenceConfig {
            n_neighbors: rng.random_range(0..=MAX_NEIGHBORS),
            labeler: cfg.labeler,
            noise_sigma: cfg.noise_sigma,
        };
        let load = gen_workload(&profile, t)?;
        let mut run = gen_trace(&profiles[a], scenario, &load, &interference, schema, stream)?;
        run.run_id = format!("run_{r:04}");
        Ok(run)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    // Same order as a dataset read back from disk.
    let mut runs = runs;
    runs.sort_by(|a, b| (&a.app_id, &a.run_id).cmp(&(&b.app_id, &b.run_id)));

    let app_classes: BTreeMap<String, AppClass> = if cfg.runs_per_app == 0 {
        log::warn!("runs_per_app = 0: generated dataset is empty");
        BTreeMap::new()
    } else {
        apps.iter().map(|(id, c, _)| (id.clone(), *c)).collect()
    };
    Ok(TraceDataset {
        schema: schema.clone(),
        runs,
        apps: app_classes,
    })
}
