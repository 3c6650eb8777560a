//! Convergence of averaged least squares estimators on the cubic Gaussian model.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{LabelOracle, PointDistribution, RngState, SimRng};
use crate::error::{Error, Result};
use crate::estimator::{
    augmented_least_squares, draw_labeled_iid, estimation_error, least_squares, optimum_weights,
};
use crate::linalg::Vector;
use crate::rescaled::gaussian_vs_sample;

pub const CSV_HEADER: &str = "method,k,T,run,error_sq";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Iid,
    IidPlusVolume,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Iid, Method::IidPlusVolume];

    pub fn name(self) -> &'static str {
        match self {
            Method::Iid => "iid",
            Method::IidPlusVolume => "iid_plus_volume",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn default_d() -> usize {
    5
}
fn default_k_values() -> Vec<usize> {
    vec![5, 10, 20]
}
fn default_t_max() -> usize {
    1024
}
fn default_runs() -> usize {
    50
}
fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn default_noise_sd() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_d")]
    pub d: usize,
    #[serde(default = "default_k_values")]
    pub k_values: Vec<usize>,
    #[serde(default = "default_t_max", rename = "T_max", alias = "t_max")]
    pub t_max: usize,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default)]
    pub output_path: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            d: default_d(),
            k_values: default_k_values(),
            t_max: default_t_max(),
            runs: default_runs(),
            seed: 0,
            methods: default_methods(),
            noise_sd: default_noise_sd(),
            output_path: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(m));
        if self.d == 0 {
            return bad("d must be positive".into());
        }
        if self.t_max == 0 {
            return bad("T_max must be at least 1".into());
        }
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.k_values.is_empty() || self.methods.is_empty() {
            return bad("k_values and methods must be non-empty".into());
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return bad(format!(
                "noise_sd must be finite and non-negative, got {}",
                self.noise_sd
            ));
        }
        for &k in &self.k_values {
            if k == 0 {
                return bad("k must be positive".into());
            }
            if k < self.d && self.methods.contains(&Method::IidPlusVolume) {
                return bad(format!(
                    "iid_plus_volume needs k >= d, got k={k} < d={}",
                    self.d
                ));
            }
        }
        Ok(())
    }

    /// Powers of two up to `T_max`, plus `T_max` itself.
    pub fn t_grid(&self) -> Vec<usize> {
        let mut grid: Vec<usize> = std::iter::successors(Some(1usize), |t| t.checked_mul(2))
            .take_while(|&t| t <= self.t_max)
            .collect();
        if grid.last() != Some(&self.t_max) {
            grid.push(self.t_max);
        }
        grid
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub k: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub run: usize,
    pub error_sq: f64,
}

impl ResultRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.method, self.k, self.t, self.run, self.error_sq
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutcome {
    /// Sorted by method, k, T, run.
    pub rows: Vec<ResultRow>,
    pub w_star: Vector,
    /// Labels queried per method over all runs and k values.
    pub label_queries: BTreeMap<Method, u64>,
}

struct TaskOutput {
    rows: Vec<ResultRow>,
    queries: u64,
}

/// Even stream id for points; the odd neighbour drives the labels.
pub(crate) fn task_stream(run: usize, method: Method, k: usize) -> u64 {
    (((run as u64) << 32) | ((method as u64) << 24) | k as u64) << 1
}

fn run_task(
    cfg: &ExperimentConfig,
    dist: &PointDistribution,
    w_star: &Vector,
    grid: &[usize],
    run: usize,
    method: Method,
    k: usize,
) -> Result<TaskOutput> {
    let stream = task_stream(run, method, k);
    let base = RngState::new(cfg.seed, 0);
    let mut point_rng = base.with_stream(stream).rng();
    let mut label_rng = base.with_stream(stream | 1).rng();
    let mut oracle = LabelOracle::cubic(cfg.noise_sd);
    let d = cfg.d;
    let mut vs = |rng: &mut SimRng| gaussian_vs_sample(dist, d, rng);

    let mut sum = Vector::zeros(d);
    let mut rows = Vec::with_capacity(grid.len());
    let mut next = grid.iter().peekable();
    for t in 1..=cfg.t_max {
        let w = match method {
            Method::Iid => {
                let s = draw_labeled_iid(dist, &mut oracle, k, &mut point_rng, &mut label_rng)?;
                least_squares(&s)?
            }
            Method::IidPlusVolume => {
                let s = draw_labeled_iid(dist, &mut oracle, k - d, &mut point_rng, &mut label_rng)?;
                augmented_least_squares(
                    &s,
                    dist,
                    &mut oracle,
                    &mut vs,
                    &mut point_rng,
                    &mut label_rng,
                )?
                .w
            }
        };
        sum += w;
        if next.peek() == Some(&&t) {
            next.next();
            let error_sq = estimation_error(&(&sum / t as f64), w_star)?;
            rows.push(ResultRow {
                method,
                k,
                t,
                run,
                error_sq,
            });
        }
    }
    Ok(TaskOutput {
        rows,
        queries: oracle.query_count(),
    })
}

/// Run every (run, method, k) replica on the current rayon pool.
pub fn run_convergence_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let dist = PointDistribution::standard_gaussian(cfg.d);
    let w_star = optimum_weights(&dist, &LabelOracle::cubic(cfg.noise_sd))?;
    let grid = cfg.t_grid();
    let mut methods = cfg.methods.clone();
    methods.sort();
    methods.dedup();
    let mut ks = cfg.k_values.clone();
    ks.sort();
    ks.dedup();

    let mut tasks = Vec::with_capacity(cfg.runs * methods.len() * ks.len());
    for r in 0..cfg.runs {
        for &m in &methods {
            tasks.extend(ks.iter().map(|&k| (r, m, k)));
        }
    }
    let outputs: Vec<(Method, TaskOutput)> = tasks
        .par_iter()
        .map(|&(r, m, k)| run_task(cfg, &dist, &w_star, &grid, r, m, k).map(|o| (m, o)))
        .collect::<Result<_>>()?;

    let mut label_queries = BTreeMap::new();
    let mut rows = Vec::with_capacity(outputs.len() * grid.len());
    for (m, out) in outputs {
        *label_queries.entry(m).or_insert(0) += out.queries;
        rows.extend(out.rows);
    }
    rows.sort_by_key(|r| (r.method, r.k, r.t, r.run));
    Ok(ExperimentOutcome {
        rows,
        w_star,
        label_queries,
    })
}

/// Same as [`run_convergence_experiment`] on a dedicated pool of `threads` workers.
pub fn run_convergence_experiment_with_threads(
    cfg: &ExperimentConfig,
    threads: usize,
) -> Result<ExperimentOutcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::ConfigInvalid(format!("thread pool: {e}")))?;
    pool.install(|| run_convergence_experiment(cfg))
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Median error over runs at each T, for one method and k.
pub fn median_curve(rows: &[ResultRow], method: Method, k: usize) -> Vec<(usize, f64)> {
    let mut by_t: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.method == method && r.k == k) {
        by_t.entry(r.t).or_default().push(r.error_sq);
    }
    by_t.into_iter()
        .filter_map(|(t, mut v)| median(&mut v).map(|m| (t, m)))
        .collect()
}

/// Least squares slope of `ln(median error)` against `ln T`.
pub fn fit_loglog_slope(rows: &[ResultRow], method: Method, k: usize) -> Result<f64> {
    let curve = median_curve(rows, method, k);
    if curve.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} distinct T values for {method} k={k}, need 4",
            curve.len()
        )));
    }
    if let Some(&(t, _)) = curve.iter().find(|(_, m)| !(*m > 0.0)) {
        return Err(Error::InsufficientData(format!(
            "non-positive median error at T={t}"
        )));
    }
    let pts: Vec<(f64, f64)> = curve
        .iter()
        .map(|&(t, m)| ((t as f64).ln(), m.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

pub fn write_results_csv<W: Write>(rows: &[ResultRow], mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.to_csv())?;
    }
    Ok(())
}

/// Whitespace separated medians, one block per (method, k), for gnuplot's `index`.
pub fn write_median_dat<W: Write>(rows: &[ResultRow], mut out: W) -> Result<()> {
    let mut keys: Vec<(Method, usize)> = rows.iter().map(|r| (r.method, r.k)).collect();
    keys.sort();
    keys.dedup();
    for (i, &(m, k)) in keys.iter().enumerate() {
        if i > 0 {
            writeln!(out, "\n")?;
        }
        writeln!(out, "# method={m} k={k}")?;
        writeln!(out, "# T median_error_sq")?;
        for (t, med) in median_curve(rows, m, k) {
            writeln!(out, "{t} {med}")?;
        }
    }
    Ok(())
}

/// Write `results.csv` and `medians.dat` into `dir`.
pub fn write_outputs(outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let csv = std::fs::File::create(dir.join("results.csv"))?;
    write_results_csv(&outcome.rows, std::io::BufWriter::new(csv))?;
    let dat = std::fs::File::create(dir.join("medians.dat"))?;
    write_median_dat(&outcome.rows, std::io::BufWriter::new(dat))?;
    Ok(())
}
