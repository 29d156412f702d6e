//! Error/efficiency measurement: parameter sweeps against a cached
//! brute-force oracle, convergence slopes and Russian roulette ablations.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::{EvalStats, FieldEvaluator, FieldResult};
use crate::kernels::KernelSpec;
use crate::octree::Octree;
use crate::types::{EstimatorConfig, Method, QuerySet, RrMode, SourceSet};

/// Number of leading queries evaluated and discarded before timing.
const WARMUP_QUERIES: usize = 32;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ErrorStats {
    pub mean_abs: f64,
    pub median_abs: f64,
    pub max_abs: f64,
    pub rmse: f64,
    /// Entries that entered the statistics.
    pub count: usize,
    /// Entries excluded because either side was flagged or non-finite.
    pub flagged: usize,
}

/// Absolute-error statistics of `estimates` against `reference`. Entries
/// marked in `flagged` (or non-finite on either side) are excluded and
/// counted. The median is the lower median.
pub fn error_stats(
    estimates: &[f64],
    reference: &[f64],
    flagged: Option<&[bool]>,
) -> Result<ErrorStats> {
    if estimates.len() != reference.len() {
        return Err(Error::LengthMismatch {
            left: estimates.len(),
            right: reference.len(),
        });
    }
    if estimates.is_empty() {
        return Err(Error::InvalidInput("no estimates".into()));
    }
    let mut diffs = Vec::with_capacity(estimates.len());
    let mut excluded = 0;
    for (i, (e, r)) in estimates.iter().zip(reference).enumerate() {
        let skip = flagged.is_some_and(|f| f[i]) || !e.is_finite() || !r.is_finite();
        if skip {
            excluded += 1;
        } else {
            diffs.push((e - r).abs());
        }
    }
    if diffs.is_empty() {
        return Ok(ErrorStats {
            flagged: excluded,
            ..ErrorStats::default()
        });
    }
    let n = diffs.len() as f64;
    let mean_abs = diffs.iter().sum::<f64>() / n;
    let rmse = (diffs.iter().map(|d| d * d).sum::<f64>() / n).sqrt();
    let max_abs = diffs.iter().cloned().fold(0.0, f64::max);
    diffs.sort_by(f64::total_cmp);
    let median_abs = diffs[(diffs.len() - 1) / 2];
    Ok(ErrorStats {
        mean_abs,
        median_abs,
        max_abs,
        rmse,
        count: diffs.len(),
        flagged: excluded,
    })
}

/// SHA-256 over `blob <len>\0<content>` of a canonical byte encoding of the
/// inputs, hex encoded.
pub fn content_hash(sources: &SourceSet, kernel: &KernelSpec, queries: &QuerySet) -> String {
    let mut bytes = Vec::with_capacity(8 * (sources.len() * 8 + queries.len() * 3) + 64);
    bytes.extend_from_slice(&(sources.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&(sources.channel_count() as u64).to_le_bytes());
    for p in sources.positions() {
        for v in p {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in sources.masses().iter().chain(sources.weights()) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.extend_from_slice(kernel.kind.name().as_bytes());
    bytes.extend_from_slice(&kernel.alpha.to_le_bytes());
    bytes.extend_from_slice(&kernel.distance_floor.to_le_bytes());
    bytes.extend_from_slice(&(queries.len() as u64).to_le_bytes());
    for p in queries.points() {
        for v in p {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(&bytes);
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Brute-force reference fields keyed by input content hash.
#[derive(Default)]
pub struct OracleCache {
    fields: HashMap<String, Arc<FieldResult>>,
    pub hits: usize,
    pub misses: usize,
    /// Worker cap used when computing oracle fields.
    pub threads: usize,
}

impl OracleCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(
        &mut self,
        sources: &SourceSet,
        kernel: &KernelSpec,
        queries: &QuerySet,
    ) -> Result<Arc<FieldResult>> {
        let key = content_hash(sources, kernel, queries);
        if let Some(f) = self.fields.get(&key) {
            self.hits += 1;
            return Ok(Arc::clone(f));
        }
        self.misses += 1;
        let mut cfg = EstimatorConfig::brute_force();
        cfg.threads = self.threads;
        let field = Arc::new(FieldEvaluator::new(cfg, sources, *kernel)?.evaluate(queries));
        self.fields.insert(key, Arc::clone(&field));
        Ok(field)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRecord {
    pub method: String,
    /// `beta` for Barnes-Hut, samples per subdomain for the stochastic
    /// estimator, 0 otherwise.
    pub parameter: f64,
    pub wall_time_s: f64,
    pub build_time_s: f64,
    pub stats: ErrorStats,
    pub visited_nodes_mean: f64,
    pub mean_path_length: f64,
    pub mean_full_path_length: f64,
}

impl SweepRecord {
    fn from_run(
        method: String,
        parameter: f64,
        wall_time_s: f64,
        build_time_s: f64,
        stats: ErrorStats,
        eval: &EvalStats,
    ) -> Self {
        SweepRecord {
            method,
            parameter,
            wall_time_s,
            build_time_s,
            stats,
            visited_nodes_mean: eval.visited_nodes_mean(),
            mean_path_length: eval.mean_path_length(),
            mean_full_path_length: eval.mean_full_path_length(),
        }
    }
}

/// Applies a sweep parameter to a base configuration.
pub fn with_parameter(base: &EstimatorConfig, parameter: f64) -> EstimatorConfig {
    let mut cfg = base.clone();
    match cfg.method {
        Method::BarnesHut => cfg.beta = parameter,
        Method::Stochastic => cfg.samples_per_subdomain = parameter.round().max(1.0) as usize,
        _ => {}
    }
    cfg
}

fn timed_eval(evaluator: &FieldEvaluator<'_>, queries: &QuerySet) -> Result<(FieldResult, f64)> {
    let warm = queries.len().min(WARMUP_QUERIES);
    if warm > 0 {
        let _ = evaluator.evaluate(&QuerySet::new(queries.points()[..warm].to_vec())?);
    }
    let start = Instant::now();
    let field = evaluator.evaluate(queries);
    Ok((field, start.elapsed().as_secs_f64().max(1e-9)))
}

/// Builds the tree once, then evaluates `queries` once per parameter value
/// and compares against the cached oracle. Tree construction time is
/// reported separately from evaluation time.
pub fn run_sweep(
    base: &EstimatorConfig,
    sources: &SourceSet,
    kernel: &KernelSpec,
    queries: &QuerySet,
    parameters: &[f64],
    cache: &mut OracleCache,
) -> Result<Vec<SweepRecord>> {
    let oracle = cache.get(sources, kernel, queries)?;
    let start = Instant::now();
    let tree = match base.method {
        Method::BruteForce => None,
        _ => Some(Octree::build(sources, base.branching_per_dim, base.max_depth)?),
    };
    let build_time = start.elapsed().as_secs_f64();

    let mut out = Vec::with_capacity(parameters.len());
    for &param in parameters {
        let cfg = with_parameter(base, param);
        let evaluator = match &tree {
            Some(t) => FieldEvaluator::with_tree(cfg, sources, *kernel, t)?,
            None => FieldEvaluator::new(cfg, sources, *kernel)?,
        };
        let (field, wall) = timed_eval(&evaluator, queries)?;
        let stats = error_stats(&field.values, &oracle.values, Some(&combined_flags(&field, &oracle)))?;
        out.push(SweepRecord::from_run(
            base.method.name().to_string(),
            param,
            wall,
            build_time,
            stats,
            &field.stats,
        ));
    }
    Ok(out)
}

fn combined_flags(a: &FieldResult, b: &FieldResult) -> Vec<bool> {
    a.flagged.iter().zip(&b.flagged).map(|(x, y)| *x || *y).collect()
}

/// Least-squares slope of `ln(rmse)` against `ln(samples)`.
pub fn convergence_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 4 {
        return Err(Error::InvalidInput(
            "convergence slope needs at least 4 points".into(),
        ));
    }
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    if xs.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidInput("sample counts must be distinct".into()));
    }
    if points.iter().any(|&(s, e)| !(s > 0.0) || !(e > 0.0)) {
        return Err(Error::InvalidInput(
            "sample counts and errors must be positive".into(),
        ));
    }
    let n = points.len() as f64;
    let lx: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Slope over the `rmse` of stochastic sweep records.
pub fn sweep_slope(records: &[SweepRecord]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = records.iter().map(|r| (r.parameter, r.stats.rmse)).collect();
    convergence_slope(&pts)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRecord {
    pub rr_mode: RrMode,
    pub record: SweepRecord,
}

/// Runs the stochastic estimator under each roulette mode on the same tree,
/// queries and seed.
pub fn rr_ablation(
    base: &EstimatorConfig,
    sources: &SourceSet,
    kernel: &KernelSpec,
    queries: &QuerySet,
    cache: &mut OracleCache,
) -> Result<Vec<AblationRecord>> {
    let mut base = base.clone();
    base.method = Method::Stochastic;
    let oracle = cache.get(sources, kernel, queries)?;
    let start = Instant::now();
    let tree = Octree::build(sources, base.branching_per_dim, base.max_depth)?;
    let build_time = start.elapsed().as_secs_f64();
    let mut out = Vec::with_capacity(3);
    for mode in RrMode::ALL {
        let cfg = EstimatorConfig {
            rr_mode: mode,
            ..base.clone()
        };
        let evaluator = FieldEvaluator::with_tree(cfg, sources, *kernel, &tree)?;
        let (field, wall) = timed_eval(&evaluator, queries)?;
        let stats = error_stats(&field.values, &oracle.values, Some(&combined_flags(&field, &oracle)))?;
        out.push(AblationRecord {
            rr_mode: mode,
            record: SweepRecord::from_run(
                format!("stochastic:{}", mode.name()),
                base.samples_per_subdomain as f64,
                wall,
                build_time,
                stats,
                &field.stats,
            ),
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classification {
    pub labels: Vec<bool>,
    pub accuracy: f64,
}

/// Labels `estimate > threshold` as inside and scores against the oracle's
/// labels under the same rule.
pub fn classify_inside_outside(estimates: &[f64], oracle: &[f64], threshold: f64) -> Result<Classification> {
    if estimates.len() != oracle.len() {
        return Err(Error::LengthMismatch {
            left: estimates.len(),
            right: oracle.len(),
        });
    }
    let labels: Vec<bool> = estimates.iter().map(|&e| e > threshold).collect();
    let agree = labels
        .iter()
        .zip(oracle)
        .filter(|(l, &o)| **l == (o > threshold))
        .count();
    Ok(Classification {
        accuracy: agree as f64 / estimates.len().max(1) as f64,
        labels,
    })
}

pub const CSV_HEADER: &str =
    "method,parameter,wall_time_s,mean_abs,median_abs,max_abs,rmse,visited_nodes_mean,flagged_count";

/// One CSV row per record. With `timings = false` the wall time column is
/// written as 0 so repeated runs are byte-identical.
pub fn records_csv(records: &[SweepRecord], timings: bool) -> String {
    let mut s = String::new();
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.method,
            r.parameter,
            if timings { r.wall_time_s } else { 0.0 },
            r.stats.mean_abs,
            r.stats.median_abs,
            r.stats.max_abs,
            r.stats.rmse,
            r.visited_nodes_mean,
            r.stats.flagged
        );
    }
    s
}

#[derive(Serialize)]
pub struct RunSummary<'a> {
    pub command: &'a str,
    pub config: &'a EstimatorConfig,
    pub kernel: &'a KernelSpec,
    pub source_count: usize,
    pub query_count: usize,
    pub input_hash: String,
    pub records: &'a [SweepRecord],
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_fields_have_zero_error() {
        let s = error_stats(&[1.0, 2.0], &[1.0, 2.0], None).unwrap();
        assert_eq!((s.mean_abs, s.median_abs, s.max_abs, s.rmse), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn stats_example() {
        let s = error_stats(&[1.0, 2.0, 30.0], &[0.0; 3], None).unwrap();
        assert_eq!(s.mean_abs, 11.0);
        assert_eq!(s.median_abs, 2.0);
        assert_eq!(s.max_abs, 30.0);
        assert_eq!(s.count, 3);
    }

    #[test]
    fn stats_lower_median_and_flags() {
        let s = error_stats(&[4.0, 1.0, 3.0, 2.0, 99.0], &[0.0; 5], Some(&[false, false, false, false, true]))
            .unwrap();
        assert_eq!(s.median_abs, 2.0);
        assert_eq!(s.count, 4);
        assert_eq!(s.flagged, 1);
        assert!(error_stats(&[1.0], &[1.0, 2.0], None).is_err());
    }

    #[test]
    fn stats_match_naive() {
        let mut rng = crate::rng::CounterRng::new(2);
        let a: Vec<f64> = (0..101).map(|_| rng.next_f64()).collect();
        let b: Vec<f64> = (0..101).map(|_| rng.next_f64()).collect();
        let s = error_stats(&a, &b, None).unwrap();
        let mut d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).collect();
        let mean = d.iter().sum::<f64>() / 101.0;
        d.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(s.mean_abs, mean);
        assert_eq!(s.median_abs, d[50]);
        assert_eq!(s.max_abs, d[100]);
    }

    #[test]
    fn slope_of_synthetic_curves() {
        let inv_sqrt: Vec<(f64, f64)> = [1.0, 4.0, 16.0, 64.0, 256.0]
            .iter()
            .map(|&s: &f64| (s, 3.0 / s.sqrt()))
            .collect();
        assert!((convergence_slope(&inv_sqrt).unwrap() + 0.5).abs() < 1e-12);
        let flat: Vec<(f64, f64)> = [1.0, 2.0, 3.0, 4.0].iter().map(|&s| (s, 0.7)).collect();
        assert!(convergence_slope(&flat).unwrap().abs() < 1e-12);
        assert!(convergence_slope(&inv_sqrt[..3]).is_err());
        assert!(convergence_slope(&[(1.0, 1.0), (1.0, 2.0), (2.0, 1.0), (3.0, 1.0)]).is_err());
    }

    #[test]
    fn classification_rules() {
        let oracle = [1.0, 0.0, 0.9, 0.1];
        assert_eq!(classify_inside_outside(&oracle, &oracle, 0.5).unwrap().accuracy, 1.0);
        let inside = [1.0; 4];
        assert_eq!(classify_inside_outside(&[0.0; 4], &inside, 0.5).unwrap().accuracy, 0.0);
    }

    #[test]
    fn csv_header_and_rows() {
        let r = SweepRecord {
            method: "barnes_hut".into(),
            parameter: 2.0,
            wall_time_s: 0.5,
            build_time_s: 0.1,
            stats: ErrorStats::default(),
            visited_nodes_mean: 10.0,
            mean_path_length: 0.0,
            mean_full_path_length: 0.0,
        };
        let csv = records_csv(&[r.clone(), r], false);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], "barnes_hut,2,0,0,0,0,0,10,0");
    }
}
