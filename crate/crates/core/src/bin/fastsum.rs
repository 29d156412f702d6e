//! Command-line front end: field evaluation, benchmark sweeps, roulette
//! ablation, tree validation and mesh sampling.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use fastsum::bench::{self, OracleCache, RunSummary, SweepRecord};
use fastsum::estimators::{barnes_hut, brute_force, telescoping_exhaustive};
use fastsum::io::{self, GridSpec, OutputOptions};
use fastsum::octree::validate_tree;
use fastsum::{
    normalize_to_unit_cube, EstimatorConfig, EvalStats, FieldEvaluator, KernelKind, KernelSpec,
    Method, Octree, Precision, QuerySet, RrMode, SourceSet,
};

#[derive(Parser)]
#[command(name = "fastsum", version, about = "Fast stochastic and Barnes-Hut kernel sums")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a field over a query set and write CSV (plus PFM/PGM for slices).
    Eval(EvalArgs),
    /// Sweep beta or samples-per-subdomain against the brute-force oracle.
    Sweep(SweepArgs),
    /// Compare the three Russian roulette modes on one scene.
    AblateRr(AblateArgs),
    /// Check tree invariants and estimator identities on a scene.
    Validate(ValidateArgs),
    /// Sample a mesh surface and write a points file.
    SampleMesh(SampleMeshArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Points file ("x y z m" or "x y z mx my mz" per line).
    #[arg(long, conflicts_with = "mesh")]
    points: Option<PathBuf>,
    /// Mesh to sample: an OBJ path or builtin:{icosphere,torus,blob}.
    #[arg(long)]
    mesh: Option<String>,
    /// Number of surface samples drawn from --mesh.
    #[arg(long, default_value_t = 1 << 15)]
    mesh_samples: usize,
    #[arg(long, default_value_t = 1)]
    mesh_seed: u64,
    /// Rescale points isotropically into [-1, 1]^3 (meshes always are).
    #[arg(long)]
    normalize: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum KernelArg {
    Coulomb,
    #[value(alias = "winding")]
    WindingDipole,
    #[value(alias = "smooth")]
    SmoothExp,
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long, value_enum, default_value = "coulomb")]
    kernel: KernelArg,
    /// Falloff of the smooth_exp kernel.
    #[arg(long, default_value_t = 200.0)]
    alpha: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    #[value(alias = "brute-force")]
    Brute,
    #[value(alias = "bh")]
    BarnesHut,
    Stochastic,
    #[value(alias = "telescoping-exhaustive")]
    Telescoping,
}

#[derive(Clone, Copy, ValueEnum)]
enum RrArg {
    PaperRatio,
    FixedHalf,
    Disabled,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Args)]
struct MethodArgs {
    #[arg(long, value_enum, default_value = "stochastic")]
    method: MethodArg,
    #[arg(long, default_value_t = 2.0)]
    beta: f64,
    #[arg(long, default_value_t = 1)]
    samples_per_subdomain: usize,
    #[arg(long, value_enum, default_value = "paper-ratio")]
    rr_mode: RrArg,
    /// Per-dimension branching factor (default 4 stochastic, 2 otherwise).
    #[arg(long)]
    branching: Option<usize>,
    #[arg(long, default_value_t = 32)]
    max_depth: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "f64")]
    precision: PrecisionArg,
    /// Worker cap (0 = automatic). Falls back to FASTSUM_THREADS.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct QueryArgs {
    /// N x N x N lattice over [-1, 1]^3.
    #[arg(long, conflicts_with_all = ["slice", "random_queries"])]
    grid: Option<usize>,
    /// Axis-aligned slice, e.g. "z=0" or "x=0.25".
    #[arg(long, conflicts_with = "random_queries")]
    slice: Option<String>,
    /// Slice resolution, "W" or "WxH".
    #[arg(long, default_value = "256")]
    slice_res: String,
    /// Half-width of the slice in scene units.
    #[arg(long, default_value_t = 1.0)]
    extent: f64,
    /// Uniform random queries in [-1, 1]^3.
    #[arg(long)]
    random_queries: Option<usize>,
    #[arg(long, default_value_t = 0)]
    query_seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[command(flatten)]
    queries: QueryArgs,
    #[arg(long, default_value = "out")]
    out_prefix: PathBuf,
    /// Fixed gray-map range "MIN,MAX" for slice images.
    #[arg(long)]
    range: Option<String>,
    /// Write a text outline of the tree to this path.
    #[arg(long)]
    dump_tree: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[command(flatten)]
    queries: QueryArgs,
    /// Samples per subdomain: "A..B" (inclusive) or a comma list.
    #[arg(long)]
    samples: Option<String>,
    /// Barnes-Hut betas: "A..B" (inclusive, unit steps) or a comma list.
    #[arg(long)]
    betas: Option<String>,
    #[arg(long, default_value = "sweep")]
    out_prefix: PathBuf,
    /// Write 0 for wall times so reruns are byte-identical.
    #[arg(long)]
    no_timings: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    #[command(flatten)]
    method: MethodArgs,
    #[command(flatten)]
    queries: QueryArgs,
    #[arg(long, default_value = "ablation")]
    out_prefix: PathBuf,
    #[arg(long)]
    no_timings: bool,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Branching factors to build and check.
    #[arg(long, value_delimiter = ',', default_value = "2,4")]
    branching: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    max_depth: usize,
    /// Random queries used for the estimator identities.
    #[arg(long, default_value_t = 32)]
    queries: usize,
}

#[derive(Args)]
struct SampleMeshArgs {
    #[arg(long)]
    mesh: String,
    #[arg(long, default_value_t = 1 << 15)]
    count: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, value_enum, default_value = "coulomb")]
    kernel: KernelArg,
    /// Per-point mass for scalar kernels (default 1/count).
    #[arg(long)]
    mass: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

/// Failures split by exit code: bad invocations versus bad data.
enum Failure {
    Usage(String),
    Data(String),
}

impl From<fastsum::Error> for Failure {
    fn from(e: fastsum::Error) -> Self {
        match e {
            fastsum::Error::InvalidConfig(_) => Failure::Usage(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let outcome = match cli.command {
        Command::Eval(a) => run_eval(a),
        Command::Sweep(a) => run_sweep(a),
        Command::AblateRr(a) => run_ablate(a),
        Command::Validate(a) => run_validate(a),
        Command::SampleMesh(a) => run_sample_mesh(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn kernel_spec(k: &KernelArgs) -> CliResult<KernelSpec> {
    if !(k.alpha > 0.0) || !k.alpha.is_finite() {
        return Err(Failure::Usage("--alpha must be positive".into()));
    }
    Ok(match k.kernel {
        KernelArg::Coulomb => KernelSpec::coulomb(),
        KernelArg::WindingDipole => KernelSpec::winding(),
        KernelArg::SmoothExp => KernelSpec::smooth_exp(k.alpha),
    })
}

fn kernel_kind(k: KernelArg) -> KernelKind {
    match k {
        KernelArg::Coulomb => KernelKind::Coulomb,
        KernelArg::WindingDipole => KernelKind::WindingDipole,
        KernelArg::SmoothExp => KernelKind::SmoothExp,
    }
}

fn load_sources(input: &InputArgs, kind: KernelKind) -> CliResult<SourceSet> {
    let sources = match (&input.points, &input.mesh) {
        (Some(path), None) => {
            let s = io::parse_points_file(path).map_err(|e| match e {
                fastsum::Error::Io(io) => Failure::Data(format!("{}: {io}", path.display())),
                other => other.into(),
            })?;
            if input.normalize {
                let n = normalize_to_unit_cube(s.positions())?;
                SourceSet::new(n.points, s.masses().to_vec(), s.channel_count(), Some(s.weights().to_vec()))?
            } else {
                s
            }
        }
        (None, Some(spec)) => {
            let mesh = io::load_mesh(spec)?.normalized()?;
            io::sample_mesh_surface(&mesh, input.mesh_samples, input.mesh_seed, kind, None)?
        }
        _ => return Err(Failure::Usage("exactly one of --points or --mesh is required".into())),
    };
    Ok(sources)
}

fn threads(requested: Option<usize>) -> CliResult<usize> {
    if let Some(t) = requested {
        return Ok(t);
    }
    match std::env::var("FASTSUM_THREADS") {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("FASTSUM_THREADS is not a count: {v:?}"))),
        _ => Ok(0),
    }
}

fn estimator_config(m: &MethodArgs) -> CliResult<EstimatorConfig> {
    let method = match m.method {
        MethodArg::Brute => Method::BruteForce,
        MethodArg::BarnesHut => Method::BarnesHut,
        MethodArg::Stochastic => Method::Stochastic,
        MethodArg::Telescoping => Method::TelescopingExhaustive,
    };
    let cfg = EstimatorConfig {
        method,
        beta: m.beta,
        samples_per_subdomain: m.samples_per_subdomain,
        rr_mode: match m.rr_mode {
            RrArg::PaperRatio => RrMode::PaperRatio,
            RrArg::FixedHalf => RrMode::FixedHalf,
            RrArg::Disabled => RrMode::Disabled,
        },
        seed: m.seed,
        branching_per_dim: m.branching.unwrap_or(method.default_branching()),
        max_depth: m.max_depth,
        precision: match m.precision {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        },
        threads: threads(m.threads)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_slice_res(s: &str) -> CliResult<(usize, usize)> {
    let bad = || Failure::Usage(format!("--slice-res expects W or WxH, got {s:?}"));
    let (w, h) = match s.split_once(['x', 'X']) {
        Some((w, h)) => (w.trim().parse().map_err(|_| bad())?, h.trim().parse().map_err(|_| bad())?),
        None => {
            let n = s.trim().parse().map_err(|_| bad())?;
            (n, n)
        }
    };
    Ok((w, h))
}

fn grid_spec(q: &QueryArgs) -> CliResult<GridSpec> {
    let spec = if let Some(n) = q.grid {
        GridSpec::grid3d(n)
    } else if let Some(slice) = &q.slice {
        let bad = || Failure::Usage(format!("--slice expects AXIS=OFFSET (e.g. z=0), got {slice:?}"));
        let (axis, offset) = slice.split_once('=').unwrap_or((slice.as_str(), "0"));
        let axis = match axis.trim() {
            "x" | "X" => 0,
            "y" | "Y" => 1,
            "z" | "Z" => 2,
            _ => return Err(bad()),
        };
        let offset: f64 = offset.trim().parse().map_err(|_| bad())?;
        let (w, h) = parse_slice_res(&q.slice_res)?;
        GridSpec::axis_slice(axis, offset, w, h, q.extent)
    } else if let Some(count) = q.random_queries {
        GridSpec::random(count, q.query_seed)
    } else {
        GridSpec::grid3d(32)
    };
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(spec)
}

fn parse_range(s: &str) -> CliResult<(f64, f64)> {
    let bad = || Failure::Usage(format!("--range expects MIN,MAX, got {s:?}"));
    let (a, b) = s.split_once(',').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

/// Parses "A..B" (inclusive, unit steps) or "a,b,c".
fn parse_values(s: &str, flag: &str) -> CliResult<Vec<f64>> {
    let bad = || Failure::Usage(format!("{flag} expects A..B or a comma list, got {s:?}"));
    let values: Vec<f64> = if let Some((a, b)) = s.split_once("..") {
        let a: f64 = a.trim().parse().map_err(|_| bad())?;
        let b: f64 = b.trim().parse().map_err(|_| bad())?;
        if !(a <= b) || b - a > 1e6 {
            return Err(bad());
        }
        (0..=((b - a).floor() as usize)).map(|k| a + k as f64).collect()
    } else {
        s.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<CliResult<_>>()?
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(bad());
    }
    Ok(values)
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut p = prefix.as_os_str().to_owned();
    p.push(".");
    p.push(ext);
    PathBuf::from(p)
}

fn run_eval(a: EvalArgs) -> CliResult {
    let kernel = kernel_spec(&a.kernel)?;
    let config = estimator_config(&a.method)?;
    let spec = grid_spec(&a.queries)?;
    let range = a.range.as_deref().map(parse_range).transpose()?;
    let sources = load_sources(&a.input, kernel.kind)?;
    let queries = io::make_queries(&spec)?;

    let evaluator = FieldEvaluator::new(config.clone(), &sources, kernel)?;
    if let Some(path) = &a.dump_tree {
        let outline = match evaluator.tree() {
            Some(tree) => tree.outline(),
            None => Octree::build(&sources, config.branching_per_dim, config.max_depth)?.outline(),
        };
        fs::write(path, outline)?;
    }
    let field = evaluator.evaluate(&queries);
    let opts = OutputOptions {
        range,
        csv: true,
        images: true,
    };
    for path in io::write_outputs(&field, &spec, &queries, &a.out_prefix, &opts)? {
        println!("wrote {}", path.display());
    }
    if field.flagged_count() > 0 {
        eprintln!("{} queries flagged", field.flagged_count());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn write_summary(
    command: &str,
    prefix: &Path,
    config: &EstimatorConfig,
    kernel: &KernelSpec,
    sources: &SourceSet,
    queries: &QuerySet,
    records: &[SweepRecord],
    timings: bool,
) -> CliResult {
    let csv_path = with_ext(prefix, "csv");
    fs::write(&csv_path, bench::records_csv(records, timings))?;
    let stripped: Vec<SweepRecord>;
    let records = if timings {
        records
    } else {
        stripped = records
            .iter()
            .map(|r| SweepRecord {
                wall_time_s: 0.0,
                build_time_s: 0.0,
                ..r.clone()
            })
            .collect();
        &stripped
    };
    let summary = RunSummary {
        command,
        config,
        kernel,
        source_count: sources.len(),
        query_count: queries.len(),
        input_hash: bench::content_hash(sources, kernel, queries),
        records,
    };
    let json_path = with_ext(prefix, "json");
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Failure::Data(e.to_string()))?;
    fs::write(&json_path, json)?;
    println!("wrote {}", csv_path.display());
    println!("wrote {}", json_path.display());
    Ok(())
}

fn run_sweep(a: SweepArgs) -> CliResult {
    let kernel = kernel_spec(&a.kernel)?;
    let config = estimator_config(&a.method)?;
    let params = match (config.method, &a.samples, &a.betas) {
        (Method::Stochastic, Some(s), _) => parse_values(s, "--samples")?,
        (Method::Stochastic, None, _) => vec![config.samples_per_subdomain as f64],
        (Method::BarnesHut, _, Some(b)) => parse_values(b, "--betas")?,
        (Method::BarnesHut, _, None) => vec![config.beta],
        _ => vec![0.0],
    };
    if config.method == Method::Stochastic && params.iter().any(|&s| s < 1.0 || s.fract() != 0.0) {
        return Err(Failure::Usage("--samples values must be positive integers".into()));
    }
    if config.method == Method::BarnesHut && params.iter().any(|&b| b <= 0.0) {
        return Err(Failure::Usage("--betas values must be positive".into()));
    }
    let spec = grid_spec(&a.queries)?;
    let sources = load_sources(&a.input, kernel.kind)?;
    let queries = io::make_queries(&spec)?;
    let mut cache = OracleCache::new();
    cache.threads = config.threads;
    let records = bench::run_sweep(&config, &sources, &kernel, &queries, &params, &mut cache)?;
    write_summary("sweep", &a.out_prefix, &config, &kernel, &sources, &queries, &records, !a.no_timings)
}

fn run_ablate(a: AblateArgs) -> CliResult {
    let kernel = kernel_spec(&a.kernel)?;
    let mut config = estimator_config(&a.method)?;
    if a.method.branching.is_none() {
        config.branching_per_dim = Method::Stochastic.default_branching();
    }
    config.method = Method::Stochastic;
    let spec = grid_spec(&a.queries)?;
    let sources = load_sources(&a.input, kernel.kind)?;
    let queries = io::make_queries(&spec)?;
    let mut cache = OracleCache::new();
    cache.threads = config.threads;
    let ablation = bench::rr_ablation(&config, &sources, &kernel, &queries, &mut cache)?;
    for r in &ablation {
        println!(
            "{:<12} mean_abs {:.3e} median_abs {:.3e} visited {:.1} path {:.2}/{:.2}",
            r.rr_mode.name(),
            r.record.stats.mean_abs,
            r.record.stats.median_abs,
            r.record.visited_nodes_mean,
            r.record.mean_path_length,
            r.record.mean_full_path_length
        );
    }
    let records: Vec<SweepRecord> = ablation.into_iter().map(|r| r.record).collect();
    write_summary("ablate-rr", &a.out_prefix, &config, &kernel, &sources, &queries, &records, !a.no_timings)
}

fn run_validate(a: ValidateArgs) -> CliResult {
    let kernel = kernel_spec(&a.kernel)?;
    let sources = load_sources(&a.input, kernel.kind)?;
    let queries = io::make_queries(&GridSpec::random(a.queries, 0))?;
    let mut failures = 0usize;
    for &d in &a.branching {
        if d < 2 {
            return Err(Failure::Usage("--branching values must be >= 2".into()));
        }
        let tree = Octree::build(&sources, d, a.max_depth)?;
        let report = validate_tree(&tree, &sources);
        println!(
            "d={d}: {} nodes, {} leaves, height {}, {} invariant violations",
            tree.len(),
            tree.leaf_count(),
            tree.height(),
            report.violations.len()
        );
        for v in report.violations.iter().take(20) {
            println!("  {v}");
        }
        failures += report.violations.len();

        let mut worst_tel = 0.0f64;
        let mut worst_bh = 0.0f64;
        let mut stats = EvalStats::default();
        for &q in queries.points() {
            let exact: f64 = brute_force(&sources, &kernel, q);
            let scale = 1.0 + exact.abs();
            let tel: f64 = telescoping_exhaustive(&tree, &sources, &kernel, q, &mut stats);
            let bh: f64 = barnes_hut(&tree, &sources, &kernel, q, f64::INFINITY, &mut stats);
            worst_tel = worst_tel.max((tel - exact).abs() / scale);
            worst_bh = worst_bh.max((bh - exact).abs() / scale);
        }
        let ok = worst_tel <= 1e-9 && worst_bh <= 1e-9;
        println!(
            "d={d}: telescoping rel err {worst_tel:.2e}, exhaustive Barnes-Hut rel err {worst_bh:.2e} [{}]",
            if ok { "ok" } else { "FAIL" }
        );
        failures += usize::from(!ok);
    }
    if failures > 0 {
        return Err(Failure::Data(format!("{failures} validation failures")));
    }
    println!("all checks passed");
    Ok(())
}

fn run_sample_mesh(a: SampleMeshArgs) -> CliResult {
    if let Some(m) = a.mass {
        if !m.is_finite() {
            return Err(Failure::Usage("--mass must be finite".into()));
        }
    }
    let mesh = io::load_mesh(&a.mesh)?.normalized()?;
    let sources = io::sample_mesh_surface(&mesh, a.count, a.seed, kernel_kind(a.kernel), a.mass)?;
    io::write_points_file(&a.out, &sources)?;
    println!("wrote {} points to {}", sources.len(), a.out.display());
    Ok(())
}
