//! Browser bindings for the fastsum estimators.
//!
//! The page (see `www/`) drives three operations on a sampled mesh scene:
//! rendering a field slice, comparing Russian roulette modes, and tracing
//! error against work for Barnes-Hut and the stochastic estimator. All of
//! the logic lives in [`Scene`], which is plain Rust and tested natively;
//! [`Demo`] is the thin `wasm-bindgen` wrapper.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use fastsum::bench::{error_stats, ErrorStats};
use fastsum::io::{self, make_queries, GridSpec};
use fastsum::{EstimatorConfig, FieldEvaluator, FieldResult, KernelKind, KernelSpec, Method, Octree, QuerySet, RrMode, SourceSet};

pub fn parse_kernel(name: &str, alpha: f64) -> fastsum::Result<KernelSpec> {
    match name {
        "coulomb" => Ok(KernelSpec::coulomb()),
        "winding" | "winding_dipole" => Ok(KernelSpec::winding()),
        "smooth" | "smooth_exp" if alpha > 0.0 => Ok(KernelSpec::smooth_exp(alpha)),
        _ => Err(fastsum::Error::InvalidConfig(format!("unknown kernel {name:?} or bad alpha"))),
    }
}

pub fn parse_rr_mode(name: &str) -> fastsum::Result<RrMode> {
    RrMode::ALL
        .into_iter()
        .find(|m| m.name() == name)
        .ok_or_else(|| fastsum::Error::InvalidConfig(format!("unknown roulette mode {name:?}")))
}

/// A sampled mesh with both trees prebuilt (d=2 for Barnes-Hut, d=4 for the
/// stochastic estimator).
pub struct Scene {
    sources: SourceSet,
    kernel: KernelSpec,
    bh_tree: Octree,
    st_tree: Octree,
}

#[derive(Clone, Debug, Serialize)]
pub struct Point {
    pub method: String,
    pub parameter: f64,
    pub visited_nodes_mean: f64,
    pub mean_path_length: f64,
    pub stats: ErrorStats,
}

impl Scene {
    pub fn new(mesh: &str, samples: usize, kernel: KernelSpec) -> fastsum::Result<Scene> {
        let mesh = io::builtin_mesh(mesh)
            .ok_or_else(|| fastsum::Error::InvalidInput(format!("unknown mesh {mesh:?}")))?
            .normalized()?;
        let mass = match kernel.kind {
            KernelKind::SmoothExp => Some(1.0),
            _ => None,
        };
        let sources = io::sample_mesh_surface(&mesh, samples, 1, kernel.kind, mass)?;
        Ok(Scene {
            bh_tree: Octree::build(&sources, Method::BarnesHut.default_branching(), 32)?,
            st_tree: Octree::build(&sources, Method::Stochastic.default_branching(), 32)?,
            sources,
            kernel,
        })
    }

    pub fn source_count(&self) -> usize {
        self.sources.len()
    }

    fn field(&self, config: EstimatorConfig, queries: &QuerySet) -> fastsum::Result<FieldResult> {
        config.validate()?;
        let tree = match config.method {
            Method::Stochastic => &self.st_tree,
            _ => &self.bh_tree,
        };
        Ok(FieldEvaluator::with_tree(config, &self.sources, self.kernel, tree)?.evaluate(queries))
    }

    /// Post-transformed slice values, row 0 at the top. Non-finite entries
    /// (flagged smooth-distance queries) come back as NaN.
    pub fn slice(&self, config: EstimatorConfig, axis: usize, offset: f64, resolution: usize) -> fastsum::Result<Vec<f32>> {
        let spec = GridSpec::axis_slice(axis, offset, resolution, resolution, 1.0);
        spec.validate()?;
        let field = self.field(config, &make_queries(&spec)?)?;
        Ok(field
            .values
            .iter()
            .zip(&field.flagged)
            .map(|(&v, &f)| if f { f32::NAN } else { v as f32 })
            .collect())
    }

    fn scored(&self, config: EstimatorConfig, parameter: f64, queries: &QuerySet, oracle: &FieldResult) -> fastsum::Result<Point> {
        let label = match config.method {
            Method::Stochastic => format!("stochastic:{}", config.rr_mode.name()),
            m => m.name().to_string(),
        };
        let field = self.field(config, queries)?;
        let flags: Vec<bool> = field.flagged.iter().zip(&oracle.flagged).map(|(a, b)| *a || *b).collect();
        Ok(Point {
            method: label,
            parameter,
            visited_nodes_mean: field.stats.visited_nodes_mean(),
            mean_path_length: field.stats.mean_path_length(),
            stats: error_stats(&field.values, &oracle.values, Some(&flags))?,
        })
    }

    fn oracle(&self, queries: &QuerySet) -> fastsum::Result<FieldResult> {
        self.field(EstimatorConfig::brute_force(), queries)
    }

    /// One S=1 stochastic run per roulette mode on random queries.
    pub fn ablation(&self, count: usize, seed: u64) -> fastsum::Result<Vec<Point>> {
        let queries = make_queries(&GridSpec::random(count, seed))?;
        let oracle = self.oracle(&queries)?;
        RrMode::ALL
            .into_iter()
            .map(|mode| {
                let config = EstimatorConfig {
                    rr_mode: mode,
                    ..EstimatorConfig::stochastic(1, seed)
                };
                self.scored(config, 1.0, &queries, &oracle)
            })
            .collect()
    }

    /// Error against work for Barnes-Hut over `betas` and the stochastic
    /// estimator over `samples`.
    pub fn convergence(&self, count: usize, seed: u64, betas: &[f64], samples: &[usize]) -> fastsum::Result<Vec<Point>> {
        let queries = make_queries(&GridSpec::random(count, seed))?;
        let oracle = self.oracle(&queries)?;
        let mut out = Vec::new();
        for &beta in betas {
            out.push(self.scored(EstimatorConfig::barnes_hut(beta), beta, &queries, &oracle)?);
        }
        for &s in samples {
            out.push(self.scored(EstimatorConfig::stochastic(s, seed), s as f64, &queries, &oracle)?);
        }
        Ok(out)
    }
}

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn method_config(method: &str, parameter: f64, rr_mode: &str, seed: u64) -> fastsum::Result<EstimatorConfig> {
    let config = match method {
        "brute" => EstimatorConfig::brute_force(),
        "barnes_hut" => EstimatorConfig::barnes_hut(parameter),
        "stochastic" => EstimatorConfig {
            rr_mode: parse_rr_mode(rr_mode)?,
            ..EstimatorConfig::stochastic(parameter.round().max(1.0) as usize, seed)
        },
        other => return Err(fastsum::Error::InvalidConfig(format!("unknown method {other:?}"))),
    };
    Ok(config)
}

#[wasm_bindgen]
pub struct Demo {
    scene: Scene,
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(mesh: &str, samples: usize, kernel: &str, alpha: f64) -> Result<Demo, JsError> {
        let kernel = parse_kernel(kernel, alpha).map_err(js_err)?;
        Ok(Demo {
            scene: Scene::new(mesh, samples, kernel).map_err(js_err)?,
        })
    }

    #[wasm_bindgen(js_name = sourceCount)]
    pub fn source_count(&self) -> usize {
        self.scene.source_count()
    }

    #[allow(clippy::too_many_arguments)]
    /// `method` is brute, barnes_hut (parameter = beta) or stochastic
    /// (parameter = samples per subdomain).
    pub fn slice(
        &self,
        method: &str,
        parameter: f64,
        rr_mode: &str,
        seed: u64,
        axis: usize,
        offset: f64,
        resolution: usize,
    ) -> Result<Vec<f32>, JsError> {
        let config = method_config(method, parameter, rr_mode, seed).map_err(js_err)?;
        self.scene.slice(config, axis, offset, resolution).map_err(js_err)
    }

    /// JSON array of per-mode error and work records.
    pub fn ablation(&self, queries: usize, seed: u64) -> Result<String, JsError> {
        let points = self.scene.ablation(queries, seed).map_err(js_err)?;
        serde_json::to_string(&points).map_err(js_err)
    }

    /// JSON array of error/work records for a beta sweep and an S sweep.
    pub fn convergence(&self, queries: usize, seed: u64) -> Result<String, JsError> {
        let points = self
            .scene
            .convergence(queries, seed, &[1.0, 1.5, 2.0, 3.0, 4.0, 6.0], &[1, 2, 4, 8, 16])
            .map_err(js_err)?;
        serde_json::to_string(&points).map_err(js_err)
    }
}
