//! Kernel-sum evaluators over a shared [`Octree`].
//!
//! The stochastic estimator follows the path view of Barnes-Hut: each source
//! owns a root-to-leaf path whose node aggregates form a telescoping series
//! ending at the exact point term. A sample draws a path index uniformly
//! inside a subdomain (a child of the root), walks down with Russian
//! roulette, and at each surviving step swaps the parent's aggregate term for
//! the sum of its children's terms, reweighted by the probability of having
//! reached that node. The subdomain aggregates act as control variates.

use std::borrow::Cow;
use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::kernels::{
    kernel_basis, node_contribution, point_contribution, post_transform, vec_of, KernelSpec, Real,
};
use crate::octree::{far_field_ratio, Octree};
use crate::rng::{CounterRng, RngStreams};
use crate::types::{EstimatorConfig, Method, Precision, QuerySet, RrMode, SourceSet};

/// Lower clamp on the child far-field ratio in the roulette probability.
const MIN_CHILD_RATIO: f64 = 1e-12;
/// Below this many terms brute force sums sequentially.
const PAIRWISE_BLOCK: usize = 64;

/// Work counters collected while evaluating. Sums are order independent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EvalStats {
    pub queries: u64,
    /// Kernel evaluations of node aggregates or individual points.
    pub visited_nodes: u64,
    pub paths: u64,
    /// Surviving path steps (contribution swaps taken).
    pub path_steps: u64,
    /// Steps each sampled path would take if never truncated.
    pub full_path_steps: u64,
}

impl EvalStats {
    pub fn merge(&mut self, other: &EvalStats) {
        self.queries += other.queries;
        self.visited_nodes += other.visited_nodes;
        self.paths += other.paths;
        self.path_steps += other.path_steps;
        self.full_path_steps += other.full_path_steps;
    }

    pub fn visited_nodes_mean(&self) -> f64 {
        self.visited_nodes as f64 / self.queries.max(1) as f64
    }

    pub fn mean_path_length(&self) -> f64 {
        self.path_steps as f64 / self.paths.max(1) as f64
    }

    pub fn mean_full_path_length(&self) -> f64 {
        self.full_path_steps as f64 / self.paths.max(1) as f64
    }
}

fn pairwise_sum<T: Real>(range: std::ops::Range<usize>, f: &impl Fn(usize) -> T) -> T {
    if range.len() <= PAIRWISE_BLOCK {
        let mut acc = T::zero();
        for i in range {
            acc = acc + f(i);
        }
        acc
    } else {
        let mid = range.start + range.len() / 2;
        pairwise_sum(range.start..mid, f) + pairwise_sum(mid..range.end, f)
    }
}

/// Exact kernel sum with pairwise summation; the reference for everything
/// else.
pub fn brute_force<T: Real>(sources: &SourceSet, kernel: &KernelSpec, q: [T; 3]) -> T {
    pairwise_sum(0..sources.len(), &|i| point_contribution(kernel, sources, i, q))
}

/// Exact sum over the points of one node, in tree order.
pub fn node_exact<T: Real>(
    tree: &Octree,
    sources: &SourceSet,
    kernel: &KernelSpec,
    node: usize,
    q: [T; 3],
) -> T {
    let mut acc = T::zero();
    for &i in tree.node_points(node) {
        acc = acc + point_contribution(kernel, sources, i as usize, q);
    }
    acc
}

/// Barnes-Hut traversal: a node is accepted when it is a leaf or its far
/// field ratio reaches `beta`. Accepted leaves holding several points (depth
/// cap) contribute their exact per-point sum unless the far-field test
/// already accepted them.
pub fn barnes_hut<T: Real>(
    tree: &Octree,
    sources: &SourceSet,
    kernel: &KernelSpec,
    q: [T; 3],
    beta: f64,
    stats: &mut EvalStats,
) -> T {
    bh_node(tree, sources, kernel, 0, q, T::of(beta), stats)
}

fn bh_node<T: Real>(
    tree: &Octree,
    sources: &SourceSet,
    kernel: &KernelSpec,
    node: usize,
    q: [T; 3],
    beta: T,
    stats: &mut EvalStats,
) -> T {
    let n = &tree.nodes[node];
    stats.visited_nodes += 1;
    if far_field_ratio(n, q) >= beta {
        return node_contribution(kernel, tree, node, q);
    }
    if n.is_leaf() {
        if n.len() == 1 {
            return node_contribution(kernel, tree, node, q);
        }
        stats.visited_nodes += n.len() as u64;
        return node_exact(tree, sources, kernel, node, q);
    }
    let mut acc = T::zero();
    for &c in tree.children(node) {
        acc = acc + bh_node(tree, sources, kernel, c as usize, q, beta, stats);
    }
    acc
}

/// Probability of continuing a path from a node with far-field ratio
/// `ratio_parent` into a child with ratio `ratio_child`.
#[inline]
pub fn russian_roulette_prob<T: Real>(ratio_parent: T, ratio_child: T, mode: RrMode) -> T {
    match mode {
        RrMode::PaperRatio => {
            let p = ratio_parent.max(T::one()) / ratio_child.max(T::of(MIN_CHILD_RATIO));
            p.min(T::one())
        }
        RrMode::FixedHalf => T::of(0.5),
        RrMode::Disabled => T::one(),
    }
}

/// Sum of the children's aggregate terms minus the node's own term.
pub fn contribution_swap<T: Real>(
    tree: &Octree,
    kernel: &KernelSpec,
    node: usize,
    q: [T; 3],
) -> Result<T> {
    if tree.nodes[node].is_leaf() {
        return Err(Error::LeafSwap(node));
    }
    let mut acc = T::zero();
    for &c in tree.children(node) {
        acc = acc + node_contribution(kernel, tree, c as usize, q);
    }
    Ok(acc - node_contribution(kernel, tree, node, q))
}

/// Uniform tree position inside `node`'s range.
#[inline]
fn sample_position(rng: &mut CounterRng, tree: &Octree, node: usize) -> u32 {
    let n = &tree.nodes[node];
    n.begin + rng.next_below(n.len() as u64) as u32
}

/// Draws a source uniformly from `node` and returns its original index.
pub fn sample_path_index(rng: &mut CounterRng, tree: &Octree, node: usize) -> usize {
    tree.permuted_indices[sample_position(rng, tree, node) as usize] as usize
}

/// One truncated path sample rooted at `subdomain`, returning the sum of its
/// reweighted contribution swaps (the control variate is added by the
/// caller). `subdomain_term` must be the subdomain's aggregate term.
#[allow(clippy::too_many_arguments)]
pub fn path_sample<T: Real>(
    tree: &Octree,
    sources: &SourceSet,
    kernel: &KernelSpec,
    q: [T; 3],
    subdomain: usize,
    subdomain_term: T,
    rr_mode: RrMode,
    streams: &mut RngStreams,
    stats: &mut EvalStats,
) -> T {
    walk_path(tree, sources, kernel, q, subdomain, subdomain_term, rr_mode, streams, stats, None)
}

/// Children-term sums already computed for the current query, keyed by node.
type SwapMemo<T> = HashMap<u32, (T, T)>;

#[allow(clippy::too_many_arguments)]
fn walk_path<T: Real>(
    tree: &Octree,
    sources: &SourceSet,
    kernel: &KernelSpec,
    q: [T; 3],
    subdomain: usize,
    subdomain_term: T,
    rr_mode: RrMode,
    streams: &mut RngStreams,
    stats: &mut EvalStats,
    mut memo: Option<&mut SwapMemo<T>>,
) -> T {
    let root_count = tree.nodes[subdomain].len() as f64;
    let pos = sample_position(&mut streams.index_stream, tree, subdomain);
    let (leaf_depth, leaf) = descend_to_leaf(tree, subdomain, pos);
    stats.paths += 1;
    stats.full_path_steps += (leaf_depth - tree.nodes[subdomain].depth) as u64
        + (tree.nodes[leaf].len() > 1) as u64;

    let mut node = subdomain;
    let mut node_term = subdomain_term;
    let mut node_ratio = far_field_ratio(&tree.nodes[node], q);
    let mut p_rr = T::one();
    let mut acc = T::zero();
    loop {
        let n = &tree.nodes[node];
        let p_agg = T::of(n.len() as f64 / root_count);
        if n.is_leaf() {
            if n.len() > 1 {
                // Leaves holding several points take one deterministic extra
                // step to their exact per-point sum.
                let exact = node_exact(tree, sources, kernel, node, q);
                stats.visited_nodes += n.len() as u64;
                stats.path_steps += 1;
                acc = acc + (exact - node_term) / (p_agg * p_rr);
            }
            break;
        }
        let child = tree.child_containing(node, pos);
        let child_ratio = far_field_ratio(&tree.nodes[child], q);
        let p = russian_roulette_prob(node_ratio, child_ratio, rr_mode);
        if T::of(streams.roulette_stream.next_f64()) >= p {
            break;
        }
        p_rr = p_rr * p;
        let cached = memo.as_deref().and_then(|m| m.get(&(child as u32)).copied());
        let (children_sum, child_term) = match cached {
            Some(hit) => hit,
            None => {
                let mut children_sum = T::zero();
                let mut child_term = T::zero();
                for &c in tree.children(node) {
                    let t = node_contribution(kernel, tree, c as usize, q);
                    if c as usize == child {
                        child_term = t;
                    }
                    children_sum = children_sum + t;
                }
                stats.visited_nodes += n.child_count as u64;
                if let Some(m) = memo.as_deref_mut() {
                    m.insert(child as u32, (children_sum, child_term));
                }
                (children_sum, child_term)
            }
        };
        stats.path_steps += 1;
        acc = acc + (children_sum - node_term) / (p_agg * p_rr);
        node = child;
        node_term = child_term;
        node_ratio = child_ratio;
    }
    acc
}

fn descend_to_leaf(tree: &Octree, mut node: usize, pos: u32) -> (u32, usize) {
    while !tree.nodes[node].is_leaf() {
        node = tree.child_containing(node, pos);
    }
    (tree.nodes[node].depth, node)
}

/// Stratified stochastic estimate: one control variate per child of the
/// root plus the mean of `samples` path samples drawn inside it.
#[allow(clippy::too_many_arguments)]
pub fn path_sample_estimate<T: Real>(
    tree: &Octree,
    sources: &SourceSet,
    kernel: &KernelSpec,
    q: [T; 3],
    samples: usize,
    rr_mode: RrMode,
    seed: u64,
    query_index: u64,
    stats: &mut EvalStats,
) -> T {
    if tree.root().is_leaf() {
        stats.visited_nodes += tree.root().len() as u64;
        return node_exact(tree, sources, kernel, 0, q);
    }
    let inv_s = T::of(1.0 / samples as f64);
    let mut total = T::zero();
    // With several samples per subdomain, paths share prefixes; the swap
    // sums they need are computed once per query. Visited-node counts then
    // reflect only the kernel terms actually evaluated.
    let mut memo = SwapMemo::new();
    for (ordinal, &a) in tree.children(0).iter().enumerate() {
        let a = a as usize;
        let cv = node_contribution(kernel, tree, a, q);
        stats.visited_nodes += 1;
        let mut fa = T::zero();
        for s in 0..samples {
            let mut streams = RngStreams::new(seed, query_index, ordinal as u64, s as u64);
            let memo = (samples > 1).then_some(&mut memo);
            fa = fa + walk_path(tree, sources, kernel, q, a, cv, rr_mode, &mut streams, stats, memo);
        }
        total = total + cv + fa * inv_s;
    }
    total
}

/// Deterministic sum of every telescoping term: the subdomain control
/// variates plus the contribution swap at every internal node below the
/// root (and the exact-sum swap at multi-point leaves). Equals the brute
/// force sum up to reassociation.
pub fn telescoping_exhaustive<T: Real>(
    tree: &Octree,
    sources: &SourceSet,
    kernel: &KernelSpec,
    q: [T; 3],
    stats: &mut EvalStats,
) -> T {
    if tree.root().is_leaf() {
        stats.visited_nodes += tree.root().len() as u64;
        return node_exact(tree, sources, kernel, 0, q);
    }
    let terms: Vec<T> = (0..tree.len())
        .map(|n| node_contribution(kernel, tree, n, q))
        .collect();
    stats.visited_nodes += tree.len() as u64;
    let mut total = T::zero();
    for (id, n) in tree.nodes.iter().enumerate().skip(1) {
        if n.depth == 1 {
            total = total + terms[id];
        }
        if n.is_leaf() {
            if n.len() > 1 {
                stats.visited_nodes += n.len() as u64;
                total = total + (node_exact(tree, sources, kernel, id, q) - terms[id]);
            }
        } else {
            let mut sum = T::zero();
            for &c in tree.children(id) {
                sum = sum + terms[c as usize];
            }
            total = total + (sum - terms[id]);
        }
    }
    total
}

/// Per-query estimates after the kernel's post-transform.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FieldResult {
    /// Raw kernel sums before the post-transform.
    pub raw: Vec<f64>,
    pub values: Vec<f64>,
    /// Entries whose post-transform failed (e.g. non-positive smooth sums).
    pub flagged: Vec<bool>,
    pub stats: EvalStats,
}

impl FieldResult {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|&&f| f).count()
    }
}

/// A configured evaluator holding the tree built for its method.
pub struct FieldEvaluator<'a> {
    config: EstimatorConfig,
    sources: &'a SourceSet,
    kernel: KernelSpec,
    tree: Option<Cow<'a, Octree>>,
}

impl<'a> FieldEvaluator<'a> {
    pub fn new(config: EstimatorConfig, sources: &'a SourceSet, kernel: KernelSpec) -> Result<Self> {
        config.validate()?;
        if sources.channel_count() != kernel.channel_count() {
            return Err(Error::InvalidInput(format!(
                "kernel {} needs {} mass channels, sources have {}",
                kernel.kind.name(),
                kernel.channel_count(),
                sources.channel_count()
            )));
        }
        let tree = match config.method {
            Method::BruteForce => None,
            _ => Some(Cow::Owned(Octree::build(
                sources,
                config.branching_per_dim,
                config.max_depth,
            )?)),
        };
        Ok(FieldEvaluator {
            config,
            sources,
            kernel,
            tree,
        })
    }

    /// Reuses an already built tree; its branching must match the config.
    pub fn with_tree(
        config: EstimatorConfig,
        sources: &'a SourceSet,
        kernel: KernelSpec,
        tree: &'a Octree,
    ) -> Result<Self> {
        config.validate()?;
        if tree.branching_per_dim != config.branching_per_dim || tree.point_count() != sources.len()
        {
            return Err(Error::InvalidConfig("tree does not match configuration".into()));
        }
        Ok(FieldEvaluator {
            config,
            sources,
            kernel,
            tree: Some(Cow::Borrowed(tree)),
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn tree(&self) -> Option<&Octree> {
        self.tree.as_deref()
    }

    /// Raw (untransformed) estimate for one query.
    pub fn estimate<T: Real>(&self, query_index: usize, q: Vec3, stats: &mut EvalStats) -> T {
        let q = vec_of::<T>(q);
        let c = &self.config;
        stats.queries += 1;
        match (c.method, self.tree.as_deref()) {
            (Method::BruteForce, _) | (_, None) => {
                stats.visited_nodes += self.sources.len() as u64;
                brute_force(self.sources, &self.kernel, q)
            }
            (Method::BarnesHut, Some(t)) => {
                barnes_hut(t, self.sources, &self.kernel, q, c.beta, stats)
            }
            (Method::Stochastic, Some(t)) => path_sample_estimate(
                t,
                self.sources,
                &self.kernel,
                q,
                c.samples_per_subdomain,
                c.rr_mode,
                c.seed,
                query_index as u64,
                stats,
            ),
            (Method::TelescopingExhaustive, Some(t)) => {
                telescoping_exhaustive(t, self.sources, &self.kernel, q, stats)
            }
        }
    }

    fn raw_one(&self, query_index: usize, q: Vec3) -> (f64, EvalStats) {
        let mut stats = EvalStats::default();
        let v = match self.config.precision {
            Precision::F64 => self.estimate::<f64>(query_index, q, &mut stats),
            Precision::F32 => self.estimate::<f32>(query_index, q, &mut stats).to_f64(),
        };
        (v, stats)
    }

    /// Evaluates every query. Each entry depends only on the configuration
    /// and its own index, so the worker count never changes the output.
    pub fn evaluate(&self, queries: &QuerySet) -> FieldResult {
        let per_query = self.evaluate_raw(queries.points());
        let mut out = FieldResult {
            raw: Vec::with_capacity(per_query.len()),
            values: Vec::with_capacity(per_query.len()),
            flagged: Vec::with_capacity(per_query.len()),
            stats: EvalStats::default(),
        };
        for (raw, stats) in per_query {
            let t = post_transform(&self.kernel, raw);
            out.raw.push(raw);
            out.values.push(t.value);
            out.flagged.push(t.flagged);
            out.stats.merge(&stats);
        }
        out
    }

    #[cfg(feature = "parallel")]
    fn evaluate_raw(&self, points: &[Vec3]) -> Vec<(f64, EvalStats)> {
        use rayon::prelude::*;
        let run = || {
            points
                .par_iter()
                .enumerate()
                .map(|(i, &q)| self.raw_one(i, q))
                .collect()
        };
        match self.config.threads {
            1 => self.evaluate_serial(points),
            0 => run(),
            n => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(pool) => pool.install(run),
                Err(_) => self.evaluate_serial(points),
            },
        }
    }

    #[cfg(not(feature = "parallel"))]
    fn evaluate_raw(&self, points: &[Vec3]) -> Vec<(f64, EvalStats)> {
        self.evaluate_serial(points)
    }

    fn evaluate_serial(&self, points: &[Vec3]) -> Vec<(f64, EvalStats)> {
        points
            .iter()
            .enumerate()
            .map(|(i, &q)| self.raw_one(i, q))
            .collect()
    }
}

/// Builds whatever the configured method needs and evaluates every query.
pub fn evaluate_field(
    config: &EstimatorConfig,
    sources: &SourceSet,
    kernel: &KernelSpec,
    queries: &QuerySet,
) -> Result<FieldResult> {
    Ok(FieldEvaluator::new(config.clone(), sources, *kernel)?.evaluate(queries))
}

/// Kernel basis at a node's center of mass, exposed for diagnostics.
pub fn node_basis(tree: &Octree, kernel: &KernelSpec, node: usize, q: Vec3) -> Vec<f64> {
    kernel_basis::<f64>(kernel, tree.nodes[node].center_of_mass, q)
        .as_slice()
        .to_vec()
}
