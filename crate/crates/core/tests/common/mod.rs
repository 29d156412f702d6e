#![allow(dead_code)]

use fastsum::geom::Vec3;
use fastsum::kernels::{node_contribution, point_contribution, KernelSpec};
use fastsum::octree::{far_field_ratio, Octree};
use fastsum::rng::CounterRng;
use fastsum::{RrMode, SourceSet};

pub fn random_points(n: usize, rng: &mut CounterRng) -> Vec<Vec3> {
    (0..n)
        .map(|_| {
            [
                rng.next_f64() * 2.0 - 1.0,
                rng.next_f64() * 2.0 - 1.0,
                rng.next_f64() * 2.0 - 1.0,
            ]
        })
        .collect()
}

/// Gaussian-ish clusters built from sums of uniforms.
pub fn clustered_points(n: usize, clusters: usize, rng: &mut CounterRng) -> Vec<Vec3> {
    let centers = random_points(clusters, rng);
    (0..n)
        .map(|i| {
            let c = centers[i % clusters];
            let mut p = [0.0; 3];
            for k in 0..3 {
                let g: f64 = (0..4).map(|_| rng.next_f64() - 0.5).sum();
                p[k] = c[k] + 0.05 * g;
            }
            p
        })
        .collect()
}

pub fn coulomb_set(points: Vec<Vec3>, rng: &mut CounterRng) -> SourceSet {
    let masses = points.iter().map(|_| 0.25 + rng.next_f64()).collect();
    SourceSet::new(points, masses, 1, None).unwrap()
}

/// Independent Russian roulette probability, written straight from the
/// formula.
fn continue_prob(parent_ratio: f64, child_ratio: f64, mode: RrMode) -> f64 {
    match mode {
        RrMode::PaperRatio => {
            let num = if parent_ratio > 1.0 { parent_ratio } else { 1.0 };
            let den = if child_ratio > 1e-12 { child_ratio } else { 1e-12 };
            if num / den < 1.0 {
                num / den
            } else {
                1.0
            }
        }
        RrMode::FixedHalf => 0.5,
        RrMode::Disabled => 1.0,
    }
}

/// Exact expectation of the single-sample stratified estimator, obtained by
/// enumerating every path index `I` and every truncation length `K` with its
/// probability `p(I) p(K = l)`.
pub fn enumerated_expectation(
    tree: &Octree,
    sources: &SourceSet,
    kernel: &KernelSpec,
    q: Vec3,
    mode: RrMode,
) -> f64 {
    let root = &tree.nodes[0];
    if root.is_leaf() {
        return tree
            .node_points(0)
            .iter()
            .map(|&i| point_contribution::<f64>(kernel, sources, i as usize, q))
            .sum();
    }
    let term = |n: usize| node_contribution::<f64>(kernel, tree, n, q);
    let mut total = 0.0;
    for &a in tree.children(0) {
        let a = a as usize;
        let na = tree.nodes[a].len() as f64;
        let mut expectation = 0.0;
        for pos in tree.nodes[a].point_range() {
            // Path of tree position `pos` from the subdomain to its leaf.
            let mut path = vec![a];
            let mut node = a;
            while !tree.nodes[node].is_leaf() {
                node = *tree
                    .children(node)
                    .iter()
                    .map(|c| *c as usize)
                    .filter(|&c| tree.nodes[c].point_range().contains(&pos))
                    .collect::<Vec<_>>()
                    .first()
                    .unwrap();
                path.push(node);
            }
            // Per-step continuation probabilities and increments. A leaf
            // with several points adds one certain step to its exact sum.
            let mut probs = Vec::new();
            let mut deltas = Vec::new();
            for w in path.windows(2) {
                let (parent, child) = (w[0], w[1]);
                probs.push(continue_prob(
                    far_field_ratio(&tree.nodes[parent], q),
                    far_field_ratio(&tree.nodes[child], q),
                    mode,
                ));
                let kids: f64 = tree.children(parent).iter().map(|&c| term(c as usize)).sum();
                deltas.push((kids - term(parent), tree.nodes[parent].len() as f64 / na));
            }
            let leaf = *path.last().unwrap();
            if tree.nodes[leaf].len() > 1 {
                probs.push(1.0);
                let exact: f64 = tree
                    .node_points(leaf)
                    .iter()
                    .map(|&i| point_contribution::<f64>(kernel, sources, i as usize, q))
                    .sum();
                deltas.push((exact - term(leaf), tree.nodes[leaf].len() as f64 / na));
            }
            // p(K = l) = prod_{j<l} p_j * (1 - p_l), with p_l = 0 past the end.
            let steps = probs.len();
            for l in 0..=steps {
                let mut p_k = 1.0;
                for p in &probs[..l] {
                    p_k *= p;
                }
                if l < steps {
                    p_k *= 1.0 - probs[l];
                }
                if p_k == 0.0 {
                    continue;
                }
                let mut value = 0.0;
                let mut survive = 1.0;
                for k in 0..l {
                    survive *= probs[k];
                    value += deltas[k].0 / (deltas[k].1 * survive);
                }
                expectation += p_k * value / na;
            }
        }
        total += term(a) + expectation;
    }
    total
}
