mod common;

use common::{clustered_points, coulomb_set, enumerated_expectation, random_points};
use fastsum::estimators::{
    barnes_hut, brute_force, path_sample_estimate, sample_path_index, telescoping_exhaustive,
};
use fastsum::rng::CounterRng;
use fastsum::{EvalStats, KernelSpec, Octree, RrMode, SourceSet};

fn small_sets() -> Vec<(SourceSet, usize, usize)> {
    let mut rng = CounterRng::new(17);
    let mut out = Vec::new();
    for case in 0..60 {
        let n = 1 + case % 12;
        let mut pts = if case % 3 == 0 {
            clustered_points(n, 2, &mut rng)
        } else {
            random_points(n, &mut rng)
        };
        if case % 5 == 0 && n > 2 {
            pts[1] = pts[0];
            pts[2] = pts[0];
        }
        let d = if case % 2 == 0 { 2 } else { 4 };
        let depth = if case % 4 == 1 { 2 } else { 32 };
        out.push((coulomb_set(pts, &mut rng), d, depth));
    }
    out
}

#[test]
fn enumerated_expectation_matches_brute_force_for_all_modes() {
    let kernel = KernelSpec::coulomb();
    let mut rng = CounterRng::new(3);
    for (sources, d, depth) in small_sets() {
        let tree = Octree::build(&sources, d, depth).unwrap();
        for _ in 0..4 {
            let q = [
                rng.next_f64() * 3.0 - 1.5,
                rng.next_f64() * 3.0 - 1.5,
                rng.next_f64() * 3.0 - 1.5,
            ];
            let exact: f64 = brute_force(&sources, &kernel, q);
            for mode in RrMode::ALL {
                let e = enumerated_expectation(&tree, &sources, &kernel, q, mode);
                assert!(
                    (e - exact).abs() <= 1e-12 * exact.abs().max(1.0),
                    "mode {:?} n={} d={d}: {e} vs {exact}",
                    mode,
                    sources.len()
                );
            }
        }
    }
}

#[test]
fn telescoping_and_unit_beta_limits_on_small_trees() {
    let kernel = KernelSpec::coulomb();
    for (sources, d, depth) in small_sets() {
        let tree = Octree::build(&sources, d, depth).unwrap();
        let q = [1.3, -0.4, 0.2];
        let exact: f64 = brute_force(&sources, &kernel, q);
        let mut stats = EvalStats::default();
        let tel: f64 = telescoping_exhaustive(&tree, &sources, &kernel, q, &mut stats);
        assert!((tel - exact).abs() <= 1e-12 * exact.abs().max(1.0));
        let bh: f64 = barnes_hut(&tree, &sources, &kernel, q, f64::INFINITY, &mut stats);
        assert!((bh - exact).abs() <= 1e-12 * exact.abs().max(1.0));
    }
}

#[test]
fn monte_carlo_mean_is_within_four_standard_errors() {
    let kernel = KernelSpec::coulomb();
    let mut rng = CounterRng::new(5);
    let pts = clustered_points(400, 6, &mut rng);
    let sources = coulomb_set(pts, &mut rng);
    let tree = Octree::build(&sources, 2, 32).unwrap();
    let q = [0.1, 0.2, -0.3];
    let exact: f64 = brute_force(&sources, &kernel, q);
    for mode in RrMode::ALL {
        let trials = 4000;
        let mut stats = EvalStats::default();
        let xs: Vec<f64> = (0..trials)
            .map(|s| path_sample_estimate(&tree, &sources, &kernel, q, 1, mode, s, 0, &mut stats))
            .collect();
        let mean = xs.iter().sum::<f64>() / trials as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (trials - 1) as f64;
        let se = (var / trials as f64).sqrt();
        assert!(
            (mean - exact).abs() <= 4.0 * se + 1e-12,
            "{mode:?}: mean {mean} exact {exact} se {se}"
        );
    }
}

#[test]
fn path_index_sampling_is_uniform() {
    // Chi-square goodness of fit over 40 equally likely indices; the 0.999
    // quantile of chi-square with 39 degrees of freedom is 72.05.
    let mut rng = CounterRng::new(11);
    let pts = random_points(40, &mut rng);
    let sources = coulomb_set(pts, &mut rng);
    let tree = Octree::build(&sources, 2, 32).unwrap();
    let draws = 40_000;
    let mut counts = vec![0usize; 40];
    let mut stream = CounterRng::new(99);
    for _ in 0..draws {
        counts[sample_path_index(&mut stream, &tree, 0)] += 1;
    }
    let expected = draws as f64 / 40.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    assert!(chi2 < 72.05, "chi2 = {chi2}");
}
