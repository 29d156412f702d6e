use fastsum::estimators::brute_force;
use fastsum::geom::Vec3;
use fastsum::io::{
    self, format_csv, make_queries, parse_csv_values, parse_points_file, sample_mesh_surface,
    write_outputs, write_points_file, GridSpec, Mesh, OutputOptions,
};
use fastsum::rng::CounterRng;
use fastsum::{evaluate_field, EstimatorConfig, KernelKind, KernelSpec, QuerySet, SourceSet};

fn random_set(n: usize, c: usize, seed: u64) -> SourceSet {
    let mut rng = CounterRng::new(seed);
    let pos = (0..n)
        .map(|_| [rng.next_f64() * 8.0 - 4.0, rng.next_f64() - 0.5, rng.next_f64() * 1e-3])
        .collect();
    let masses = (0..n * c).map(|_| rng.next_f64() * 2.0 - 0.5).collect();
    SourceSet::new(pos, masses, c, None).unwrap()
}

#[test]
fn points_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    for c in [1, 3] {
        let original = random_set(500, c, c as u64);
        let path = dir.path().join(format!("pts{c}.txt"));
        write_points_file(&path, &original).unwrap();
        let back = parse_points_file(&path).unwrap();
        assert_eq!(back.len(), original.len());
        assert_eq!(back.channel_count(), c);
        for i in 0..original.len() {
            for k in 0..3 {
                assert!((back.position(i)[k] - original.position(i)[k]).abs() <= 1e-12);
            }
            for (a, b) in back.mass(i).iter().zip(original.mass(i)) {
                assert!((a - b).abs() <= 1e-12);
            }
            assert!((back.weight(i) - original.weight(i)).abs() <= 1e-12);
        }
    }
}

#[test]
fn csv_values_round_trip_to_nine_digits() {
    let sources = random_set(64, 1, 9);
    let queries = make_queries(&GridSpec::grid3d(4)).unwrap();
    let field = evaluate_field(&EstimatorConfig::barnes_hut(1.5), &sources, &KernelSpec::coulomb(), &queries).unwrap();
    let text = format_csv(&queries, &field).unwrap();
    let back = parse_csv_values(&text).unwrap();
    assert_eq!(back.len(), field.values.len());
    for (a, b) in back.iter().zip(&field.values) {
        assert!((a - b).abs() <= 1e-9 * b.abs());
    }
}

#[test]
fn writers_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let sources = random_set(200, 1, 4);
    let spec = GridSpec::axis_slice(2, 0.0, 17, 9, 1.0);
    let queries = make_queries(&spec).unwrap();
    let opts = OutputOptions {
        range: None,
        csv: true,
        images: true,
    };
    let mut outputs = Vec::new();
    for run in 0..2 {
        let field =
            evaluate_field(&EstimatorConfig::stochastic(2, 5), &sources, &KernelSpec::coulomb(), &queries).unwrap();
        let prefix = dir.path().join(format!("run{run}"));
        let files = write_outputs(&field, &spec, &queries, &prefix, &opts).unwrap();
        assert_eq!(files.len(), 4);
        outputs.push(files.iter().map(|f| std::fs::read(f).unwrap()).collect::<Vec<_>>());
    }
    assert_eq!(outputs[0], outputs[1]);
}

fn two_triangles() -> Mesh {
    // Areas 1 (z = 0) and 3 (z = 1).
    let a = 2f64.sqrt();
    let b = 6f64.sqrt();
    Mesh {
        vertices: vec![
            [0.0, 0.0, 0.0],
            [a, 0.0, 0.0],
            [0.0, a, 0.0],
            [0.0, 0.0, 1.0],
            [b, 0.0, 1.0],
            [0.0, b, 1.0],
        ],
        triangles: vec![[0, 1, 2], [3, 4, 5]],
    }
}

#[test]
fn triangle_choice_is_area_proportional() {
    let mesh = two_triangles();
    assert!((mesh.triangle_area(0) - 1.0).abs() < 1e-12);
    assert!((mesh.triangle_area(1) - 3.0).abs() < 1e-12);
    let m = 1_000_000;
    let s = sample_mesh_surface(&mesh, m, 3, KernelKind::Coulomb, None).unwrap();
    let small = (0..m).filter(|&i| s.position(i)[2] < 0.5).count() as f64;
    let (mean, sd) = (m as f64 * 0.25, (m as f64 * 0.25 * 0.75).sqrt());
    assert!((small - mean).abs() <= 5.0 * sd, "{small} vs {mean} +- {sd}");
}

#[test]
fn sampling_is_deterministic_and_conserves_totals() {
    let mesh = io::builtin_mesh("torus").unwrap();
    let area = mesh.total_area();
    let a = sample_mesh_surface(&mesh, 5000, 42, KernelKind::WindingDipole, None).unwrap();
    let b = sample_mesh_surface(&mesh, 5000, 42, KernelKind::WindingDipole, None).unwrap();
    assert_eq!(a, b);
    let total: f64 = a.weights().iter().sum();
    assert!((total - area).abs() <= 1e-12 * area);

    let c = sample_mesh_surface(&mesh, 5000, 42, KernelKind::Coulomb, None).unwrap();
    let total: f64 = c.masses().iter().sum();
    assert!((total - 1.0).abs() <= 1e-12);
    let d = sample_mesh_surface(&mesh, 5000, 43, KernelKind::Coulomb, None).unwrap();
    assert_ne!(c.positions(), d.positions());
}

#[test]
fn closed_surface_normals_cancel() {
    let mesh = io::icosphere(4);
    let area = mesh.total_area();
    // The sampled sum has spread ~ area / sqrt(M); M = 4e6 puts it near
    // 5e-4 * area.
    let s = sample_mesh_surface(&mesh, 4_000_000, 1, KernelKind::WindingDipole, None).unwrap();
    let mut sum = [0.0; 3];
    for i in 0..s.len() {
        for (acc, m) in sum.iter_mut().zip(s.mass(i)) {
            *acc += m;
        }
    }
    let norm = (sum[0] * sum[0] + sum[1] * sum[1] + sum[2] * sum[2]).sqrt();
    assert!(norm <= 1e-3 * area, "|sum| = {norm}, area = {area}");
}

#[test]
fn sphere_winding_number_inside_and_outside() {
    let mesh = io::icosphere(4).normalized().unwrap();
    let s = sample_mesh_surface(&mesh, 1 << 14, 7, KernelKind::WindingDipole, None).unwrap();
    let kernel = KernelSpec::winding();
    let radius = 1.0;
    let center: f64 = brute_force(&s, &kernel, [0.0; 3]);
    assert!((center - 1.0).abs() <= 0.02, "w(center) = {center}");
    let dirs: [Vec3; 3] = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.6, 0.0, 0.8]];
    for dir in dirs {
        let q = [3.0 * radius * dir[0], 3.0 * radius * dir[1], 3.0 * radius * dir[2]];
        let w: f64 = brute_force(&s, &kernel, q);
        assert!(w.abs() <= 0.02, "w({q:?}) = {w}");
    }
}

#[test]
fn random_queries_inside_bounds_and_reproducible() {
    let a = make_queries(&GridSpec::random(10_000, 5)).unwrap();
    let b = make_queries(&GridSpec::random(10_000, 5)).unwrap();
    assert_eq!(a, b);
    assert!(a
        .points()
        .iter()
        .all(|p| p.iter().all(|x| (-1.0..=1.0).contains(x))));
    let c: QuerySet = make_queries(&GridSpec::random(10_000, 6)).unwrap();
    assert_ne!(a, c);
}
