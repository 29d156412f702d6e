use std::path::Path;
use std::process::{Command, Output};

fn fastsum(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fastsum"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("FASTSUM_THREADS", t),
        None => cmd.env_remove("FASTSUM_THREADS"),
    };
    cmd.output().expect("failed to spawn fastsum")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn brute_eval_matches_hand_sums_on_four_points() {
    let dir = tempfile::tempdir().unwrap();
    let pts = dir.path().join("four.txt");
    std::fs::write(&pts, "# x y z m\n0 0 0 1\n0.5 0 0 2\n0 0.5 0 -1\n0 0 0.5 0.5\n").unwrap();
    let prefix = dir.path().join("field");
    let out = fastsum(
        &["eval", "--points", s(&pts), "--method", "brute", "--kernel", "coulomb", "--grid", "2", "--out-prefix", s(&prefix)],
        None,
    );
    ok(&out);
    let csv = std::fs::read_to_string(dir.path().join("field.csv")).unwrap();
    let rows: Vec<Vec<f64>> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 8);

    let sources = [([0.0, 0.0, 0.0], 1.0), ([0.5, 0.0, 0.0], 2.0), ([0.0, 0.5, 0.0], -1.0), ([0.0, 0.0, 0.5], 0.5)];
    let mut index = 0;
    for x in [-1.0f64, 1.0] {
        for y in [-1.0f64, 1.0] {
            for z in [-1.0f64, 1.0] {
                let mut expected = 0.0;
                for (p, m) in sources {
                    let r = ((x - p[0]).powi(2) + (y - p[1]).powi(2) + (z - p[2]).powi(2)).sqrt();
                    expected -= m / r;
                }
                let row = &rows[index];
                assert_eq!(row[0] as usize, index);
                assert_eq!(&row[1..4], &[x, y, z]);
                assert!((row[4] - expected).abs() <= 1e-12, "{} vs {expected}", row[4]);
                assert_eq!(row[5], 0.0);
                index += 1;
            }
        }
    }
}

#[test]
fn validate_succeeds_on_generated_scenes() {
    let dir = tempfile::tempdir().unwrap();
    for mesh in ["builtin:icosphere", "builtin:torus", "builtin:blob"] {
        ok(&fastsum(&["validate", "--mesh", mesh, "--mesh-samples", "3000", "--queries", "8"], None));
    }
    let pts = dir.path().join("winding.txt");
    ok(&fastsum(
        &["sample-mesh", "--mesh", "builtin:torus", "--count", "2000", "--kernel", "winding", "--out", s(&pts)],
        None,
    ));
    ok(&fastsum(&["validate", "--points", s(&pts), "--kernel", "winding", "--queries", "8"], None));
}

#[test]
fn sweep_over_samples_writes_one_row_each() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("sweep");
    ok(&fastsum(
        &[
            "sweep", "--mesh", "builtin:blob", "--mesh-samples", "1024", "--grid", "4", "--method", "stochastic",
            "--samples", "1..32", "--out-prefix", s(&prefix),
        ],
        None,
    ));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,parameter,wall_time_s,mean_abs,median_abs,max_abs,rmse,visited_nodes_mean,flagged_count"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 32);
    assert!(rows[31].starts_with("stochastic,32,"));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("sweep.json")).unwrap()).unwrap();
    assert_eq!(summary["records"].as_array().unwrap().len(), 32);
    assert_eq!(summary["input_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(fastsum(&["eval", "--no-such-flag"], None).status.code(), Some(1));
    assert_eq!(fastsum(&["frobnicate"], None).status.code(), Some(1));
    assert_eq!(fastsum(&["eval", "--mesh", "builtin:blob", "--method", "bh", "--beta", "-1"], None).status.code(), Some(1));
    assert_eq!(fastsum(&["--help"], None).status.code(), Some(0));

    let missing = dir.path().join("missing.txt");
    assert_eq!(fastsum(&["eval", "--points", s(&missing)], None).status.code(), Some(2));
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "0 0 0 1\n1 1 1 0 0 1\n").unwrap();
    let out = fastsum(&["eval", "--points", s(&bad)], None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
    assert_eq!(fastsum(&["eval", "--mesh", "builtin:nope"], None).status.code(), Some(2));
}

#[test]
fn slice_eval_writes_images_and_tree_dump() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("slice");
    let dump = dir.path().join("tree.txt");
    ok(&fastsum(
        &[
            "eval", "--mesh", "builtin:torus", "--mesh-samples", "2048", "--slice", "z=0", "--slice-res", "32x16",
            "--kernel", "smooth", "--alpha", "50", "--dump-tree", s(&dump), "--out-prefix", s(&prefix),
        ],
        None,
    ));
    let pfm = std::fs::read(dir.path().join("slice.pfm")).unwrap();
    assert!(pfm.starts_with(b"Pf\n32 16\n-1.0\n"));
    assert_eq!(pfm.len(), b"Pf\n32 16\n-1.0\n".len() + 32 * 16 * 4);
    let pgm = std::fs::read(dir.path().join("slice.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 16\n255\n"));
    let sidecar: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("slice.json")).unwrap()).unwrap();
    assert_eq!(sidecar["width"], 32);
    assert!(std::fs::read_to_string(&dump).unwrap().lines().count() > 1);
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for threads in ["1", "3"] {
        let eval = dir.path().join(format!("eval{threads}"));
        ok(&fastsum(
            &[
                "eval", "--mesh", "builtin:blob", "--mesh-samples", "4096", "--slice", "y=0.1", "--slice-res", "40",
                "--method", "stochastic", "--seed", "9", "--out-prefix", s(&eval),
            ],
            Some(threads),
        ));
        let sweep = dir.path().join(format!("sweep{threads}"));
        ok(&fastsum(
            &[
                "sweep", "--mesh", "builtin:blob", "--mesh-samples", "2048", "--random-queries", "300", "--samples",
                "1,2,4", "--no-timings", "--out-prefix", s(&sweep),
            ],
            Some(threads),
        ));
        let read = |p: &Path, ext: &str| std::fs::read(p.with_extension(ext)).unwrap();
        // The JSON summaries echo the worker count, so only data files are compared.
        runs.push([read(&eval, "csv"), read(&eval, "pfm"), read(&eval, "pgm"), read(&sweep, "csv")]);
    }
    assert!(runs[0] == runs[1], "outputs differ between worker counts");
}
