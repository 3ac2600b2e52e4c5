use std::path::Path;
use std::process::{Command, Output};

use ivstream_cli::{RunManifest, CSV_HEADER};

fn ivstream(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ivstream"));
    cmd.args(args).env_remove("IVSTREAM_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn minimal_config_writes_one_trial() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "tiny.toml", "trials = 1\nT = 10\n");
    let out = dir.path().join("out");
    let o = ivstream(&["run", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", stderr(&o));

    let csv = read(&out.join("series.csv"));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(CSV_HEADER));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // ten log-spaced checkpoints over [1, 10], three metrics each
    assert_eq!(rows.len(), 30);
    assert!(rows.iter().all(|r| r[0] == "tiny" && r[1] == "otsg" && r[2] == "0"));

    let m = RunManifest::read(&out.join("manifest.json")).unwrap();
    assert_eq!(m.experiments.len(), 1);
    assert_eq!(m.experiments[0].spec.trials, 1);
    assert_eq!(m.experiments[0].spec.iters, 10);
    assert_eq!(m.csv_path, out.join("series.csv"));
    assert_eq!(std::fs::read_dir(&out).unwrap().count(), 2);
}

#[test]
fn manifest_file_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "m.toml", "trials = 2\nT = 50\nalgorithm = \"o2sls\"\n[dgp]\nd_x = 2\nd_z = 3\n");
    let out = dir.path().join("out");
    assert!(ivstream(&["run", &cfg, "--out", out.to_str().unwrap()], &[]).status.success());
    let text = read(&out.join("manifest.json"));
    let m = RunManifest::from_json(&text).unwrap();
    assert_eq!(m.to_json().unwrap(), text);
}

#[test]
fn invalid_configs_fail_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cases = [
        ("unknown.toml", "bogus = 3\n", "bogus"),
        ("dims.toml", "[dgp]\nd_x = 4\nd_z = 2\n", "d_z"),
        ("trials.toml", "trials = 0\n", "trials"),
    ];
    for (name, text, needle) in cases {
        let cfg = write(dir.path(), name, text);
        let o = ivstream(&["run", &cfg, "--out", out.to_str().unwrap()], &[]);
        assert!(!o.status.success(), "{name}");
        assert!(stderr(&o).contains(needle), "{name}: {}", stderr(&o));
    }
    let o = ivstream(&["run", "/nonexistent/cfg.toml", "--out", out.to_str().unwrap()], &[]);
    assert!(!o.status.success());
    assert!(!out.exists());
}

#[test]
fn compare_pairs_streams() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "cmp.toml",
        "algorithms = [\"otsg\", \"cso\", \"o2sls\"]\ntrials = 3\nT = 200\nseed = 4\n[dgp]\nd_x = 2\nd_z = 4\n",
    );
    let out = dir.path().join("out");
    let o = ivstream(&["run", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("compare"));

    let o = ivstream(&["compare", &cfg, "--out", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", stderr(&o));
    let joined = RunManifest::read(&out.join("manifest.json")).unwrap();
    assert_eq!(joined.experiments.len(), 3);
    let hashes = &joined.experiments[0].stream_hashes;
    assert_eq!(hashes.len(), 3);
    assert!(joined.experiments.iter().all(|e| &e.stream_hashes == hashes));

    let mut per_alg_rows = 0;
    for alg in ["otsg", "cso", "o2sls"] {
        let csv = read(&out.join(format!("series_{alg}.csv")));
        assert!(csv.lines().skip(1).all(|l| l.split(',').nth(1) == Some(alg)));
        per_alg_rows += csv.lines().count() - 1;
        let m = RunManifest::read(&out.join(format!("manifest_{alg}.json"))).unwrap();
        assert_eq!(m.experiments.len(), 1);
        assert_eq!(&m.experiments[0].stream_hashes, hashes);
    }
    assert_eq!(read(&out.join("series.csv")).lines().count() - 1, per_alg_rows);
}

#[test]
fn single_algorithm_compare_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "one.toml", "algorithms = [\"cso\"]\ntrials = 2\nT = 100\n");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(ivstream(&["run", &cfg, "--out", a.to_str().unwrap()], &[]).status.success());
    assert!(ivstream(&["compare", &cfg, "--out", b.to_str().unwrap()], &[]).status.success());
    assert_eq!(read(&a.join("series.csv")), read(&b.join("series.csv")));
    assert_eq!(std::fs::read_dir(&b).unwrap().count(), 2);
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "o.toml", "seed = 1\ntrials = 5\nT = 1000\n");
    let out = dir.path().join("out");
    let o = ivstream(
        &["run", &cfg, "--out", out.to_str().unwrap(), "--seed", "8", "--trials", "2", "--iters", "30"],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let spec = &RunManifest::read(&out.join("manifest.json")).unwrap().experiments[0].spec;
    assert_eq!((spec.base_seed, spec.trials, spec.iters), (8, 2, 30));
}

#[test]
fn thread_count_does_not_change_csv() {
    let dir = tempfile::tempdir().unwrap();
    let run = |threads: &str, name: &str| {
        let out = dir.path().join(name);
        let o = ivstream(
            &["run", "--preset", "fig2", "--cell", "dx8_dz16_rho4_sig1", "--out", out.to_str().unwrap(), "--trials", "5", "--iters", "2000"],
            &[("IVSTREAM_THREADS", threads)],
        );
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(out.join("series.csv")).unwrap()
    };
    assert_eq!(run("1", "one"), run("3", "three"));

    let o = ivstream(
        &["run", "--preset", "fig3", "--out", dir.path().join("bad").to_str().unwrap()],
        &[("IVSTREAM_THREADS", "zero")],
    );
    assert!(!o.status.success());
    assert!(stderr(&o).contains("IVSTREAM_THREADS"));
}

#[test]
fn preset_cells() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = ivstream(
        &["run", "--preset", "fig1", "--cell", "dx4_dz8_c0.1_phi_id", "--out", out.to_str().unwrap(), "--trials", "2", "--iters", "100"],
        &[],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let m = RunManifest::read(&out.join("manifest.json")).unwrap();
    assert_eq!(m.experiments.len(), 1);
    assert_eq!(m.experiments[0].spec.experiment_id, "fig1_dx4_dz8_c0.1_phi_id");

    let o = ivstream(&["run", "--preset", "fig1", "--cell", "nope", "--out", out.to_str().unwrap()], &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("dx4_dz8_c0.1_phi_id"));

    let o = ivstream(&["presets"], &[]);
    let listing = String::from_utf8(o.stdout).unwrap();
    assert_eq!(listing.lines().count(), 17);
    assert!(listing.contains("fig3 default"));
}

#[test]
fn check_passes_by_default_and_catches_corruption() {
    let o = ivstream(&["check"], &[]);
    let text = String::from_utf8_lossy(&o.stdout).into_owned();
    assert!(o.status.success(), "{text}{}", stderr(&o));
    for name in ["gradient", "sherman_morrison", "determinism"] {
        assert!(text.lines().any(|l| l.starts_with(name) && l.ends_with("ok")), "{text}");
    }

    let o = ivstream(&["check", "--corrupt-u0"], &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("`sherman_morrison` failed"), "{}", stderr(&o));
}

#[test]
fn check_reads_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.toml",
        "algorithm = \"tosg\"\nT = 500\n[dgp]\nfamily = \"fig1\"\nd_x = 2\nd_z = 4\n[check]\ngradient_draws = 200000\nsm_updates = 300\n",
    );
    let o = ivstream(&["check", &cfg], &[]);
    assert!(o.status.success(), "{}{}", String::from_utf8_lossy(&o.stdout), stderr(&o));
}
