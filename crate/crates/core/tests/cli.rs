use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn steering(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_steering")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Data rows (header comments stripped) split into fields.
fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn field(rows: &[Vec<String>], row: usize, name: &str) -> f64 {
    let col = rows[0].iter().position(|c| c == name).unwrap_or_else(|| panic!("no column {name}"));
    rows[row][col].parse().unwrap()
}

#[test]
fn optimize_octahedral_one_bit() {
    let out = steering(&["optimize", "--octahedral", "--d", "2", "--eta", "0.8"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.starts_with("# steering "));
    assert!(text.contains("# seed:") && text.contains("# config:"));
    let rows = rows(&text);
    assert!((field(&rows, 1, "r") - (2f64.sqrt() - 1.0)).abs() < 1e-9);
    assert!((field(&rows, 1, "h") - (4.0 - 2.0 * 2f64.sqrt()) / 3.0).abs() < 1e-9);
}

#[test]
fn ftl_speed_for_the_experimental_geometry() {
    let out = steering(&["ftl", "--distance", "161.3", "--time", "230e-9"]);
    assert!(out.status.success());
    let rows = rows(&stdout(&out));
    let over_c: f64 = rows[1].iter().filter_map(|f| f.parse::<f64>().ok()).find(|v| (2.0..3.0).contains(v)).unwrap();
    assert!((over_c - 2.3393).abs() < 1e-3, "{rows:?}");
}

#[test]
fn simulate_is_deterministic_and_analyzable() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let out = steering(&[
            "simulate",
            "--preset",
            "measured",
            "--mu",
            "0.99",
            "--trials-per-pair",
            "20000",
            "--matched",
            "--seed",
            "7",
            "-o",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let out = steering(&["analyze", "--counts", a.to_str().unwrap(), "--ratios", "1,1,1", "--r", "0.4", "--h", "0.25"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = rows(&stdout(&out));
    let residual = field(&rows, rows.len() - 1, "residual");
    assert!((residual - (0.748 * (0.99 - 0.4) - 0.25)).abs() < 0.02, "{residual}");
}

#[test]
fn bad_arguments_exit_with_code_2_and_a_json_line() {
    let out = steering(&["optimize", "--d", "3", "--eta", "0.8"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    let line = err.lines().last().unwrap();
    let json: serde_json::Value = serde_json::from_str(line).unwrap();
    assert_eq!(json["error"], "invalid-argument");
    assert_eq!(json["exit"], 2);

    let out = steering(&["optimize", "--eta", "1.5"]);
    assert_eq!(out.status.code(), Some(2));
    let out = steering(&["analyze", "--counts", "/nonexistent/counts.csv", "--ratios", "1,1,1"]);
    assert_eq!(out.status.code(), Some(2));
}

fn write_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let path = dir.join("campaign.toml");
    let text = format!(
        "output_dir = '{}'\nseed = 3\nd = [1, 2]\n\n[measurement]\npreset = 'measured'\nconservative = true\n{extra}",
        dir.join("out").display()
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn campaign_writes_every_product() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "\n[eta_grid]\nmin = 0.5\nmax = 1.0\nsteps = 6\n\n[simulation]\nmu = 0.99\ntrials_per_pair = 200000\n",
    );
    let out = steering(&["campaign", "--config", config.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let root = dir.path().join("out");
    for name in ["measurement.csv", "conservative_d1.csv", "conservative_d2.csv", "curve.csv", "optimum.csv", "counts.csv", "analysis.csv"] {
        let text = fs::read_to_string(root.join(name)).unwrap_or_else(|_| panic!("missing {name}"));
        assert!(text.starts_with("# steering "), "{name} lacks the header");
        assert!(text.contains("# seed: 3"), "{name} lacks the seed");
    }
    let optimum = rows(&fs::read_to_string(root.join("optimum.csv")).unwrap());
    assert!((field(&optimum, 1, "r") - 0.4046).abs() < 1e-3);
    assert!((field(&optimum, 2, "r") - 0.5930).abs() < 1e-3);
    let curve = rows(&fs::read_to_string(root.join("curve.csv")).unwrap());
    assert_eq!(curve.len(), 1 + 2 * 6);
}

#[test]
fn campaign_rejects_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "wavelength = 710\n");
    let out = steering(&["campaign", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn thread_count_from_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_steering"))
        .env("STEERING_THREADS", "2")
        .args(["bounds", "--preset", "worst-one-bit", "--d", "2", "--r", "0.593"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = rows(&stdout(&out));
    assert!((field(&rows, 1, "h") - 0.2713).abs() < 1e-3);
}
