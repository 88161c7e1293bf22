use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn svlvgp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_svlvgp"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = svlvgp(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn path(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn column(table: &[Vec<String>], name: &str) -> Vec<f64> {
    let c = table[0].iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    table[1..].iter().map(|r| r[c].parse().unwrap()).collect()
}

/// Small single-output grid (125 rows) and a short SV fit on it.
fn small_model(dir: &TempDir, seed: &str) -> (PathBuf, PathBuf) {
    let data = path(dir, "small.csv");
    if !data.exists() {
        ok(&["gen-single", "--grid", "5x5x5", "--out", s(&data)]);
    }
    let model = path(dir, &format!("model-{seed}.json"));
    ok(&[
        "train", "--model", "sv-lvgp", "--inducing", "15", "--batch", "50", "--max-iters", "300", "--window", "0",
        "--seed", seed, "--data", s(&data), "--out", s(&model),
    ]);
    (data, model)
}

#[test]
fn gen_single_writes_full_grid() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "d.csv");
    ok(&["gen-single", "--grid", "20x20x5", "--noise-sd", "0", "--seed", "7", "--out", s(&out)]);
    let text = read(&out);
    let table = rows(&text);
    assert_eq!(table[0], ["x_1", "x_2", "t_1", "y_1"]);
    assert_eq!(table.len() - 1, 2000);
}

#[test]
fn gen_multi_writes_two_outputs() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "m.csv");
    ok(&["gen-multi", "--grid", "3x2x5x5", "--noise-sd", "0.1,0.2", "--seed", "1", "--out", s(&out)]);
    let table = rows(&read(&out));
    assert_eq!(table[0], ["x_1", "x_2", "t_1", "t_2", "y_1", "y_2"]);
    assert_eq!(table.len() - 1, 150);
}

#[test]
fn train_predict_pipeline() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "d.csv");
    ok(&["gen-single", "--grid", "8x8x5", "--seed", "7", "--out", s(&data)]);
    let model = path(&dir, "m.json");
    let trace = path(&dir, "trace.csv");
    ok(&[
        "train", "--model", "sv-lvgp", "--inducing", "30", "--max-iters", "3000", "--data", s(&data), "--out",
        s(&model), "--trace", s(&trace),
    ]);
    let pred = ok(&["predict", "--model", s(&model), "--queries", s(&data)]);
    let table = rows(&String::from_utf8(pred.stdout).unwrap());
    assert_eq!(table[0], ["x_1", "x_2", "t_1", "mean_1", "var_1"]);
    let truth = rows(&read(&data));
    let (mean, var, y) = (column(&table, "mean_1"), column(&table, "var_1"), column(&truth, "y_1"));
    assert_eq!(mean.len(), 320);
    assert!(var.iter().all(|v| *v > 0.0 && v.is_finite()));
    let rmse = (mean.iter().zip(&y).map(|(m, y)| (m - y).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
    assert!(rmse < 2.0, "training RMSE {rmse} on a response spanning about 40");

    let trace_rows = rows(&read(&trace));
    assert_eq!(trace_rows[0], ["iteration", "elbo", "kl", "lt"]);
    let exported = path(&dir, "trace2.csv");
    ok(&["trace-export", "--model", s(&model), "--out", s(&exported)]);
    assert_eq!(read(&exported), read(&trace));

    let latent = path(&dir, "latent.csv");
    ok(&["latent-export", "--model", s(&model), "--out", s(&latent)]);
    let lt = rows(&read(&latent));
    assert_eq!(lt[0], ["variable", "level", "label", "copy", "z_1", "z_2"]);
    assert_eq!(lt.len() - 1, 5);
    // canonical form: first level at the origin, second on the positive first axis
    assert_eq!(column(&lt, "z_1")[0], 0.0);
    assert_eq!(column(&lt, "z_2")[0], 0.0);
    assert_eq!(column(&lt, "z_2")[1], 0.0);
    assert!(column(&lt, "z_1")[1] > 0.0);

    let rt = ok(&["roundtrip", "--model", s(&model)]);
    assert!(String::from_utf8(rt.stdout).unwrap().starts_with("PASS sv"));
}

#[test]
fn defaults_follow_training_protocol() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "d.csv");
    ok(&["gen-single", "--grid", "5x5x5", "--out", s(&data)]);
    let model = path(&dir, "m.json");
    ok(&["train", "--model", "sv-lvgp", "--inducing", "10", "--data", s(&data), "--out", s(&model)]);
    let art: serde_json::Value = serde_json::from_str(&read(&model)).unwrap();
    assert_eq!(art["family"], "sv");
    assert_eq!(art["config"]["n_inducing"], 10);
    assert_eq!(art["config"]["train"]["batch_size"], 100);
    assert_eq!(art["config"]["train"]["max_iters"], 20000);
}

#[test]
fn flags_override_config_file() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "d.csv");
    ok(&["gen-single", "--grid", "4x4x5", "--out", s(&data)]);
    let config = path(&dir, "c.json");
    std::fs::write(&config, r#"{"n_inducing": 8, "train": {"batch_size": 40, "max_iters": 500, "window": 0}}"#).unwrap();
    let model = path(&dir, "m.json");
    ok(&[
        "train", "--model", "sv-lvgp", "--config", s(&config), "--max-iters", "120", "--data", s(&data), "--out",
        s(&model),
    ]);
    let art: serde_json::Value = serde_json::from_str(&read(&model)).unwrap();
    assert_eq!(art["config"]["n_inducing"], 8);
    assert_eq!(art["config"]["train"]["batch_size"], 40);
    assert_eq!(art["config"]["train"]["max_iters"], 120);
    assert_eq!(art["trace"]["records"].as_array().unwrap().len(), 120);

    std::fs::write(&config, r#"{"n_inducing": 8, "bogus": 1}"#).unwrap();
    let out = svlvgp(&["train", "--model", "sv-lvgp", "--config", s(&config), "--data", s(&data), "--out", s(&model)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupted_sigma_factor_is_rejected() {
    let dir = TempDir::new().unwrap();
    let (data, model) = small_model(&dir, "3");
    let mut art: serde_json::Value = serde_json::from_str(&read(&model)).unwrap();
    art["state"]["sv"]["variational"]["sigma_lower"][2][2] = serde_json::json!(-0.5);
    let bad = path(&dir, "bad.json");
    std::fs::write(&bad, serde_json::to_string_pretty(&art).unwrap()).unwrap();
    for args in [
        vec!["roundtrip", "--model", s(&bad)],
        vec!["predict", "--model", s(&bad), "--queries", s(&data)],
    ] {
        let out = svlvgp(&args);
        assert_eq!(out.status.code(), Some(3));
        let err = String::from_utf8(out.stderr).unwrap();
        assert!(err.starts_with("error[INVARIANT_VIOLATION]:"), "{err}");
        assert!(err.contains("diagonal entry 2"), "{err}");
        assert_eq!(err.trim_end().lines().count(), 1);
    }
}

#[test]
fn unknown_artifact_fields_and_versions_are_rejected() {
    let dir = TempDir::new().unwrap();
    let (_, model) = small_model(&dir, "4");
    let mut art: serde_json::Value = serde_json::from_str(&read(&model)).unwrap();
    art["format_version"] = serde_json::json!(99);
    let bad = path(&dir, "v99.json");
    std::fs::write(&bad, art.to_string()).unwrap();
    let out = svlvgp(&["roundtrip", "--model", s(&bad)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr).unwrap().starts_with("error[UNSUPPORTED_VERSION]"));

    let mut art: serde_json::Value = serde_json::from_str(&read(&model)).unwrap();
    art["extra"] = serde_json::json!(true);
    std::fs::write(&bad, art.to_string()).unwrap();
    let out = svlvgp(&["roundtrip", "--model", s(&bad)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr).unwrap().contains("extra"));
}

#[test]
fn malformed_csv_reports_row_and_column() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "bad.csv");
    std::fs::write(&data, "x_1,x_2,t_1,y_1\n0.1,0.2,1,3.0\n0.3,oops,2,1.0\n").unwrap();
    let out = svlvgp(&["train", "--model", "sv-lvgp", "--data", s(&data), "--out", s(&path(&dir, "m.json"))]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    assert!(err.starts_with("error[DATA]:"), "{err}");
    assert!(err.contains("row 2") && err.contains("column x_2"), "{err}");
    assert!(!path(&dir, "m.json").exists());
}

#[test]
fn usage_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = path(&dir, "d.csv");
    for args in [
        vec!["gen-single", "--grid", "20x20x4", "--out", s(&out)],
        vec!["gen-single", "--grid", "big", "--out", s(&out)],
        vec!["train", "--model", "random-forest", "--data", s(&out), "--out", s(&out)],
        vec!["frobnicate"],
        vec![],
    ] {
        let res = svlvgp(&args);
        assert_eq!(res.status.code(), Some(2), "{args:?}");
        let err = String::from_utf8(res.stderr).unwrap();
        assert!(err.starts_with("error[USAGE]:"), "{args:?}: {err}");
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
    }
    let res = Command::new(env!("CARGO_BIN_EXE_svlvgp"))
        .args(["gen-single", "--grid", "2x2", "--out", s(&out)])
        .env("SVLVGP_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let run = |tag: &str, seed: &str| {
        let data = path(&dir, &format!("d-{tag}.csv"));
        ok(&["gen-single", "--grid", "5x5x5", "--noise-sd", "0.3", "--seed", "11", "--out", s(&data)]);
        let model = path(&dir, &format!("m-{tag}.json"));
        let trace = path(&dir, &format!("t-{tag}.csv"));
        ok(&[
            "train", "--model", "sv-lvgp", "--inducing", "12", "--batch", "40", "--max-iters", "200", "--seed", seed,
            "--data", s(&data), "--out", s(&model), "--trace", s(&trace),
        ]);
        let pred = path(&dir, &format!("p-{tag}.csv"));
        ok(&["predict", "--model", s(&model), "--queries", s(&data), "--out", s(&pred)]);
        let cv = path(&dir, &format!("cv-{tag}.csv"));
        ok(&[
            "cv", "--model", "sv-lvgp", "--inducing", "8", "--batch", "40", "--max-iters", "60", "--folds", "3",
            "--seed", seed, "--data", s(&data), "--out", s(&cv),
        ]);
        let summary = PathBuf::from(format!("{}.json", cv.display()));
        [data, model, trace, pred, cv, summary].map(|p| std::fs::read(p).unwrap())
    };
    let a = run("a", "5");
    let b = run("b", "5");
    let names = ["dataset", "artifact", "trace", "predictions", "cv", "cv summary"];
    for i in 0..a.len() {
        assert!(a[i] == b[i], "{} differs between identical runs", names[i]);
    }
    let c = run("c", "6");
    assert!(a[3] != c[3], "predictions do not depend on the seed");

    let summary: serde_json::Value = serde_json::from_slice(&a[5]).unwrap();
    assert_eq!(summary["config"]["train"]["max_iters"], 60);
    assert_eq!(summary["folds"], 3);
    let cv = rows(std::str::from_utf8(&a[4]).unwrap());
    assert_eq!(cv[0], ["fold", "output", "rmse", "n_train", "n_test", "error"]);
    assert_eq!(cv.len() - 1, 3);
}

#[test]
fn multi_output_and_exact_families_train() {
    let dir = TempDir::new().unwrap();
    let data = path(&dir, "m.csv");
    ok(&["gen-multi", "--grid", "3x3x5x5", "--out", s(&data)]);
    for family in ["lmc-sv-lvgp-s", "lmc-sv-lvgp-i"] {
        let model = path(&dir, &format!("{family}.json"));
        ok(&[
            "train", "--model", family, "--inducing", "12", "--batch", "60", "--max-iters", "60", "--data", s(&data),
            "--out", s(&model),
        ]);
        let pred = ok(&["predict", "--model", s(&model), "--queries", s(&data)]);
        let table = rows(&String::from_utf8(pred.stdout).unwrap());
        assert_eq!(table[0][4..], ["mean_1", "var_1", "mean_2", "var_2"]);
        ok(&["roundtrip", "--model", s(&model)]);
        let latent = ok(&["latent-export", "--model", s(&model)]);
        let copies = if family.ends_with('s') { 1 } else { 2 };
        assert_eq!(rows(&String::from_utf8(latent.stdout).unwrap()).len() - 1, 10 * copies);
    }

    let single = path(&dir, "s.csv");
    ok(&["gen-single", "--grid", "3x3x5", "--out", s(&single)]);
    let model = path(&dir, "exact.json");
    ok(&[
        "train", "--model", "exact-lvgp", "--max-iters", "100", "--restarts", "2", "--data", s(&single), "--out",
        s(&model),
    ]);
    ok(&["roundtrip", "--model", s(&model)]);
    // the artifact alone serves predictions after the training file is gone
    let queries = path(&dir, "q.csv");
    std::fs::write(&queries, "x_1,x_2,t_1\n0.25,0.75,3\n").unwrap();
    std::fs::remove_file(&single).unwrap();
    let pred = ok(&["predict", "--model", s(&model), "--queries", s(&queries)]);
    assert_eq!(rows(&String::from_utf8(pred.stdout).unwrap()).len(), 2);
}
