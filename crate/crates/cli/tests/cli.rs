use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn vbfi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vbfi"))
        .args(args)
        .env_remove("VBFI_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = vbfi(args);
    assert!(
        out.status.success(),
        "vbfi {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small synthetic dataset plus trained models in `dir`.
fn small_pipeline(dir: &Path) {
    ok(&["synth", "--users", "40", "--views", "8", "--pool-images", "20", "--out", p(&dir.join("data"))]);
    ok(&["train", "--all-traits", "--data", p(&dir.join("data")), "--out", p(&dir.join("models"))]);
}

fn read_csv(text: &str) -> Vec<BTreeMap<String, String>> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    lines
        .map(|l| header.iter().zip(l.split(',')).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect()
}

#[test]
fn help_lists_flags_and_defaults() {
    let top = ok(&["--help"]);
    let text = String::from_utf8(top.stdout).unwrap();
    for sub in ["synth", "expand-concepts", "train", "evaluate", "sweep", "design", "score", "serve"] {
        assert!(text.contains(sub), "{sub}");
        let out = ok(&[sub, "--help"]);
        let help = String::from_utf8(out.stdout).unwrap();
        assert!(help.contains("--"), "{sub}");
    }
    let train = String::from_utf8(ok(&["train", "--help"]).stdout).unwrap();
    for flag in ["--M <ROUNDS>", "--J <LEAVES>", "--shrinkage", "[default: 5]", "[default: 0.5]", "--all-traits", "--data", "--out"] {
        assert!(train.contains(flag), "{flag}\n{train}");
    }
    let synth = String::from_utf8(ok(&["synth", "--help"]).stdout).unwrap();
    assert!(synth.contains("[default: 42]") && synth.contains("[default: 104]") && synth.contains("[default: 36]"));
}

#[test]
fn usage_errors_exit_1() {
    let out = vbfi(&["train", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(vbfi(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(vbfi(&[]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = vbfi(&["train", "--data", p(dir.path()), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--all-traits"));
    let out = vbfi(&["train", "--all-traits", "--shrinkage", "1.5", "--data", p(dir.path()), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    let out = vbfi(&["synth", "--views", "4", "--informative", "9", "--amplitudes", "1", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = vbfi(&["train", "--all-traits", "--data", p(&dir.path().join("missing")), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("images.jsonl"));
    std::fs::write(dir.path().join("q.json"), "{}").unwrap();
    std::fs::write(dir.path().join("r.jsonl"), "").unwrap();
    let out = vbfi(&["score", "--questionnaire", p(&dir.path().join("q.json")), "--responses", p(&dir.path().join("r.jsonl"))]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_then_train_writes_five_models() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let models = dir.path().join("models");
    ok(&["synth", "--seed", "7", "--users", "104", "--views", "36", "--out", p(&data)]);
    for f in ["images.jsonl", "favorites.csv", "traits.csv", "concepts.txt", "hierarchy.json", "planted.json"] {
        assert!(data.join(f).exists(), "{f}");
    }
    ok(&["train", "--all-traits", "--M", "5", "--J", "5", "--shrinkage", "0.5", "--data", p(&data), "--out", p(&models)]);
    let traits = read_csv(&std::fs::read_to_string(data.join("traits.csv")).unwrap());
    assert_eq!(traits.len(), 104);
    for t in ["O", "C", "E", "A", "N"] {
        let model: Value = serde_json::from_slice(&std::fs::read(models.join(format!("model_{t}.json"))).unwrap()).unwrap();
        assert_eq!(model["version"], 1);
        assert_eq!(model["trait"], t);
        assert_eq!(model["shrinkage"], 0.5);
        assert_eq!(model["views"].as_array().unwrap().len(), 36);
        let rounds = model["rounds"].as_array().unwrap();
        assert_eq!(rounds.len(), 5);
        let mean = traits.iter().map(|r| r[t].parse::<f64>().unwrap()).sum::<f64>() / 104.0;
        assert!((model["F0"].as_f64().unwrap() - mean).abs() < 1e-12);
    }
    let names: Vec<_> = std::fs::read_dir(&models).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 5, "{names:?}");
}

#[test]
fn synth_and_train_are_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    for run in ["a", "b"] {
        let d = dir.path().join(run);
        small_pipeline(&d);
    }
    for f in ["data/images.jsonl", "data/favorites.csv", "data/traits.csv", "models/model_O.json", "models/model_N.json"] {
        assert_eq!(std::fs::read(dir.path().join("a").join(f)).unwrap(), std::fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn evaluate_writes_100_fold_rows_per_trait() {
    let dir = tempfile::tempdir().unwrap();
    small_pipeline(dir.path());
    let folds = dir.path().join("folds.csv");
    let summary = dir.path().join("summary.csv");
    ok(&[
        "evaluate", "--folds", "10", "--repeats", "10", "--data", p(&dir.path().join("data")),
        "--out", p(&folds), "--summary", p(&summary), "--no-single-view",
    ]);
    let text = std::fs::read_to_string(&folds).unwrap();
    assert!(text.starts_with("trait,learner,repeat,fold,rmse\n"));
    let mut per_trait: BTreeMap<String, usize> = BTreeMap::new();
    for line in text.lines().skip(1) {
        *per_trait.entry(line.split(',').next().unwrap().to_string()).or_default() += 1;
    }
    assert_eq!(per_trait.len(), 5);
    assert!(per_trait.values().all(|&n| n == 100), "{per_trait:?}");
    let summary = std::fs::read_to_string(&summary).unwrap();
    assert_eq!(summary.lines().count(), 1 + 10);
}

#[test]
fn sweep_writes_csv_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    small_pipeline(dir.path());
    let plot = dir.path().join("sweep.svg");
    let out = ok(&[
        "sweep", "--param", "J", "--values", "2,3,5,8", "--folds", "5", "--repeats", "1", "--trait", "O",
        "--data", p(&dir.path().join("data")), "--plot", p(&plot),
    ]);
    let rows = read_csv(&String::from_utf8(out.stdout).unwrap());
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.iter().map(|r| r["value"].as_str()).collect::<Vec<_>>(), ["2", "3", "5", "8"]);
    assert!(rows.iter().all(|r| r["param"] == "J" && r["trait"] == "O"));
    assert!(std::fs::read_to_string(plot).unwrap().starts_with("<svg"));
}

#[test]
fn expanded_concepts_keep_training_on_the_listed_views() {
    let dir = tempfile::tempdir().unwrap();
    small_pipeline(dir.path());
    let expanded = dir.path().join("expanded");
    ok(&["expand-concepts", "--data", p(&dir.path().join("data")), "--levels", "2", "--out", p(&expanded)]);
    let first = std::fs::read_to_string(expanded.join("images.jsonl")).unwrap();
    let image: Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    let concepts: Vec<&str> = image["concepts"].as_array().unwrap().iter().map(|c| c.as_str().unwrap()).collect();
    assert!(concepts.contains(&"entity"), "{concepts:?}");
    assert!(concepts.iter().any(|c| c.starts_with("group_")));
    ok(&["train", "--trait", "O", "--data", p(&expanded), "--out", p(&dir.path().join("m2"))]);
    assert_eq!(
        std::fs::read(dir.path().join("m2/model_O.json")).unwrap(),
        std::fs::read(dir.path().join("models/model_O.json")).unwrap()
    );
}

#[test]
fn design_is_deterministic_and_versions_share_leaf_values() {
    let dir = tempfile::tempdir().unwrap();
    small_pipeline(dir.path());
    let (data, models) = (dir.path().join("data"), dir.path().join("models"));
    for (name, choice) in [("a.json", "1"), ("b.json", "1"), ("c.json", "2")] {
        ok(&["design", "--models", p(&models), "--data", p(&data), "--cluster-choice", choice, "--out", p(&dir.path().join(name))]);
    }
    let a = std::fs::read(dir.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.json")).unwrap());
    let qa: Value = serde_json::from_slice(&a).unwrap();
    let qc: Value = serde_json::from_slice(&std::fs::read(dir.path().join("c.json")).unwrap()).unwrap();
    assert_eq!(qa["version_id"], "v1");
    assert_eq!(qc["version_id"], "v2");
    for t in ["O", "C", "E", "A", "N"] {
        assert_eq!(qa["traits"][t]["F0"], qc["traits"][t]["F0"]);
        let (xs, ys) = (qa["traits"][t]["questions"].as_array().unwrap(), qc["traits"][t]["questions"].as_array().unwrap());
        assert_eq!(xs.len(), 5);
        for (x, y) in xs.iter().zip(ys) {
            let leaves = |q: &Value| -> Vec<(Value, Value)> {
                q["options"].as_array().unwrap().iter().map(|o| (o["leaf_index"].clone(), o["leaf_value"].clone())).collect()
            };
            assert_eq!(leaves(x), leaves(y));
        }
    }
}

#[test]
fn zero_leaf_choices_score_f0() {
    let dir = tempfile::tempdir().unwrap();
    small_pipeline(dir.path());
    let q_path = dir.path().join("q.json");
    ok(&["design", "--models", p(&dir.path().join("models")), "--data", p(&dir.path().join("data")), "--out", p(&q_path)]);
    let mut q: Value = serde_json::from_slice(&std::fs::read(&q_path).unwrap()).unwrap();
    let mut choices = Vec::new();
    for (t, section) in q["traits"].as_object_mut().unwrap() {
        for question in section["questions"].as_array_mut().unwrap() {
            for o in question["options"].as_array_mut().unwrap() {
                o["leaf_value"] = 0.0.into();
            }
            choices.push(serde_json::json!({ "trait": t, "round": question["round"], "leaf_index": 1 }));
        }
    }
    let zero = dir.path().join("zero.json");
    std::fs::write(&zero, serde_json::to_vec(&q).unwrap()).unwrap();
    let sheet = serde_json::json!({ "subject_id": "s1", "version_id": "v1", "choices": choices, "self_rating": null });
    let responses = dir.path().join("r.jsonl");
    std::fs::write(&responses, format!("{sheet}\n\n{}\n", sheet.to_string().replace("s1", "s2"))).unwrap();
    let scores = dir.path().join("scores.csv");
    ok(&["score", "--questionnaire", p(&zero), "--responses", p(&responses), "--out", p(&scores)]);
    let rows = read_csv(&std::fs::read_to_string(&scores).unwrap());
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1]["subject_id"], "s2");
    for row in rows {
        assert_eq!(row["version_id"], "v1");
        for t in ["O", "C", "E", "A", "N"] {
            assert_eq!(row[t].parse::<f64>().unwrap(), q["traits"][t]["F0"].as_f64().unwrap(), "{t}");
        }
    }
}

#[test]
fn score_rejects_bad_sheets() {
    let dir = tempfile::tempdir().unwrap();
    small_pipeline(dir.path());
    let q_path = dir.path().join("q.json");
    ok(&["design", "--models", p(&dir.path().join("models")), "--data", p(&dir.path().join("data")), "--out", p(&q_path)]);
    let responses = dir.path().join("r.jsonl");
    for (body, needle) in [
        (r#"{"subject_id":"x","version_id":"other","choices":[]}"#, "version"),
        (r#"{"subject_id":"x","version_id":"v1","choices":[{"trait":"O","round":1,"leaf_index":1}]}"#, "missing choice"),
        ("not json", "line 1"),
    ] {
        std::fs::write(&responses, format!("{body}\n")).unwrap();
        let out = vbfi(&["score", "--questionnaire", p(&q_path), "--responses", p(&responses)]);
        assert_eq!(out.status.code(), Some(2), "{body}");
        assert!(String::from_utf8_lossy(&out.stderr).contains(needle), "{}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn vbfi_log_overrides_the_level() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let loud = ok(&["synth", "--users", "20", "--views", "4", "--pool-images", "0", "--out", p(&data)]);
    assert!(String::from_utf8_lossy(&loud.stderr).contains("INFO"));
    let quiet = Command::new(env!("CARGO_BIN_EXE_vbfi"))
        .args(["synth", "--users", "20", "--views", "4", "--pool-images", "0", "--out", p(&data)])
        .env("VBFI_LOG", "error")
        .output()
        .unwrap();
    assert!(quiet.status.success());
    assert!(quiet.stderr.is_empty(), "{}", String::from_utf8_lossy(&quiet.stderr));
}

#[test]
fn serve_rejects_missing_questionnaire() {
    let dir = tempfile::tempdir().unwrap();
    let out = vbfi(&["serve", "--questionnaire", p(&dir.path().join("none.json")), "--port", "0"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(vbfi(&["serve"]).status.code(), Some(1));
}
