mod common;

use common::{exit_code, ok, quick_config, read_json};

#[test]
fn missing_tag_counts_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = exit_code(&["fold-split", "--preset", "toy", "--out", "o"], dir.path());
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("tag_counts"), "{err}");
}

#[test]
fn unknown_preset_and_bad_keys_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(exit_code(&["synth", "--preset", "nope"], dir.path()).0, 2);
    std::fs::write(dir.path().join("bad.toml"), "[pretrain]\nepochz = 3\n").unwrap();
    assert_eq!(exit_code(&["synth", "--config", "bad.toml"], dir.path()).0, 2);
}

#[test]
fn fold_out_of_range_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    quick_config(d, "");
    ok(&["synth", "--config", "exp.toml", "--out", "."], d);
    let written = ok(&["fold-split", "--config", "exp.toml", "--out", "."], d);
    assert!(written[0].ends_with("folds.json"));
    let split = read_json(&d.join("folds.json"));
    assert_eq!(split["folds"].as_array().unwrap().len(), 4);
    assert!(split["provenance"]["config"].is_object());

    let fold = |k: usize| format!("[paths]\nfold_split = \"folds.json\"\n[classes]\nmode = \"fold\"\nfold = {k}\n");
    quick_config(d, &fold(9));
    let (code, err) = exit_code(&["pretrain", "--config", "exp.toml", "--out", "."], d);
    assert_eq!(code, 2, "{err}");
    quick_config(d, &fold(3));
    ok(&["pretrain", "--config", "exp.toml", "--out", "."], d);
    let report = read_json(&d.join("pretrain-s0.json"));
    let test = &split["folds"][3]["classes"];
    assert_eq!(report["hidden_classes"].as_array().unwrap().len(), test.as_array().unwrap().len());
}

#[test]
fn resume_continues_the_epoch_count() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    quick_config(d, "");
    ok(&["synth", "--config", "exp.toml", "--out", "."], d);
    let one = "[pretrain]\nepochs = 1\nwarmup_epochs = 0.0\ndecay_start_epoch = 1.0\ndecay_end_epoch = 2.0\n";
    std::fs::write(d.join("one.toml"), std::fs::read_to_string(d.join("exp.toml")).unwrap().replace(
        "[pretrain]\nepochs = 2\nwarmup_epochs = 0.0\ndecay_start_epoch = 1.0\ndecay_end_epoch = 2.0\n",
        one,
    ))
    .unwrap();
    ok(&["pretrain", "--config", "one.toml", "--out", "."], d);
    assert_eq!(read_json(&d.join("pretrain-s0.json"))["epochs_completed"], 1);
    ok(&["pretrain", "--config", "exp.toml", "--out", ".", "--resume"], d);
    let report = read_json(&d.join("pretrain-s0.json"));
    assert_eq!(report["epochs_completed"], 2);
    let epochs: Vec<u64> = report["history"].as_array().unwrap().iter().map(|h| h["epoch"].as_u64().unwrap()).collect();
    assert_eq!(epochs, vec![1, 2]);

    // a different training set cannot resume the same checkpoint
    std::fs::write(
        d.join("other.toml"),
        std::fs::read_to_string(d.join("exp.toml")).unwrap().replace(
            "seeds = [0]\n",
            "seeds = [0]\n[classes]\nmode = \"explicit\"\nfold = 0\ntrain = [\"c00\", \"c02\"]\ntest = [\"c01\"]\n",
        ),
    )
    .unwrap();
    let (code, err) = exit_code(&["pretrain", "--config", "other.toml", "--out", ".", "--resume"], d);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn three_seeds_then_mismatched_vectors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    quick_config(d, "");
    ok(&["synth", "--config", "exp.toml", "--out", "."], d);
    let three = std::fs::read_to_string(d.join("exp.toml")).unwrap().replace("seeds = [0]", "seeds = [0, 1, 2]");
    std::fs::write(d.join("three.toml"), three).unwrap();
    assert_eq!(ok(&["pretrain", "--config", "three.toml", "--out", "."], d).len(), 3);
    assert_eq!(ok(&["train-projection", "--config", "three.toml", "--out", "."], d).len(), 3);
    for s in 0..3 {
        assert!(d.join(format!("backbone-s{s}.zsck")).exists());
        assert!(d.join(format!("projection-s{s}.zsck")).exists());
        assert!(d.join(format!("selection-s{s}.json")).exists());
    }
    let summary = read_json(&d.join("projection-summary.json"));
    assert_eq!(summary["runs"].as_array().unwrap().len(), 3);
    assert!(summary["mean_best_val_map"].as_f64().unwrap() > 0.0);

    ok(&["evaluate", "--config", "three.toml", "--out", "."], d);
    let report = read_json(&d.join("eval-tagging.json"));
    assert_eq!(report["runs"].as_array().unwrap().len(), 3);
    assert!(report["provenance"]["version"].as_str().unwrap().ends_with(env!("CARGO_PKG_VERSION")));
    assert!(std::fs::read_to_string(d.join("eval-tagging.txt")).unwrap().contains("random baseline"));

    // word vectors of another dimension no longer fit the projection
    let vectors = std::fs::read_to_string(d.join("vectors.txt")).unwrap();
    let mut lines = vectors.lines();
    let header = lines.next().unwrap();
    let n: usize = header.split_whitespace().next().unwrap().parse().unwrap();
    let mut short = format!("{n} 3\n");
    for l in lines {
        let f: Vec<&str> = l.split_whitespace().collect();
        short.push_str(&format!("{} {} {} {}\n", f[0], f[1], f[2], f[3]));
    }
    std::fs::write(d.join("short.txt"), short).unwrap();
    let bad = std::fs::read_to_string(d.join("three.toml")).unwrap()
        + "[paths]\nword_vectors = \"short.txt\"\n";
    std::fs::write(d.join("bad.toml"), bad).unwrap();
    let (code, err) = exit_code(&["evaluate", "--config", "bad.toml", "--out", "."], d);
    assert_eq!(code, 2, "{err}");
}

#[test]
fn classification_with_a_category_map() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("categories.json"),
        r#"{"low": ["c01", "c04"], "high": ["c07", "pitch05 clean"]}"#,
    )
    .unwrap();
    quick_config(
        d,
        "[evaluate]\ntask = \"classification\"\nsplit = \"test\"\n[paths]\ncategory_map = \"categories.json\"\n",
    );
    ok(&["synth", "--config", "exp.toml", "--out", "."], d);
    ok(&["pretrain", "--config", "exp.toml", "--out", "."], d);
    ok(&["train-projection", "--config", "exp.toml", "--out", "."], d);
    ok(&["evaluate", "--config", "exp.toml", "--out", "."], d);
    let report = read_json(&d.join("eval-classification.json"));
    let run = &report["runs"][0];
    let acc = run["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    for cat in ["low", "high"] {
        let a = run["category_accuracy"][cat].as_f64().unwrap();
        // two candidates per category
        assert!(a >= 0.0 && a <= 1.0);
    }
    assert_eq!(report["random_baseline"], 0.25);
    let table = std::fs::read_to_string(d.join("eval-classification.txt")).unwrap();
    assert!(table.contains("chance") && table.contains("low"));
}

#[test]
fn unknown_category_member_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("categories.json"), r#"{"x": ["c00"]}"#).unwrap();
    quick_config(
        d,
        "[evaluate]\ntask = \"classification\"\nsplit = \"test\"\n[paths]\ncategory_map = \"categories.json\"\n",
    );
    ok(&["synth", "--config", "exp.toml", "--out", "."], d);
    ok(&["pretrain", "--config", "exp.toml", "--out", "."], d);
    ok(&["train-projection", "--config", "exp.toml", "--out", "."], d);
    let (code, err) = exit_code(&["evaluate", "--config", "exp.toml", "--out", "."], d);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("c00"), "{err}");
}
