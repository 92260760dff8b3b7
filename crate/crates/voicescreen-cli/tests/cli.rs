//! End-to-end checks of the command-line contract: exit codes, the
//! evaluation report against hand-computed metrics, and pipeline
//! composability from synthesis through evaluation.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_voicescreen"))
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

#[test]
fn unknown_subcommand_exits_64_with_usage() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(64));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Usage"), "stderr should carry usage text: {stderr}");
}

#[test]
fn validation_errors_exit_1_and_runtime_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    // Unknown stage name: rejected before any work happens.
    let out = bin()
        .args(["train", "--stage", "nope", "--corpus", "/x", "--out"])
        .arg(dir.path().join("o"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // Missing checkpoint file: an i/o failure at runtime.
    let out = bin()
        .args(["score", "--ckpt"])
        .arg(dir.path().join("missing.ckpt"))
        .arg("--corpus")
        .arg(dir.path())
        .arg("--out")
        .arg(dir.path().join("s.jsonl"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let out = bin().arg("--help").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn eval_report_matches_hand_computed_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("scores.jsonl");
    // Four rows chosen so depression separates perfectly at both cutoffs
    // while anxiety's severe cutoff has one inversion (0.8 on a negative).
    write(
        &scores,
        concat!(
            r#"{"recording_id":"a","voice_id":"va","score_dep":0.1,"score_anx":0.2,"phq9":5,"gad7":4}"#,
            "\n",
            r#"{"recording_id":"b","voice_id":"vb","score_dep":0.4,"score_anx":0.3,"phq9":12,"gad7":7}"#,
            "\n",
            r#"{"recording_id":"c","voice_id":"vc","score_dep":0.6,"score_anx":0.8,"phq9":16,"gad7":12}"#,
            "\n",
            r#"{"recording_id":"d","voice_id":"vd","score_dep":0.9,"score_anx":0.7,"phq9":20,"gad7":16}"#,
            "\n",
        ),
    );
    let report_path = dir.path().join("report.json");
    let out = bin()
        .arg("eval")
        .arg("--scores")
        .arg(&scores)
        .arg("--out")
        .arg(&report_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();

    let close = |v: &serde_json::Value, want: f64| {
        let got = v.as_f64().unwrap();
        assert!((got - want).abs() < 1e-9, "got {got}, want {want}");
    };

    // Depression: cutoff 10 splits {0.1} vs {0.4, 0.6, 0.9} → threshold at
    // the midpoint 0.25, Sn = Sp = 1, AUC 1; cutoff 15 splits at 0.5.
    let dep = &report["tasks"][0];
    assert_eq!(dep["task"], "depression");
    let p = &dep["problems"];
    close(&p[0]["threshold"], 0.25);
    close(&p[0]["sensitivity"], 1.0);
    close(&p[0]["specificity"], 1.0);
    close(&p[0]["sn_eq_sp"], 100.0);
    close(&p[0]["auc"], 1.0);
    close(&p[1]["threshold"], 0.5);
    close(&p[1]["sn_eq_sp"], 100.0);
    close(&dep["mean_sn_eq_sp"], 100.0);
    close(&dep["mean_auc"], 1.0);

    // Anxiety cutoff 15: only 0.7 is positive but 0.8 outranks it.
    // AUC = 2 correct pairs / 3. Best threshold 0.5 gives Sn 1, Sp 2/3.
    let anx = &report["tasks"][1];
    assert_eq!(anx["task"], "anxiety");
    let p = &anx["problems"];
    close(&p[0]["threshold"], 0.25);
    close(&p[0]["auc"], 1.0);
    close(&p[1]["threshold"], 0.5);
    close(&p[1]["auc"], 1.0);
    close(&p[2]["threshold"], 0.5);
    close(&p[2]["sensitivity"], 1.0);
    close(&p[2]["specificity"], 2.0 / 3.0);
    close(&p[2]["sn_eq_sp"], 100.0 * 2.0 / 3.0);
    close(&p[2]["auc"], 2.0 / 3.0);
    close(&anx["mean_sn_eq_sp"], (100.0 + 100.0 + 200.0 / 3.0) / 3.0);
    close(&anx["mean_auc"], (1.0 + 1.0 + 2.0 / 3.0) / 3.0);

    // Correlations, from the definitions. Scores: dep [.1 .4 .6 .9] vs
    // anx [.2 .3 .8 .7]: covariance 0.25/4, variances 0.34/4 and 0.26/4.
    let c = &report["correlations"];
    close(&c["score_score"]["pearson"], 0.25 / (0.34f64 * 0.26).sqrt());
    // Rank vectors [1 2 3 4] vs [1 2 4 3]: one swapped adjacent pair.
    close(&c["score_score"]["spearman"], 0.8);
    close(&c["score_score"]["kendall"], 2.0 / 3.0);
    // Labels [5 12 16 20] vs [4 7 12 16] are co-monotone.
    close(&c["label_label"]["pearson"], 99.25 / (122.75f64 * 84.75).sqrt());
    close(&c["label_label"]["spearman"], 1.0);
    close(&c["label_label"]["kendall"], 1.0);
    close(&c["score_label"]["depression"]["spearman"], 1.0);
    close(&c["score_label"]["anxiety"]["kendall"], 2.0 / 3.0);

    // The run manifest is a separate sibling file; the report itself stays
    // byte-comparable across reruns.
    assert!(dir.path().join("report.json.manifest.json").exists());
}

#[test]
fn pipeline_composes_from_synth_to_eval() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_cfg = dir.path().join("corpus.json");
    write(
        &corpus_cfg,
        r#"{"n_voices": 6, "recordings_per_voice": 1, "duration_range": [31.0, 33.0],
            "master_seed": 11, "split_ratios": [0.5, 0.25, 0.25]}"#,
    );
    let corpus = dir.path().join("corpus");
    let run = |args: &mut Command| {
        let out = args.output().unwrap();
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run(bin().arg("synth").arg("--config").arg(&corpus_cfg).arg("--out").arg(&corpus));
    assert!(corpus.join("manifest.jsonl").exists());
    assert!(corpus.join("run_manifest.json").exists());

    run(bin().arg("features").arg("--corpus").arg(&corpus));
    assert!(corpus.join("cache/run_manifest.json").exists());

    let train_cfg = dir.path().join("train.json");
    write(
        &train_cfg,
        &format!(
            r#"{{"stage": "lexical", "corpus": {:?}, "out_dir": {:?},
                "epochs": 2, "batch_voices": 4, "seed": 1,
                "model": {{"enc_dims": [8], "lora_rank": 2, "lex_dims": [8, 6],
                           "trunk_hidden": 8, "embed_dim": 6, "head_hidden": 6}}}}"#,
            corpus.display().to_string(),
            dir.path().join("lex").display().to_string(),
        ),
    );
    run(bin().arg("train").arg("--config").arg(&train_cfg));
    let ckpt = dir.path().join("lex/best.ckpt");
    assert!(ckpt.exists());

    let scores = dir.path().join("scores.jsonl");
    run(bin()
        .arg("score")
        .arg("--ckpt")
        .arg(&ckpt)
        .arg("--corpus")
        .arg(&corpus)
        .args(["--split", "all"])
        .arg("--out")
        .arg(&scores));

    // Score output feeds eval with no transformation.
    let report = dir.path().join("report.json");
    run(bin().arg("eval").arg("--scores").arg(&scores).arg("--out").arg(&report));
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed["n_rows"], 6);
}
