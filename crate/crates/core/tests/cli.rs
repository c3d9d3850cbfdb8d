use std::fs;
use std::path::Path;

use imvc::cli::main_with_args;

const TINY: &str = r#"{"latent_dim":6,"sub_dim":3,"lambda1":1.0,"lambda2":1.0,"use_recon":true,
"contrast_target":"sub","cross_view_negatives":false,"predictor_grad_to_encoders":true,
"encoder_hidden":[12],"lr":0.005,"epochs_pretrain":15,"epochs_joint":15,"batch":null,"seed":0}"#;

fn imvc(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("imvc").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a small synthetic dataset and the tiny config into `dir`.
fn setup(dir: &Path) {
    assert_eq!(
        imvc(&["--out", s(dir), "--seed", "4", "synth", "--n", "60"]),
        0
    );
    fs::write(dir.join("tiny.json"), TINY).unwrap();
}

#[test]
fn synth_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert_eq!(
            imvc(&[
                "--out",
                s(d.path()),
                "--seed",
                "9",
                "synth",
                "--n",
                "40",
                "--k",
                "2"
            ]),
            0
        );
    }
    for f in ["synth.view0.csv", "synth.view1.csv", "synth.labels.csv"] {
        let x = fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn bad_arguments_exit_2() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(imvc(&["--out", s(d.path()), "frobnicate"]), 2);
    assert_eq!(
        imvc(&["--out", s(d.path()), "synth", "--n", "3", "--k", "3"]),
        2
    );
    assert_eq!(
        imvc(&["--out", s(d.path()), "mask", "--n", "10", "--eta", "1.0"]),
        2
    );
}

#[test]
fn run_rejects_eta_one_before_any_work() {
    let d = tempfile::tempdir().unwrap();
    setup(d.path());
    let out = d.path().join("out");
    let data = d.path().join("synth");
    let code = imvc(&[
        "--out",
        s(&out),
        "run",
        "--data",
        s(&data),
        "--eta",
        "0.5,1.0",
    ]);
    assert_eq!(code, 2);
    assert!(!out.join("results.csv").exists());
    assert!(!out.join("runs").exists());
}

#[test]
fn run_writes_table_and_artifacts_idempotently() {
    let d = tempfile::tempdir().unwrap();
    setup(d.path());
    let data = d.path().join("synth");
    let cfg = d.path().join("tiny.json");
    let mut tables = Vec::new();
    for name in ["a", "b"] {
        let out = d.path().join(name);
        let code = imvc(&[
            "--config",
            s(&cfg),
            "--out",
            s(&out),
            "--seed",
            "1",
            "run",
            "--data",
            s(&data),
            "--eta",
            "0.5",
        ]);
        assert_eq!(code, 0);
        tables.push(fs::read_to_string(out.join("results.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
    let lines: Vec<&str> = tables[0].lines().collect();
    assert_eq!(lines[0], "mode,eta,seeds,failed,acc,nmi,ari,status");
    assert_eq!(lines.len(), 2);
    assert!(
        lines[1].starts_with("full,0.50,1,0,") && lines[1].ends_with(",ok"),
        "{}",
        lines[1]
    );

    let cell = d.path().join("a/runs/full/eta0.50_seed1");
    for f in [
        "config.json",
        "mask.csv",
        "trace.csv",
        "checkpoint.bin",
        "checkpoint.json",
        "result.json",
        "labels.csv",
    ] {
        assert!(cell.join(f).is_file(), "{f}");
    }
    assert!(cell.join("embeddings/latents.csv").is_file());
    for f in [
        "result.json",
        "trace.csv",
        "labels.csv",
        "embeddings/fused.csv",
    ] {
        let x = fs::read(cell.join(f)).unwrap();
        assert_eq!(
            x,
            fs::read(d.path().join("b/runs/full/eta0.50_seed1").join(f)).unwrap(),
            "{f}"
        );
    }

    assert_eq!(imvc(&["diagnose", s(&cell)]), 0);
    for f in ["spectrum_sub.csv", "spectrum_full.csv", "summary.json"] {
        assert!(cell.join("diagnostics").join(f).is_file(), "{f}");
    }

    assert_eq!(
        imvc(&["export-embeddings", s(&cell), "--data", s(&data)]),
        0
    );
    for f in [
        "latents.csv",
        "fused.csv",
        "decoded_view0.csv",
        "decoded_view1.csv",
    ] {
        assert!(cell.join("embeddings").join(f).is_file(), "{f}");
    }
}

#[test]
fn grid_emits_one_surface_row_per_cell() {
    let d = tempfile::tempdir().unwrap();
    setup(d.path());
    let out = d.path().join("out");
    let code = imvc(&[
        "--config",
        s(&d.path().join("tiny.json")),
        "--out",
        s(&out),
        "run",
        "--data",
        s(&d.path().join("synth")),
        "--eta",
        "0.3",
        "--grid",
        "0,1x0.5",
    ]);
    assert_eq!(code, 0);
    let grid = fs::read_to_string(out.join("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 3);
    assert!(grid.starts_with("eta,lambda1,lambda2,acc,nmi\n0.30,0,0.5,"));
}

#[test]
fn ablate_emits_both_tables() {
    let d = tempfile::tempdir().unwrap();
    setup(d.path());
    let out = d.path().join("out");
    let code = imvc(&[
        "--config",
        s(&d.path().join("tiny.json")),
        "--out",
        s(&out),
        "ablate",
        "--data",
        s(&d.path().join("synth")),
    ]);
    assert_eq!(code, 0);
    let loss = fs::read_to_string(out.join("ablation_loss.csv")).unwrap();
    let rep = fs::read_to_string(out.join("ablation_representation.csv")).unwrap();
    assert_eq!(loss.lines().count(), 8);
    assert_eq!(rep.lines().count(), 4);
    assert!(loss.lines().any(|l| l.starts_with("full,0.50,")));
}

#[test]
fn diagnose_missing_run_is_an_error() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(imvc(&["diagnose", s(&d.path().join("nope"))]), 2);
}
