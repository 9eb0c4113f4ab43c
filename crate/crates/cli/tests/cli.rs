use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lungsound::cotuning::Mode;
use lungsound::synth::{pretrain_source, smoke_config, write_corpus, SmokeOptions, SynthSpec};

fn lungsound(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lungsound")).args(args).output().expect("binary runs")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

/// A small corpus, a source checkpoint and a one-mode config.
fn setup(dir: &Path) -> PathBuf {
    let spec = SynthSpec { n_patients: 10, clips_per_patient: 4, ..SynthSpec::default() };
    let manifest = write_corpus(&dir.join("data"), &spec).unwrap();
    let source = dir.join("source.safetensors");
    pretrain_source(&source, 6, 1, 3).unwrap();
    let mut cfg = smoke_config(dir, &manifest, &source, &SmokeOptions::default());
    cfg.train.epochs = 1;
    cfg.grid.modes = vec![Mode::Vanilla, Mode::Cotuning];
    let path = dir.join("exp.toml");
    std::fs::write(&path, cfg.to_toml()).unwrap();
    path
}

#[test]
fn verbs_run_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let c = config.to_str().unwrap();
    let runs = dir.path().join("runs");

    let o = lungsound(&["ingest", "--config", c]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(runs.join("manifest.csv").exists());

    let o = lungsound(&["calibrate-spectrum", "--config", c]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(runs.join("calibration/fold0.json").exists());

    let o = lungsound(&["features", "--config", c]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(runs.join("features/fold0.csv").exists());

    let o = lungsound(&["train", "--config", c]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(!runs.join("results.csv").exists());

    let o = lungsound(&["evaluate", "--config", c]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(text(&o).contains("2 new result rows"));
    // a second evaluation finds nothing left to do
    let o = lungsound(&["evaluate", "--config", c]);
    assert!(text(&o).contains("0 new result rows"), "{}", text(&o));

    let o = lungsound(&["plot", "--config", c]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(runs.join("plots/alsc2_score.svg").exists());

    let ck = walk(&runs.join("checkpoints")).into_iter().find(|p| p.extension().is_some_and(|e| e == "safetensors")).unwrap();
    let out = dir.path().join("emb.csv");
    let o = lungsound(&["export-embeddings", "--config", c, "--checkpoint", ck.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert!(csv.starts_with("unit,label,e0"));
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn exit_codes_follow_error_class() {
    let dir = tempfile::tempdir().unwrap();
    let config = setup(dir.path());
    let c = config.to_str().unwrap();

    let o = lungsound(&["ingest", "--config", c, "--set", "task=\"bogus\""]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));

    let bad = dir.path().join("missing.toml");
    std::fs::write(&bad, "task = \"alsc2\"\n[data]\nkind = \"manifest\"\npath = \"nowhere.csv\"\n").unwrap();
    let o = lungsound(&["ingest", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", text(&o));

    let o = lungsound(&["train", "--config", c, "--set", "train.lr_backbone=1e300", "--set", "train.lr_heads=1e300"]);
    assert_eq!(o.status.code(), Some(4), "{}", text(&o));
}
