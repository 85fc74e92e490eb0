use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"{
  "simulation": {"matrix": 16, "coils": 3, "frames": 6},
  "grid": {"num_layers": [1, 2], "filter_size": [3], "num_filters": [4], "penultimate_filters": [4],
           "batch_norm": [true], "dropout": [false], "split_slice": [false, true]},
  "training": {"budget": {"max_epochs": 4, "max_seconds": null}},
  "seeds": [1, 2],
  "held_out_frames": 3
}"#;

fn raki(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_raki"));
    cmd.current_dir(dir).args(args).env_remove("RAKI_WORKERS").env_remove("RAKI_OUT_DIR");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn raki")
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("cfg.json"), CONFIG).unwrap();
    dir
}

#[test]
fn simulate_train_eval() {
    let dir = setup();
    let d = dir.path();
    ok(raki(d, &["simulate", "-c", "cfg.json", "--seed", "4", "--out", "ds.rsms"], &[]));
    assert!(d.join("ds.rsms").exists());

    let trained = ok(raki(
        d,
        &["train", "-c", "cfg.json", "--dataset", "ds.rsms", "--layers", "2", "--filter-size", "3", "--filters", "4",
          "--penultimate", "4", "--split-slice", "--epochs", "3", "--model", "net"],
        &[],
    ));
    assert!(trained.contains("trained 6 networks"), "{trained}");
    assert!(d.join("net/model.json").exists());
    assert!(d.join("net/net_s1_c2.rakinet").exists());

    ok(raki(d, &["eval", "-c", "cfg.json", "--dataset", "ds.rsms", "--model", "net", "--out-dir", "ev"], &[]));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("ev/eval.json")).unwrap()).unwrap();
    assert_eq!(report["frames"].as_array().unwrap().len(), 3);
    assert!(report["mean_l1"].as_f64().unwrap() > 0.0);
    let pgm = std::fs::read(d.join("ev/error_s1.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
    assert_eq!(std::fs::read(d.join("ev/error_s1.f64")).unwrap().len(), 16 * 16 * 8);

    ok(raki(
        d,
        &["train", "-c", "cfg.json", "--dataset", "ds.rsms", "--method", "slice-grappa", "--kernel", "3", "--model", "g"],
        &[],
    ));
    assert!(d.join("g/kernel_s0_c0.grappa").exists());
    ok(raki(d, &["eval", "-c", "cfg.json", "--dataset", "ds.rsms", "--model", "g", "--out-dir", "evg"], &[]));
    assert!(d.join("evg/eval.json").exists());
}

#[test]
fn grid_records_do_not_depend_on_workers() {
    let dir = setup();
    let d = dir.path();
    ok(raki(d, &["grid", "-c", "cfg.json", "--out-dir", "w1"], &[("RAKI_WORKERS", "1")]));
    // the flag wins over the environment
    ok(raki(d, &["grid", "-c", "cfg.json", "--out-dir", "w8", "--workers", "8"], &[("RAKI_WORKERS", "1")]));
    let a = std::fs::read(d.join("w1/records.csv")).unwrap();
    let b = std::fs::read(d.join("w8/records.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 1 + 2 * 4);
    assert!(d.join("w8/summary.json").exists());
    assert!(d.join("w8/timing.csv").exists());

    std::fs::remove_file(d.join("w1/summary.json")).unwrap();
    let printed = ok(raki(d, &["report", "--top", "2"], &[("RAKI_OUT_DIR", "w1")]));
    assert!(printed.contains("8 records, 2 seeds"), "{printed}");
    let fresh = std::fs::read(d.join("w1/summary.json")).unwrap();
    assert_eq!(fresh, std::fs::read(d.join("w8/summary.json")).unwrap());
}

#[test]
fn out_dir_flag_beats_environment() {
    let dir = setup();
    let d = dir.path();
    ok(raki(d, &["simulate", "-c", "cfg.json"], &[("RAKI_OUT_DIR", "env")]));
    assert!(d.join("env/dataset_seed1.rsms").exists());
    ok(raki(d, &["simulate", "-c", "cfg.json", "--out-dir", "flag"], &[("RAKI_OUT_DIR", "env")]));
    assert!(d.join("flag/dataset_seed1.rsms").exists());
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(d.join("bad.json"), r#"{"grid": {"num_layers": [1], "layers": [2]}}"#).unwrap();
    let out = raki(d, &["grid", "-c", "bad.json"], &[]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("unknown field `layers`"), "{err}");
    assert_eq!(err.matches("invalid configuration").count(), 1, "{err}");

    let out = raki(d, &["eval", "--dataset", "missing.rsms", "--model", "none"], &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.rsms"));

    let out = raki(d, &["simulate", "--workers", "many"], &[]);
    assert!(!out.status.success());
}
