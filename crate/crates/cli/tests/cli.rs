use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &[&str] = &[
    "--epochs=1",
    "--steps_per_iteration=10",
    "--min_iterations=2",
    "--batch_size=16",
    "--task.train_samples=160",
    "--task.val_samples=32",
    "--model.blocks=1",
    "--model.hidden=16",
    "--model.seq_len=2",
    "--model.input_dim=4",
    "--pretrain.epochs=1",
    "--pretrain.train_samples=160",
];

fn nxm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nxm"))
        .args(args)
        .output()
        .unwrap()
}

fn ok_json(out: Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn with_small<'a>(head: &[&'a str], dir: &'a str) -> Vec<String> {
    let mut args: Vec<String> = head.iter().map(|s| s.to_string()).collect();
    args.extend(SMALL.iter().map(|s| s.to_string()));
    args.push(format!("--output_dir={dir}"));
    args
}

fn run(args: &[String]) -> Output {
    nxm(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn pretrain_then_finetune_then_analyze() {
    let tmp = tempfile::tempdir().unwrap();
    let pre_dir = tmp.path().join("pre");
    let pre = ok_json(run(&with_small(&["pretrain"], pre_dir.to_str().unwrap())));
    let ckpt = pre["checkpoint"].as_str().unwrap().to_string();
    assert!(Path::new(&ckpt).exists());

    let run_dir = tmp.path().join("run");
    let mut args = with_small(&["finetune"], run_dir.to_str().unwrap());
    args.push(format!("--checkpoint={ckpt}"));
    args.push("--rho".into());
    args.push("0.05".into());
    let summary = ok_json(run(&args));
    assert_eq!(summary["method"], "admm-nxm");
    assert_eq!(summary["rho"], 0.05);
    assert_eq!(summary["compliant"], true);

    let analysis = ok_json(nxm(&["analyze", run_dir.to_str().unwrap()]));
    assert_eq!(analysis["iterations"], 2);

    let out_dir = tmp.path().join("packed");
    let mut args = vec![
        "export".to_string(),
        format!("--weights={}", run_dir.join("final.nxmw").display()),
        format!("--out={}", out_dir.display()),
    ];
    args.extend(SMALL.iter().map(|s| s.to_string()));
    let written = ok_json(run(&args));
    assert_eq!(written.as_array().unwrap().len(), 6);
    assert_eq!(fs::read_dir(&out_dir).unwrap().count(), 6);
}

#[test]
fn config_file_and_overrides_combine() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"method": "asp", "lr": 0.002}"#).unwrap();
    let dir = tmp.path().join("asp");
    let mut args = vec![
        "finetune".to_string(),
        "--config".into(),
        cfg.display().to_string(),
    ];
    args.extend(SMALL.iter().map(|s| s.to_string()));
    args.push(format!("--output_dir={}", dir.display()));
    let summary = ok_json(run(&args));
    assert_eq!(summary["method"], "asp");
    assert_eq!(summary["lr"], 0.002);
    assert_eq!(summary["rho"], Value::Null);
}

#[test]
fn invalid_configurations_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("bad");
    for extra in [
        &["--method=asp", "--rho=0.01"][..],
        &["--no_such_field=1"],
        &["positional"],
    ] {
        let mut args = with_small(&["finetune"], dir.to_str().unwrap());
        args.extend(extra.iter().map(|s| s.to_string()));
        let out = run(&args);
        assert!(!out.status.success(), "{extra:?} was accepted");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn sweep_prints_one_row_per_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("grid");
    let mut args = vec![
        "sweep".to_string(),
        "--rho=[0.001,0.01]".into(),
        "--seed=[0,1]".into(),
    ];
    args.extend(SMALL.iter().map(|s| format!("--base.{}", &s[2..])));
    args.push(format!("--base.output_dir={}", dir.display()));
    let out = run(&args);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = String::from_utf8(out.stdout).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert_eq!(table.lines().filter(|l| l.contains(",ok,")).count(), 4);
    assert!(dir.join("sweep.csv").exists());
}
