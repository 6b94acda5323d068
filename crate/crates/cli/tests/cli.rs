//! End-to-end checks of the `ilab` binary: each subcommand is driven the
//! way a user would drive it, against a real (tiny) training run.

use std::path::PathBuf;
use std::process::Command;

fn ilab() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ilab"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ilab_cli_{name}_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn tiny_er_args(out: &PathBuf) -> Vec<String> {
    [
        "--env", "er", "--designer", "metagrad", "--seed", "3",
        "--episodes", "30", "--eval-every", "10", "--eval-episodes", "4",
    ]
    .iter()
    .map(|s| s.to_string())
    .chain(["--out-dir".to_string(), out.display().to_string()])
    .collect()
}

#[test]
fn train_eval_plot_replay_round_trip() {
    let dir = scratch("round_trip");
    let out = ilab().arg("train").args(tiny_er_args(&dir)).output().unwrap();
    assert!(out.status.success(), "train failed: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("test_welfare"), "no final record in: {stdout}");

    let csv = dir.join("er_metrics.csv");
    let checkpoint = dir.join("er_checkpoint.json");
    assert!(csv.exists() && checkpoint.exists() && dir.join("er_welfare.svg").exists());

    let out = ilab()
        .args(["eval", "--env", "er", "--eval-episodes", "4", "--checkpoint"])
        .arg(&checkpoint)
        .output()
        .unwrap();
    assert!(out.status.success(), "eval failed: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("test_welfare"));

    let plots = scratch("round_trip_plots");
    let out = ilab()
        .args(["plot", "--stem", "again", "--metrics"])
        .arg(&csv)
        .arg("--out-dir")
        .arg(&plots)
        .output()
        .unwrap();
    assert!(out.status.success(), "plot failed: {}", String::from_utf8_lossy(&out.stderr));
    assert!(plots.join("again_welfare.svg").exists());

    let out = ilab()
        .args(["replay", "--env", "er", "--checkpoint"])
        .arg(&checkpoint)
        .args(["--replay-seed", "5"])
        .output()
        .unwrap();
    assert!(out.status.success(), "replay failed: {}", String::from_utf8_lossy(&out.stderr));
    let log = String::from_utf8_lossy(&out.stdout);
    assert!(log.contains("step 0:") && log.contains("episode welfare"), "unexpected replay log: {log}");

    let _ = std::fs::remove_dir_all(&dir);
    let _ = std::fs::remove_dir_all(&plots);
}

#[test]
fn search_reports_rounds_and_writes_the_best_configuration() {
    let dir = scratch("search");
    let out = ilab()
        .args([
            "search", "--env", "er", "--designer", "metagrad", "--seed", "1",
            "--eval-every", "10", "--eval-episodes", "4",
            "--dim", "er.agent_lr=log:1e-4:1e-2",
            "--batch", "4", "--round-episodes", "10", "--rounds", "2",
        ])
        .arg("--out-dir")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "search failed: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("round 0:") && stdout.contains("round 1:"), "rounds missing: {stdout}");
    assert!(dir.join("search_best.toml").exists());
    let best = std::fs::read_to_string(dir.join("search_best.toml")).unwrap();
    assert!(best.contains("agent_lr"), "searched knob missing from: {best}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn bad_flags_fail_with_a_helpful_message() {
    let out = ilab()
        .args(["train", "--env", "er", "--designer", "parliament"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("parliament"));

    let out = ilab()
        .args(["eval", "--env", "er", "--checkpoint", "/nonexistent/ckpt.json"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
