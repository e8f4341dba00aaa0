use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "data.train_worlds=2",
    "data.unseen_worlds=1",
    "data.train_episodes_per_world=4",
    "data.val_episodes_per_world=2",
    "data.world.n_viewpoints=8",
    "data.world.n_rooms=2",
    "data.world.n_objects=4",
    "data.world.f_view=6",
    "data.world.f_box=5",
    "encoder.dim=8",
    "encoder.heads=2",
    "encoder.ff_dim=8",
    "encoder.lang_layers=1",
    "encoder.vis_layers=1",
    "encoder.align_layers=1",
    "scene.samples=20",
    "scene.eval_samples=10",
    "scene.train.epochs=1",
    "object.image_samples=10",
    "object.viewpoint_samples=10",
    "object.eval_samples=10",
    "object.train.epochs=1",
    "agent.hidden=8",
    "agent.lang_dim=8",
    "agent.g_dim=8",
    "agent.g_hidden=8",
    "agent.heads=2",
    "agent.ff_dim=8",
    "agent.tile=2",
    "agent.max_steps=4",
    "train.iterations=2",
    "train.batch_size=2",
    "train.eval_every=1",
    "train.eval_episodes=2",
];

fn reverie(args: &[&str], extra: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_reverie"));
    for s in extra {
        cmd.args(["--set", s]);
    }
    cmd.args(args).env("REVERIE_SEED", "3").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&reverie(&["frobnicate"], &[])), 1);
    assert_eq!(code(&reverie(&["gen-world"], &[])), 1);
    assert_eq!(code(&reverie(&["--help"], &[])), 0);
    assert_eq!(code(&reverie(&["gen-world", "--out", "x"], &["no_equals_sign"])), 1);
    assert_eq!(code(&reverie(&["--profile", "nope", "gen-world", "--out", "x"], &[])), 1);

    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_reverie"))
        .args(["gen-world", "--out", path(dir.path())])
        .env("REVERIE_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let out = reverie(&["pretrain-scene", "--data", path(&missing), "--out", path(&dir.path().join("o"))], TINY);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!out.stderr.is_empty());
}

#[test]
fn tiny_pipeline_writes_outputs_and_configs() {
    let dir = tempfile::tempdir().unwrap();
    let d = |s: &str| dir.path().join(s);
    let ok = |o: Output| assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    ok(reverie(&["gen-world", "--out", path(&d("data"))], TINY));
    let config = std::fs::read_to_string(d("data/config.toml")).unwrap();
    assert!(config.contains("seed = 3"), "{config}");
    assert!(config.contains("n_viewpoints = 8"));

    ok(reverie(&["pretrain-scene", "--data", path(&d("data")), "--out", path(&d("scene"))], TINY));
    ok(reverie(&["pretrain-object", "--data", path(&d("data")), "--out", path(&d("object"))], TINY));
    ok(reverie(
        &["train-agent", "--data", path(&d("data")), "--scene", path(&d("scene")), "--object", path(&d("object")), "--out", path(&d("agent"))],
        TINY,
    ));
    ok(reverie(&["evaluate", "--data", path(&d("data")), "--agent", path(&d("agent")), "--out", path(&d("eval"))], TINY));
    ok(reverie(
        &["ablate", "--data", path(&d("data")), "--scene", path(&d("scene")), "--object", path(&d("object")), "--out", path(&d("ablate")), "--kind", "pointer"],
        TINY,
    ));
    assert!(d("ablate/pointer/arm1.traces.jsonl").is_file());
    assert!(std::fs::read_to_string(d("ablate/comparison.txt")).unwrap().contains("none-proxy"));
    ok(reverie(&["trace-report", path(&d("eval/traces.jsonl")), "--out", path(&d("report")), "--boundaries", "5,10"], TINY));

    for sub in ["data", "scene", "object", "agent", "eval", "ablate", "report"] {
        assert!(d(sub).join("config.toml").is_file(), "{sub}/config.toml");
    }
    let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d("eval/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["episodes"], 4);
    let report = std::fs::read_to_string(d("report/report.txt")).unwrap();
    assert!(report.starts_with("4 episodes"), "{report}");
}

#[test]
fn diverging_training_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(code(&reverie(&["gen-world", "--out", path(&data)], TINY)), 0);
    let mut set = TINY.to_vec();
    set.extend(["train.lr=1e200", "train.iterations=3", "train.eval_every=0", "agent.encoder=\"simple-recurrent\"", "agent.pointer=\"none-proxy\""]);
    let out = reverie(&["train-agent", "--data", path(&data), "--out", path(&dir.path().join("agent"))], &set);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}
