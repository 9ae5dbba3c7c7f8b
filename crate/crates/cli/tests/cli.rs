use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn partsmith(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_partsmith"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("ASSEMBLY_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

const TINY: &str = "dataset = data
grid = 16
patch = 4
patch_width = 4
point_hidden = 8
feature = 8
image_width = 8
mask_width = 8
mask_decoder_hidden = 16
pose_hidden = 16
seg_epochs = 1
epochs = 2
batch = 4
";

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = partsmith(
        dir.path(),
        &["gen-data", "--template", "table,chair", "--count", "8", "--seed", "5", "--points-per-part", "24", "--grid", "16", "--out", "data"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
    dir
}

#[test]
fn train_eval_export_and_rerun() {
    let dir = setup();
    let d = dir.path();
    for run in ["run_a", "run_b"] {
        let out = partsmith(d, &["train", "--config", "tiny.cfg", "--set", &format!("out={run}")]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        for file in ["config.txt", "seg.ckpt", "pose.ckpt", "seg_curve.csv", "pose_curve.csv"] {
            assert!(d.join(run).join(file).exists(), "{run}/{file}");
        }
        assert_eq!(code(&partsmith(d, &["eval", "--run", run])), 0);
    }
    let a = fs::read(d.join("run_a/metrics_test.csv")).unwrap();
    assert_eq!(a, fs::read(d.join("run_b/metrics_test.csv")).unwrap());
    let mut reader = csv::Reader::from_reader(a.as_slice());
    let methods: Vec<String> = reader.records().map(|r| r.unwrap()[0].to_string()).collect();
    assert!(methods.contains(&"model".to_string()) && methods.contains(&"random".to_string()));

    // Retraining from the saved config reproduces the checkpoint bit for bit.
    let out = partsmith(d, &["train", "--config", "run_a/config.txt", "--set", "out=run_c"]);
    assert_eq!(code(&out), 0);
    assert_eq!(fs::read(d.join("run_a/pose.ckpt")).unwrap(), fs::read(d.join("run_c/pose.ckpt")).unwrap());

    let first = fs::read_to_string(d.join("data/records.jsonl")).unwrap();
    let id = first.split("\"id\":\"").nth(1).unwrap().split('"').next().unwrap().to_string();
    let out = partsmith(d, &["export", "--run", "run_a", "--shape", &id, "--out", "points"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let files = fs::read_dir(d.join("points")).unwrap().count();
    let parts = fs::read_dir(d.join(format!("data/blobs/{id}"))).unwrap().filter(|e| {
        e.as_ref().unwrap().file_name().to_string_lossy().starts_with("mask")
    }).count();
    assert_eq!(files, parts + 2);
}

#[test]
fn seg_ablation_skips_segmentation_checkpoint() {
    let dir = setup();
    let out = partsmith(dir.path(), &["train", "--config", "tiny.cfg", "--ablate", "seg", "--set", "out=noseg"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("noseg/seg.ckpt").exists());
    assert!(fs::read_to_string(dir.path().join("noseg/config.txt")).unwrap().contains("ablate = seg"));
}

#[test]
fn seed_comes_from_the_environment() {
    let dir = setup();
    let out = Command::new(env!("CARGO_BIN_EXE_partsmith"))
        .args(["train", "--config", "tiny.cfg", "--set", "out=seeded", "--set", "epochs=1"])
        .current_dir(dir.path())
        .env("RUST_LOG", "warn")
        .env("ASSEMBLY_SEED", "42")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert!(fs::read_to_string(dir.path().join("seeded/config.txt")).unwrap().contains("seed = 42"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&partsmith(d, &["train", "--set", "dataset=nowhere"])), 1);
    assert_eq!(code(&partsmith(d, &["frobnicate"])), 1);
    assert_eq!(code(&partsmith(d, &["train", "--set", "wings=2"])), 1);
    assert_eq!(code(&partsmith(d, &["oracle-check", "--trials", "5"])), 0);
    let faulty = partsmith(d, &["gradcheck", "--instances", "3", "--inject-fault", "flip-norm-grad"]);
    assert_eq!(code(&faulty), 2);
    assert!(String::from_utf8_lossy(&faulty.stdout).contains("FAIL grad/translation_loss"));
}

#[test]
fn diverging_training_exits_3() {
    let dir = setup();
    let out = partsmith(dir.path(), &["train", "--config", "tiny.cfg", "--set", "lr=1e300", "--set", "out=boom"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}
